from pathlib import Path
from typing import Any, Union, Optional
from unittest import TestCase

import numpy as np
import yaml


def to_builtin(data: Any) -> Any:
    """把 numpy 标量/数组、元组、Path 转成 safe_dump 能写出的内置类型"""
    if isinstance(data, dict):
        return {str(k): to_builtin(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_builtin(v) for v in data]
    if isinstance(data, np.ndarray):
        return to_builtin(data.tolist())
    if isinstance(data, np.generic):
        return data.item()
    if isinstance(data, Path):
        return str(data)
    return data


class YamlHandler:
    """
    YAML 文件读写工具类
    功能：
    1. 读取YAML文件（SafeLoader）
    2. 写入YAML文件（元数据 sidecar、场景文件）
    3. 自动创建父目录
    """

    @staticmethod
    def _read_yaml(file_path: Union[str, Path],
                   default: Optional[Any] = None,
                   encoding: str = 'utf-8') -> Any:
        """
        读取YAML文件内容
        :param file_path: 文件路径（字符串或Path对象）
        :param default: 当文件不存在时返回的默认值
        :param encoding: 文件编码
        :return: 解析后的Python对象
        """
        path = Path(file_path)
        try:
            with path.open('r', encoding=encoding) as f:
                return yaml.safe_load(f)
        except FileNotFoundError:
            if default is not None:
                return default
            raise
        except yaml.YAMLError as e:
            raise ValueError(f"YAML解析错误: {e}") from e

    @staticmethod
    def write_yaml(data: Any,
                   file_path: Union[str, Path],
                   encoding: str = 'utf-8',
                   block_style: bool = True) -> None:
        """
        将数据写入YAML文件
        :param data: 要写入的Python对象，numpy 类型会先转换
        :param file_path: 文件路径（字符串或Path对象）
        :param encoding: 文件编码
        :param block_style: 是否使用块样式格式化
        """
        path = Path(file_path)
        # 自动创建父目录
        path.parent.mkdir(parents=True, exist_ok=True)

        yaml_args = {
            'allow_unicode': True,
            'sort_keys': False
        }

        if block_style:
            yaml_args['default_flow_style'] = False

        try:
            with path.open('w', encoding=encoding) as f:
                yaml.safe_dump(to_builtin(data), f, **yaml_args)
        except yaml.YAMLError as e:
            raise ValueError(f"YAML序列化错误: {e}") from e

    @staticmethod
    def safe_read_yaml(file_path: Union[str, Path],
                       encoding: str = 'utf-8') -> Any:
        """
        安全读取YAML文件（使用SafeLoader）
        :param file_path: 文件路径（字符串或Path对象）
        :param encoding: 文件编码
        :return: 解析后的Python对象
        """
        return YamlHandler._read_yaml(file_path, encoding=encoding)


class TestYamlHandler(TestCase):

    def test_numpy_values_round_trip(self):
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "meta" / "run.meta.yaml"
            YamlHandler.write_yaml({"gamma": np.float64(75.4), "bias": (0, 0, 1), "grid": np.arange(3)}, path)
            loaded = YamlHandler.safe_read_yaml(path)
            self.assertEqual(loaded, {"gamma": 75.4, "bias": [0, 0, 1], "grid": [0, 1, 2]})

    def test_parse_error(self):
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.yaml"
            path.write_text("rates: [1, 2\n", encoding="utf-8")
            with self.assertRaises(ValueError):
                YamlHandler.safe_read_yaml(path)
