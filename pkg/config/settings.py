import copy
import logging
import os
from pathlib import Path
from typing import Dict, Any
from unittest import TestCase

from utils.yaml_util import YamlHandler


class Settings:
    # 项目根目录路径配置
    BASE_DIR = Path(__file__).parent.parent
    CONFIG_FILE = BASE_DIR / "conf/config.yaml"
    # 默认输出目录（figures 子命令写到 OUTPUT_DIR/figures/）
    OUTPUT_DIR = BASE_DIR / "output"

    # 子命令（conf/config.yaml 中各有一个默认参数段）
    SUBCOMMANDS = ("rates", "correlation", "decohere", "evolve")

    # 线程池大小，可用 WGT_WORKERS 覆盖
    WORKERS = int(os.getenv("WGT_WORKERS", min(8, os.cpu_count() or 1)))

    def __init__(self):
        """初始化配置"""
        self.config = self._load_config()

    @classmethod
    def _load_config(cls) -> Dict[str, Any]:
        """加载YAML配置文件"""
        if not cls.CONFIG_FILE.exists():
            raise FileNotFoundError(f"配置文件 {cls.CONFIG_FILE} 不存在")
        logging.debug(f"加载配置文件: {cls.CONFIG_FILE}")
        return YamlHandler.safe_read_yaml(cls.CONFIG_FILE)

    def defaults(self, section: str) -> Dict[str, Any]:
        """某个子命令的默认参数（深拷贝，调用方可以随意修改）"""
        if section not in self.config:
            raise KeyError(f"配置文件缺少 {section} 段")
        return copy.deepcopy(self.config[section])


class TestSettings(TestCase):

    def test_workers(self):
        """测试线程池大小"""
        self.assertGreaterEqual(Settings.WORKERS, 1)

    def test_conf(self):
        """测试配置文件加载"""
        settings = Settings()
        _conf = settings.config
        self.assertIsInstance(_conf, dict)
        for name in Settings.SUBCOMMANDS:
            self.assertIsInstance(_conf.get(name), dict)
        self.assertEqual(_conf["rates"]["geometry"], "halfspace")
        self.assertEqual(_conf["evolve"]["initial"]["sigma_p"], 0.1)
        self.assertEqual(sorted(_conf["figures"]), [f"fig{i}" for i in range(1, 8)])

    def test_defaults_are_copies(self):
        settings = Settings()
        section = settings.defaults("evolve")
        section["grid"]["n_x"] = 3
        self.assertNotEqual(settings.config["evolve"]["grid"]["n_x"], 3)
