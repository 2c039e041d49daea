import logging
import os
import sys
from logging import StreamHandler, Formatter, Logger as _LoggerClass
from logging.handlers import RotatingFileHandler
from typing import Optional, TextIO
from unittest import TestCase


class Logger:
    """
    全局 Logger 单例，控制台输出到 stderr（可选彩色），可选滚动文件。

    stdout 只留给命令行的正式输出（例如 --constants 常数表），
    所有运行日志都走 stderr 或日志文件。

    使用示例：
        Logger.init(level=logging.DEBUG, colored=True)
        logging.info('开始演化')
    """
    _instance: _LoggerClass = None
    _configured: bool = False

    # 日志格式，包含毫秒、文件行号、函数名、线程名（求积与平流会使用线程池）
    BASE_FMT = (
        "%(asctime)s.%(msecs)03d %(levelname)-8s [%(filename)s:%(lineno)d %(funcName)s] "
        "[%(threadName)s] %(message)s"
    )
    DATE_FMT = "%Y-%m-%d %H:%M:%S"
    LOG_COLORS = {
        'DEBUG': 'cyan',
        'INFO': 'green',
        'WARNING': 'yellow',
        'ERROR': 'red',
        'CRITICAL': 'bold_red'
    }

    def __new__(cls, *args, **kwargs):
        # 始终返回同一个实例
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    @classmethod
    def init(
            cls,
            level: Optional[int] = None,
            log_file: Optional[str] = None,
            max_bytes: int = 10_000_000,
            backup_count: int = 5,
            console: bool = True,
            colored: bool = False,
            stream: Optional[TextIO] = None,
            force: bool = False
    ) -> None:
        """
        初始化全局 logger，只执行一次（除非 force=True 强制重置）。

        参数：
        - level: 日志级别，优先级高于环境变量 WGT_LOG_LEVEL / DEBUG
        - log_file: 日志文件路径，None 或 '' 表示不写文件
        - max_bytes, backup_count: 滚动文件配置
        - console: 是否输出到控制台
        - colored: 控制台输出是否启用彩色（依赖 colorlog）
        - stream: 控制台流，默认 sys.stderr
        - force: 是否强制重新配置
        """
        if cls._configured and not force:
            return

        effective_level = cls.resolve_level(level)
        logger = logging.getLogger()
        if force:
            for handler in list(logger.handlers):
                logger.removeHandler(handler)
                handler.close()
        logger.setLevel(effective_level)

        if console:
            handler = StreamHandler(stream or sys.stderr)
            handler.setLevel(effective_level)
            handler.setFormatter(cls._console_formatter(colored))
            logger.addHandler(handler)

        if log_file:
            os.makedirs(os.path.dirname(os.path.abspath(log_file)) or '.', exist_ok=True)
            file_handler = RotatingFileHandler(
                log_file,
                maxBytes=max_bytes,
                backupCount=backup_count,
                encoding='utf-8'
            )
            file_handler.setLevel(effective_level)
            file_handler.setFormatter(Formatter(cls.BASE_FMT, datefmt=cls.DATE_FMT))
            logger.addHandler(file_handler)

        cls._configured = True
        cls._instance = logger

    @staticmethod
    def resolve_level(level: Optional[int | str] = None) -> int:
        """显式参数 > WGT_LOG_LEVEL > DEBUG 环境变量 > INFO"""
        if isinstance(level, int):
            return level
        name = level or os.getenv('WGT_LOG_LEVEL') or ('DEBUG' if os.getenv('DEBUG') else 'INFO')
        return getattr(logging, str(name).upper(), logging.INFO)

    @classmethod
    def _console_formatter(cls, colored: bool) -> Formatter:
        if colored:
            try:
                from colorlog import ColoredFormatter
                return ColoredFormatter("%(log_color)s" + cls.BASE_FMT, datefmt=cls.DATE_FMT,
                                        log_colors=cls.LOG_COLORS)
            except ImportError:
                pass
        return Formatter(cls.BASE_FMT, datefmt=cls.DATE_FMT)

    @classmethod
    def get(cls) -> _LoggerClass:
        """获取已初始化的全局 Logger 实例"""
        if cls._instance is None or not cls._configured:
            raise RuntimeError("Logger 尚未初始化，请先调用 Logger.init()")
        return cls._instance


class TestLogger(TestCase):

    def tearDown(self):
        Logger.init(level=logging.WARNING, console=False, force=True)

    def test_resolve_level(self):
        self.assertEqual(Logger.resolve_level(logging.DEBUG), logging.DEBUG)
        self.assertEqual(Logger.resolve_level("warning"), logging.WARNING)
        self.assertEqual(Logger.resolve_level("no-such-level"), logging.INFO)

    def test_file_handler(self):
        import tempfile
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "logs", "wgt.log")
            Logger.init(level=logging.INFO, log_file=path, console=False, force=True)
            logging.info("写入日志文件")
            for handler in Logger.get().handlers:
                handler.flush()
            with open(path, encoding="utf-8") as f:
                self.assertIn("写入日志文件", f.read())
            Logger.init(level=logging.WARNING, console=False, force=True)
