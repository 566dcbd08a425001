"""
通用日志模块
提供统一的日志记录功能，控制台输出到 stderr（stdout 留给 JSON 报告），可选文件输出
"""
import logging
import sys
from pathlib import Path
from typing import Dict, Optional


APP_LOGGER_NAME = "rvpatch"


class ColoredFormatter(logging.Formatter):
    """带颜色的日志格式化器（仅用于控制台）"""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
        'RESET': '\033[0m'
    }

    def format(self, record):
        levelname = record.levelname
        if levelname in self.COLORS:
            record.levelname = f"{self.COLORS[levelname]}{levelname}{self.COLORS['RESET']}"
        try:
            return super().format(record)
        finally:
            record.levelname = levelname


class Logger:
    """
    日志管理器类

    组件日志器都挂在 rvpatch 之下（如 rvpatch.Planner），
    handler 只配置在根应用日志器上，子日志器通过传播输出
    """

    _instances: Dict[str, 'Logger'] = {}

    def __init__(self, name: str = APP_LOGGER_NAME,
                 level: Optional[int] = None,
                 log_file: Optional[str] = None,
                 enable_console: bool = False,
                 enable_color: bool = True):
        """
        参数:
            name: 日志器名称；非应用名会自动挂到 rvpatch 下
            level: 日志级别，None 表示继承父日志器
            log_file: 日志文件路径，None 则不写文件
            enable_console: 是否添加控制台 handler（只有应用日志器需要）
            enable_color: 控制台是否彩色
        """
        if name != APP_LOGGER_NAME and not name.startswith(APP_LOGGER_NAME + "."):
            name = f"{APP_LOGGER_NAME}.{name}"
        self.name = name
        self.logger = logging.getLogger(name)
        if level is not None:
            self.logger.setLevel(level)

        if not (enable_console or log_file) or self.logger.handlers:
            return

        console_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        file_format = '%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s'
        date_format = '%Y-%m-%d %H:%M:%S'

        if enable_console:
            console_handler = logging.StreamHandler(sys.stderr)
            if enable_color and sys.stderr.isatty():
                console_handler.setFormatter(ColoredFormatter(console_format, date_format))
            else:
                console_handler.setFormatter(logging.Formatter(console_format, date_format))
            self.logger.addHandler(console_handler)

        if log_file:
            log_path = Path(log_file)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file, encoding='utf-8')
            file_handler.setFormatter(logging.Formatter(file_format, date_format))
            self.logger.addHandler(file_handler)

    def debug(self, message: str, *args, **kwargs):
        self.logger.debug(message, *args, **kwargs)

    def info(self, message: str, *args, **kwargs):
        self.logger.info(message, *args, **kwargs)

    def warning(self, message: str, *args, **kwargs):
        self.logger.warning(message, *args, **kwargs)

    def error(self, message: str, *args, **kwargs):
        self.logger.error(message, *args, **kwargs)

    def exception(self, message: str, *args, **kwargs):
        """记录异常信息（包含堆栈跟踪）"""
        self.logger.exception(message, *args, **kwargs)

    def set_level(self, level: int):
        """动态设置日志级别"""
        self.logger.setLevel(level)
        for handler in self.logger.handlers:
            handler.setLevel(level)

    def is_debug(self) -> bool:
        return self.logger.isEnabledFor(logging.DEBUG)

    @classmethod
    def get_logger(cls, name: str = APP_LOGGER_NAME, **kwargs) -> 'Logger':
        """
        获取日志器实例（单例模式）

        参数:
            name: 组件名称，例如 "Planner"
            **kwargs: 首次创建时的初始化参数

        返回:
            Logger 实例
        """
        if name not in cls._instances:
            cls._instances[name] = cls(name, **kwargs)
        return cls._instances[name]


def setup_default_logger(level: int = logging.INFO,
                         log_file: Optional[str] = None,
                         enable_color: bool = True) -> Logger:
    """
    设置应用日志器（控制台 + 可选文件）

    参数:
        level: 日志级别
        log_file: 日志文件路径
        enable_color: 是否启用彩色输出

    返回:
        Logger 实例
    """
    app = Logger.get_logger(
        APP_LOGGER_NAME,
        level=level,
        log_file=log_file,
        enable_console=True,
        enable_color=enable_color
    )
    app.set_level(level)
    return app


DEBUG = logging.DEBUG
INFO = logging.INFO
WARNING = logging.WARNING
ERROR = logging.ERROR
CRITICAL = logging.CRITICAL
