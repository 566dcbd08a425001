"""
核心模块
包含日志系统、配置加载和异常定义
"""

from .logger import Logger, setup_default_logger, DEBUG, INFO, WARNING, ERROR, CRITICAL
from .errors import RvPatchError, ConfigError
from .settings import Settings, load_settings

__all__ = [
    'Logger',
    'setup_default_logger',
    'DEBUG',
    'INFO',
    'WARNING',
    'ERROR',
    'CRITICAL',
    'RvPatchError',
    'ConfigError',
    'Settings',
    'load_settings',
]
