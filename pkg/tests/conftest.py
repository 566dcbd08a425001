"""
pytest 公共配置
hypothesis 默认关闭 deadline：模拟器单步执行的耗时波动较大
"""
import pytest
from hypothesis import HealthCheck, settings

from src.core.logger import WARNING, setup_default_logger


settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("fast", max_examples=20, deadline=None)
settings.load_profile("default")


@pytest.fixture(autouse=True, scope="session")
def _quiet_logger():
    setup_default_logger(level=WARNING)
