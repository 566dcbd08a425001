"""
配置加载模块
从 config/patcher.yaml 读取运行参数，缺失的键使用内置默认值
"""
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from src.core.errors import ConfigError
from src.core.logger import Logger


PROJECT_ROOT = Path(__file__).resolve().parents[2]
DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config" / "patcher.yaml"

_DEFAULT_COST_MODELS: Dict[str, Dict[str, int]] = {
    "riscv": {
        "per_patch_template_bytes": 0,
        "per_patch_trampoline_bytes": 0,
        "shared_trampoline_bytes": 24,
        "bitmap_alignment_bytes": 2,
        "relocated_block_bytes": 64,
    },
    "x86-reference": {
        "per_patch_template_bytes": 512,
        "per_patch_trampoline_bytes": 128,
        "shared_trampoline_bytes": 0,
        "bitmap_alignment_bytes": 1,
        "relocated_block_bytes": 0,
    },
}


@dataclass(frozen=True)
class Settings:
    """运行参数（不可变，覆盖时用 with_overrides 生成新实例）"""
    rvc: bool = True
    cost_units: int = 2000
    max_instret: int = 5_000_000
    stack_top: int = 0x4000_0000
    stack_size: int = 0x1_0000
    bench_iterations: int = 100
    bench_syscall: int = 172
    bench_kind: str = "gateway"
    footprint_patches: int = 2048
    footprint_text_length: int = 0x10_0000
    cost_models: Dict[str, Dict[str, int]] = field(default_factory=lambda: {
        name: dict(params) for name, params in _DEFAULT_COST_MODELS.items()
    })
    hook_config: str = str(PROJECT_ROOT / "config" / "hook_groups.yaml")
    log_level: str = "INFO"
    log_file: Optional[str] = None

    def with_overrides(self, **overrides: Any) -> 'Settings':
        """返回覆盖了非 None 字段的新配置"""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes)


def _section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = config.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"配置段 '{name}' 必须是字典")
    return value


def _resolve_path(path: str) -> str:
    p = Path(path)
    return str(p if p.is_absolute() else PROJECT_ROOT / p)


def load_settings(config_path: Optional[str] = None) -> Settings:
    """
    从 YAML 配置文件加载运行参数

    参数:
        config_path: 配置文件路径，None 表示默认的 config/patcher.yaml

    返回:
        Settings 实例；文件不存在时返回默认配置

    异常:
        ConfigError: YAML 格式错误或结构不符
    """
    logger = Logger.get_logger("Settings")
    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH

    if not os.path.exists(path):
        logger.warning(f"配置文件不存在: {path}，使用默认配置")
        return Settings()

    try:
        with open(path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML 解析错误: {e}") from e

    if not isinstance(config, dict):
        raise ConfigError("配置文件格式错误：根元素必须是字典")

    kernel = _section(config, "kernel")
    emulator = _section(config, "emulator")
    bench = _section(config, "bench")
    footprint = _section(config, "footprint")
    hooks = _section(config, "hooks")
    logging_cfg = _section(config, "logging")
    models = _section(config, "cost_models")

    defaults = Settings()
    cost_models = {name: dict(params) for name, params in defaults.cost_models.items()}
    for name, params in models.items():
        if not isinstance(params, dict):
            raise ConfigError(f"代价模型 '{name}' 必须是字典")
        cost_models.setdefault(name, {}).update({k: int(v) for k, v in params.items()})

    try:
        settings = Settings(
            rvc=bool(config.get("rvc", defaults.rvc)),
            cost_units=int(kernel.get("cost_units", defaults.cost_units)),
            max_instret=int(emulator.get("max_instret", defaults.max_instret)),
            stack_top=int(emulator.get("stack_top", defaults.stack_top)),
            stack_size=int(emulator.get("stack_size", defaults.stack_size)),
            bench_iterations=int(bench.get("iterations", defaults.bench_iterations)),
            bench_syscall=int(bench.get("syscall_number", defaults.bench_syscall)),
            bench_kind=str(bench.get("kind", defaults.bench_kind)),
            footprint_patches=int(footprint.get("patches", defaults.footprint_patches)),
            footprint_text_length=int(footprint.get("text_length", defaults.footprint_text_length)),
            cost_models=cost_models,
            hook_config=_resolve_path(hooks.get("config", defaults.hook_config)),
            log_level=str(logging_cfg.get("level", defaults.log_level)).upper(),
            log_file=logging_cfg.get("file"),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"配置值类型错误: {e}") from e

    if settings.cost_units < 0:
        raise ConfigError("kernel.cost_units 不能为负数")
    logger.debug(f"已加载配置: {path}")
    return settings
