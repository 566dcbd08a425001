"""
钩子分组管理模块
负责加载钩子分组配置，并把分组解析为拦截运行时使用的 HookSet
"""
import os
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import yaml

from src.core.errors import ConfigError
from src.core.logger import Logger
from src.core.settings import PROJECT_ROOT
from src.emulator.kernel import SyscallCall
from src.hooks.decorator import (
    HookInfo,
    HookResult,
    get_available_groups,
    get_hooks_by_groups,
    load_hook_groups,
)


DEFAULT_CONFIG_PATH = str(PROJECT_ROOT / "config" / "hook_groups.yaml")


@dataclass
class HookSet:
    """
    一组已解析的钩子

    pre 钩子按顺序调用，第一个非 None 的结果生效；都返回 None 则透传给内核
    """
    pre: List[HookInfo] = field(default_factory=list)
    post: List[HookInfo] = field(default_factory=list)
    clone: List[HookInfo] = field(default_factory=list)

    @classmethod
    def from_hooks(cls, hooks: Iterable[HookInfo]) -> 'HookSet':
        result = cls()
        for info in hooks:
            getattr(result, info.stage).append(info)
        return result

    @classmethod
    def passthrough(cls) -> 'HookSet':
        return cls()

    @classmethod
    def bypassing(cls, number: int, ret0: int, ret1: int = 0) -> 'HookSet':
        """对指定调用号直接返回 (ret0, ret1) 的钩子集"""
        def bypass(call: SyscallCall) -> HookResult:
            return HookResult(ret0, ret1)

        info = HookInfo(name=f"bypass_{number}", func=bypass, stage="pre",
                        syscalls=frozenset({number}),
                        description=f"调用号 {number} 直接返回 ({ret0}, {ret1})")
        return cls(pre=[info])

    def run_pre(self, call: SyscallCall) -> Optional[HookResult]:
        for info in self.pre:
            if info.applies_to(call.number):
                result = info.func(call)
                if result is not None:
                    return result
        return None

    def run_post(self, call: SyscallCall, ret0: int, ret1: int) -> None:
        for info in self.post:
            if info.applies_to(call.number):
                info.func(call, ret0, ret1)

    def run_clone(self, call: SyscallCall, child: int) -> None:
        for info in self.clone:
            if info.applies_to(call.number):
                info.func(call, child)

    def names(self) -> List[str]:
        return [h.name for h in self.pre + self.post + self.clone]


def load_groups_from_yaml(config_path: str = DEFAULT_CONFIG_PATH) -> dict:
    """
    从 YAML 配置文件加载钩子分组

    参数:
        config_path: 配置文件路径

    返回:
        分组配置字典，格式为 {分组名: [钩子名列表]}

    异常:
        ConfigError: 文件不存在或格式错误
    """
    if not os.path.exists(config_path):
        raise ConfigError(f"配置文件不存在: {config_path}")

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            groups_config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"YAML 解析错误: {e}") from e

    if not isinstance(groups_config, dict):
        raise ConfigError("配置文件格式错误：根元素必须是字典")

    for group_name, hook_names in groups_config.items():
        if hook_names is None:
            groups_config[group_name] = []
        elif not isinstance(hook_names, list):
            raise ConfigError(f"分组 '{group_name}' 的值必须是列表")
    return groups_config


def initialize_hook_groups(config_path: str = DEFAULT_CONFIG_PATH) -> dict:
    """
    初始化钩子分组系统
    导入内置钩子实现并注册分组

    参数:
        config_path: 配置文件路径
    """
    from src.hooks import implementations  # noqa: F401  导入以触发注册

    groups_config = load_groups_from_yaml(config_path)
    load_hook_groups(groups_config)
    Logger.get_logger("Hooks").debug(f"已加载钩子分组: {list(groups_config)}")
    return groups_config


def validate_groups(group_names: List[str]) -> Tuple[List[str], List[str]]:
    """
    验证分组名称是否存在

    返回:
        (valid_groups, invalid_groups) 元组
    """
    available = get_available_groups()
    valid = [g for g in group_names if g in available]
    invalid = [g for g in group_names if g not in available]
    return valid, invalid


def get_hooks_for_groups(group_names: List[str]) -> HookSet:
    """
    获取指定分组的钩子集

    参数:
        group_names: 分组名称列表，可以是单个或多个分组

    返回:
        HookSet，自动去重

    异常:
        ConfigError: 含未知分组
    """
    _, invalid = validate_groups(group_names)
    if invalid:
        raise ConfigError(f"未知的钩子分组: {invalid}")
    return HookSet.from_hooks(get_hooks_by_groups(group_names))
