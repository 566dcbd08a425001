"""
钩子装饰器模块
提供 @hook 装饰器来注册系统调用钩子（pre / post / clone 三个阶段）
支持钩子分组功能，可以按需组合不同的钩子集
"""
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Optional

from src.emulator.kernel import SyscallCall


STAGES = ("pre", "post", "clone")

# 存储所有钩子信息的字典，key 为钩子名称
_HOOKS_REGISTRY: Dict[str, 'HookInfo'] = {}
# 存储钩子分组信息，key 为分组名称，value 为钩子名称列表
_HOOK_GROUPS: Dict[str, List[str]] = {}


@dataclass(frozen=True)
class HookResult:
    """
    pre 钩子的旁路结果：跳过内核，直接把 (ret0, ret1) 写入 (a0, a1)
    """
    ret0: int
    ret1: int = 0


@dataclass(frozen=True)
class HookInfo:
    name: str
    func: Callable
    stage: str
    syscalls: Optional[FrozenSet[int]]
    description: str

    def applies_to(self, number: int) -> bool:
        return self.syscalls is None or number in self.syscalls

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "stage": self.stage,
            "syscalls": sorted(self.syscalls) if self.syscalls is not None else None,
            "description": self.description,
        }


def _extract_function_description(docstring: Optional[str]) -> str:
    """
    从 docstring 中提取函数描述（参数/返回部分之前的内容）

    参数:
        docstring: 函数的文档字符串

    返回:
        函数描述字符串
    """
    if not docstring:
        return "无描述"

    description_lines = []
    for line in docstring.strip().split('\n'):
        stripped = line.strip()
        if stripped.lower().startswith(('参数:', 'args:', '返回:', 'return:', 'raises:')):
            break
        if stripped:
            description_lines.append(stripped)
    return ' '.join(description_lines) if description_lines else "无描述"


def hook(name: Optional[str] = None, stage: str = "pre", syscalls: Optional[List[int]] = None,
         description: Optional[str] = None):
    """
    钩子装饰器，用于把函数注册为系统调用钩子

    使用示例:
        @hook(stage="pre", syscalls=[172])
        def fake_getpid(call: SyscallCall):
            '''getpid 直接返回固定值'''
            return HookResult(4242, 0)

        @hook(name="trace_all", stage="post")
        def trace(call, ret0, ret1):
            ...

    参数:
        name: 钩子名称，不提供则使用函数名
        stage: pre（返回 HookResult 或 None）、post（收到返回值对）或 clone（收到子进程号）
        syscalls: 只对这些调用号生效，None 表示全部
        description: 自定义描述，不提供则从 docstring 提取

    返回:
        装饰器函数

    异常:
        ValueError: stage 不合法
    """
    if stage not in STAGES:
        raise ValueError(f"未知的钩子阶段: {stage}")

    def decorator(func):
        hook_name = name if name else func.__name__
        _HOOKS_REGISTRY[hook_name] = HookInfo(
            name=hook_name,
            func=func,
            stage=stage,
            syscalls=frozenset(syscalls) if syscalls is not None else None,
            description=description if description else _extract_function_description(func.__doc__),
        )
        return func

    return decorator


def get_hooks_by_groups(group_names: List[str]) -> List[HookInfo]:
    """
    根据分组名称获取钩子列表，自动去重并保持分组中的声明顺序

    参数:
        group_names: 分组名称列表

    返回:
        HookInfo 列表
    """
    seen = set()
    hooks = []
    for group_name in group_names:
        for hook_name in _HOOK_GROUPS.get(group_name, []):
            if hook_name in seen or hook_name not in _HOOKS_REGISTRY:
                continue
            seen.add(hook_name)
            hooks.append(_HOOKS_REGISTRY[hook_name])
    return hooks


def get_hook(name: str) -> HookInfo:
    return _HOOKS_REGISTRY[name]


def get_all_hooks() -> List[HookInfo]:
    return list(_HOOKS_REGISTRY.values())


def load_hook_groups(groups_config: Dict[str, List[str]]):
    """
    加载钩子分组配置

    参数:
        groups_config: 分组配置字典，格式为 {分组名: [钩子名列表]}
    """
    global _HOOK_GROUPS
    _HOOK_GROUPS = {k: list(v) for k, v in groups_config.items()}


def get_available_groups() -> List[str]:
    return list(_HOOK_GROUPS.keys())


def get_hooks_registry() -> Dict[str, HookInfo]:
    """获取钩子注册表的副本（用于调试）"""
    return _HOOKS_REGISTRY.copy()


PreHook = Callable[[SyscallCall], Optional[HookResult]]
PostHook = Callable[[SyscallCall, int, int], None]
CloneHook = Callable[[SyscallCall, int], None]
