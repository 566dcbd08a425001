"""
钩子模块
包含钩子装饰器、内置钩子实现和钩子分组管理
"""

from .decorator import (
    hook,
    HookInfo,
    HookResult,
    get_hooks_by_groups,
    get_all_hooks,
    load_hook_groups,
    get_available_groups,
    get_hooks_registry,
)

from .groups import (
    HookSet,
    initialize_hook_groups,
    get_hooks_for_groups,
    validate_groups,
)

# 导入钩子实现以触发注册
from . import implementations

__all__ = [
    'hook',
    'HookInfo',
    'HookResult',
    'HookSet',
    'get_hooks_by_groups',
    'get_all_hooks',
    'load_hook_groups',
    'get_available_groups',
    'get_hooks_registry',
    'initialize_hook_groups',
    'get_hooks_for_groups',
    'validate_groups',
]
