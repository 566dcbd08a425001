"""
内置钩子实现
包含可在拦截运行时中按分组启用的系统调用钩子
"""
import errno

from src.core.logger import Logger
from src.emulator.kernel import SYS_CLONE, SYS_CLONE3, SYS_GETPID, SYS_OPENAT, SyscallCall
from src.hooks.decorator import HookResult, hook


FAKE_GETPID_RESULT = 4242


@hook(stage="pre", syscalls=[SYS_GETPID])
def fake_getpid(call: SyscallCall) -> HookResult:
    """
    getpid 不进入内核，直接返回固定的进程号

    参数:
        call: 系统调用请求

    返回:
        (4242, 0)
    """
    return HookResult(FAKE_GETPID_RESULT, 0)


@hook(stage="pre", syscalls=[SYS_OPENAT])
def deny_openat(call: SyscallCall) -> HookResult:
    """拒绝所有 openat，返回 -EACCES"""
    return HookResult(-errno.EACCES, 0)


@hook(stage="post")
def log_syscall(call: SyscallCall, ret0: int, ret1: int) -> None:
    """
    记录每次系统调用及其返回值对

    参数:
        call: 系统调用请求
        ret0: a0 返回值
        ret1: a1 返回值
    """
    Logger.get_logger("Hooks").info(
        f"{call.name}({', '.join(hex(a) for a in call.args[:3])}) = ({ret0:#x}, {ret1:#x})")


@hook(stage="clone", syscalls=[SYS_CLONE, SYS_CLONE3])
def log_clone(call: SyscallCall, child: int) -> None:
    """每次线程/进程创建后记录子进程号"""
    Logger.get_logger("Hooks").info(f"{call.name} 创建子进程 {child:#x}")
