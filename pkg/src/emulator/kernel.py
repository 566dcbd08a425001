"""
合成内核模型
确定性的系统调用处理表，返回 (a0, a1) 结果对和代价单位；clone 只模拟不执行
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

from src.patcher.isa import MASK64


SYS_OPENAT = 56
SYS_CLOSE = 57
SYS_PIPE2 = 59
SYS_LSEEK = 62
SYS_READ = 63
SYS_WRITE = 64
SYS_EXIT = 93
SYS_EXIT_GROUP = 94
SYS_GETPID = 172
SYS_GETPPID = 173
SYS_CLONE = 220
SYS_CLONE3 = 435

CLONE_FAMILY = frozenset({SYS_CLONE, SYS_CLONE3})
EXIT_FAMILY = frozenset({SYS_EXIT, SYS_EXIT_GROUP})

SYSCALL_NAMES: Dict[int, str] = {
    SYS_OPENAT: "openat",
    SYS_CLOSE: "close",
    SYS_PIPE2: "pipe2",
    SYS_LSEEK: "lseek",
    SYS_READ: "read",
    SYS_WRITE: "write",
    SYS_EXIT: "exit",
    SYS_EXIT_GROUP: "exit_group",
    SYS_GETPID: "getpid",
    SYS_GETPPID: "getppid",
    SYS_CLONE: "clone",
    SYS_CLONE3: "clone3",
}

FAKE_PID = 4000
CHILD_ID_BASE = 0x1000
DEFAULT_COST_UNITS = 2000
# pipe2 按两个寄存器返回读端和写端
PIPE_FDS = (3, 4)


@dataclass(frozen=True)
class SyscallCall:
    """一次系统调用请求：调用号与 a0..a5"""
    number: int
    args: Tuple[int, ...]

    @property
    def name(self) -> str:
        return SYSCALL_NAMES.get(self.number, f"sys_{self.number}")


Handler = Callable[[SyscallCall], Tuple[int, int]]


class KernelModel:
    """
    确定性内核模型

    handle() 返回 (ret0, ret1, cost)；clone 族返回递增的合成子进程号。
    exit 族在这里只给出结果，终止程序由运行循环负责
    """

    def __init__(self, cost_units: int = DEFAULT_COST_UNITS,
                 handlers: Optional[Dict[int, Handler]] = None):
        if cost_units < 0:
            raise ValueError("cost_units 不能为负数")
        self.cost_units = cost_units
        self._next_child = 0
        self.handlers: Dict[int, Handler] = {
            SYS_GETPID: lambda c: (FAKE_PID, 0),
            SYS_GETPPID: lambda c: (1, 0),
            SYS_READ: lambda c: (c.args[2], 0),
            SYS_WRITE: lambda c: (c.args[2], 0),
            SYS_OPENAT: lambda c: (3, 0),
            SYS_CLOSE: lambda c: (0, 0),
            SYS_PIPE2: lambda c: PIPE_FDS,
            SYS_LSEEK: lambda c: (c.args[1], 0),
            SYS_EXIT: lambda c: (0, 0),
            SYS_EXIT_GROUP: lambda c: (0, 0),
        }
        if handlers:
            self.handlers.update(handlers)

    def reset(self) -> None:
        """每次运行开始时重置 clone 计数"""
        self._next_child = 0

    def clone_child(self) -> int:
        child = CHILD_ID_BASE + self._next_child
        self._next_child += 1
        return child

    def handle(self, call: SyscallCall) -> Tuple[int, int, int]:
        if call.number in CLONE_FAMILY:
            ret0, ret1 = self.clone_child(), 0
        elif call.number in self.handlers:
            ret0, ret1 = self.handlers[call.number](call)
        else:
            ret0, ret1 = call.args[0] ^ call.number, 0
        return ret0 & MASK64, ret1 & MASK64, self.cost_units
