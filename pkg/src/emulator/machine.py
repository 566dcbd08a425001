"""
机器状态与单步执行
稀疏分页内存（小端、无权限）、64 位寄存器堆，以及 RV64IMC 子集的指令语义
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from src.core.errors import (
    IllegalInstructionError,
    MisalignedAccessError,
    UnmappedAccessError,
    UnmappedFetchError,
)
from src.patcher.isa import MASK64, SP, Instruction, OpClass


PAGE_SIZE = 0x1000
HALT_ADDRESS = 0x7FFF_FFF0
DEFAULT_STACK_TOP = 0x4000_0000
DEFAULT_STACK_SIZE = 0x1_0000

MASK32 = (1 << 32) - 1


def sign_extend(value: int, bits: int) -> int:
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


class Memory:
    """
    稀疏内存：4 KiB 页按需映射，访问未映射的页会报错
    """

    def __init__(self):
        self.pages: Dict[int, bytearray] = {}

    def map(self, address: int, size: int) -> None:
        """映射 [address, address+size) 覆盖的所有页（新页清零）"""
        if size <= 0:
            return
        first = address // PAGE_SIZE
        last = (address + size - 1) // PAGE_SIZE
        for page in range(first, last + 1):
            self.pages.setdefault(page, bytearray(PAGE_SIZE))

    def is_mapped(self, address: int, size: int = 1) -> bool:
        first = address // PAGE_SIZE
        last = (address + size - 1) // PAGE_SIZE
        return all(p in self.pages for p in range(first, last + 1))

    def load(self, address: int, data: bytes) -> None:
        """映射并写入一段数据"""
        self.map(address, len(data))
        self.write(address, data)

    def read(self, address: int, size: int, pc: Optional[int] = None) -> bytes:
        out = bytearray()
        while size > 0:
            page, offset = divmod(address, PAGE_SIZE)
            buf = self.pages.get(page)
            if buf is None:
                raise UnmappedAccessError(f"读取未映射地址 0x{address:x}", pc)
            n = min(size, PAGE_SIZE - offset)
            out += buf[offset:offset + n]
            address += n
            size -= n
        return bytes(out)

    def write(self, address: int, data: bytes, pc: Optional[int] = None) -> None:
        pos = 0
        while pos < len(data):
            page, offset = divmod(address + pos, PAGE_SIZE)
            buf = self.pages.get(page)
            if buf is None:
                raise UnmappedAccessError(f"写入未映射地址 0x{address + pos:x}", pc)
            n = min(len(data) - pos, PAGE_SIZE - offset)
            buf[offset:offset + n] = data[pos:pos + n]
            pos += n

    def read_int(self, address: int, size: int, pc: Optional[int] = None) -> int:
        return int.from_bytes(self.read(address, size, pc), "little")

    def write_int(self, address: int, size: int, value: int, pc: Optional[int] = None) -> None:
        self.write(address, (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little"), pc)

    def fetch_halfword(self, pc: int) -> int:
        page, offset = divmod(pc, PAGE_SIZE)
        buf = self.pages.get(page)
        if buf is None:
            raise UnmappedFetchError("取指地址未映射", pc)
        if offset + 2 <= PAGE_SIZE:
            return buf[offset] | (buf[offset + 1] << 8)
        return self.read_int(pc, 2, pc)

    def copy(self) -> 'Memory':
        other = Memory()
        other.pages = {p: bytearray(b) for p, b in self.pages.items()}
        return other

    def byte_map(self, exclude: Iterable[Tuple[int, int]] = ()) -> Dict[int, bytes]:
        """按页导出内容，exclude 中的 [start, end) 区间清零后再比较"""
        ranges = list(exclude)
        out = {}
        for page, buf in self.pages.items():
            data = bytearray(buf)
            base = page * PAGE_SIZE
            for start, end in ranges:
                lo = max(start, base) - base
                hi = min(end, base + PAGE_SIZE) - base
                if lo < hi:
                    data[lo:hi] = bytes(hi - lo)
            out[page] = bytes(data)
        return out


@dataclass
class MachineState:
    regs: List[int] = field(default_factory=lambda: [0] * 32)
    pc: int = 0
    memory: Memory = field(default_factory=Memory)
    instret: int = 0
    min_sp: Optional[int] = None
    # 程序经 exit 族系统调用终止后记录 a0
    exit_status: Optional[int] = None

    def reg(self, index: int) -> int:
        return self.regs[index]

    def set_reg(self, index: int, value: int) -> None:
        if index:
            self.regs[index] = value & MASK64

    def track_sp(self) -> None:
        sp = self.regs[SP]
        if self.min_sp is None or sp < self.min_sp:
            self.min_sp = sp

    def copy(self) -> 'MachineState':
        return MachineState(list(self.regs), self.pc, self.memory.copy(), self.instret, self.min_sp,
                            self.exit_status)


def new_state(stack_top: int = DEFAULT_STACK_TOP, stack_size: int = DEFAULT_STACK_SIZE,
              regs: Optional[List[int]] = None) -> MachineState:
    """
    创建初始状态：映射栈、sp 指向栈顶、ra 指向停机哨兵地址

    参数:
        regs: 可选的初始寄存器堆（sp/ra 仍会被设置，除非调用方之后覆盖）
    """
    state = MachineState()
    if regs is not None:
        for i, v in enumerate(regs):
            state.set_reg(i, v)
    state.memory.map(stack_top - stack_size, stack_size)
    state.set_reg(SP, stack_top)
    state.set_reg(1, HALT_ADDRESS)
    state.track_sp()
    return state


# ---------------------------------------------------------------------------
# 指令语义
# ---------------------------------------------------------------------------

def _s(v: int) -> int:
    return sign_extend(v, 64)


def _div(x: int, y: int) -> int:
    if y == 0:
        return -1
    q = abs(x) // abs(y)
    return -q if (x < 0) != (y < 0) else q


def _rem(x: int, y: int) -> int:
    if y == 0:
        return x
    return x - y * _div(x, y)


def _w(fn: Callable[[int, int], int]) -> Callable[[int, int], int]:
    return lambda a, b: sign_extend(fn(a, b), 32)


_ALU: Dict[str, Callable[[int, int], int]] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "sll": lambda a, b: a << (b & 63),
    "slt": lambda a, b: int(_s(a) < _s(b)),
    "sltu": lambda a, b: int(a < b),
    "xor": lambda a, b: a ^ b,
    "srl": lambda a, b: a >> (b & 63),
    "sra": lambda a, b: _s(a) >> (b & 63),
    "or": lambda a, b: a | b,
    "and": lambda a, b: a & b,
    "mul": lambda a, b: a * b,
    "mulh": lambda a, b: (_s(a) * _s(b)) >> 64,
    "mulhsu": lambda a, b: (_s(a) * b) >> 64,
    "mulhu": lambda a, b: (a * b) >> 64,
    "div": lambda a, b: _div(_s(a), _s(b)),
    "divu": lambda a, b: a // b if b else MASK64,
    "rem": lambda a, b: _rem(_s(a), _s(b)),
    "remu": lambda a, b: a % b if b else a,
    "addw": _w(lambda a, b: a + b),
    "subw": _w(lambda a, b: a - b),
    "sllw": _w(lambda a, b: a << (b & 31)),
    "srlw": _w(lambda a, b: (a & MASK32) >> (b & 31)),
    "sraw": _w(lambda a, b: sign_extend(a, 32) >> (b & 31)),
    "mulw": _w(lambda a, b: a * b),
    "divw": _w(lambda a, b: _div(sign_extend(a, 32), sign_extend(b, 32))),
    "divuw": _w(lambda a, b: (a & MASK32) // (b & MASK32) if b & MASK32 else MASK64),
    "remw": _w(lambda a, b: _rem(sign_extend(a, 32), sign_extend(b, 32))),
    "remuw": _w(lambda a, b: (a & MASK32) % (b & MASK32) if b & MASK32 else a),
}

_IMM_TO_ALU = {
    "addi": "add", "slti": "slt", "sltiu": "sltu", "xori": "xor", "ori": "or", "andi": "and",
    "slli": "sll", "srli": "srl", "srai": "sra",
    "addiw": "addw", "slliw": "sllw", "srliw": "srlw", "sraiw": "sraw",
}

# (字节数, 是否符号扩展)
_LOADS = {
    "lb": (1, True), "lh": (2, True), "lw": (4, True), "ld": (8, False),
    "lbu": (1, False), "lhu": (2, False), "lwu": (4, False),
}
_STORES = {"sb": 1, "sh": 2, "sw": 4, "sd": 8}

_BRANCHES: Dict[str, Callable[[int, int], bool]] = {
    "beq": lambda a, b: a == b,
    "bne": lambda a, b: a != b,
    "blt": lambda a, b: _s(a) < _s(b),
    "bge": lambda a, b: _s(a) >= _s(b),
    "bltu": lambda a, b: a < b,
    "bgeu": lambda a, b: a >= b,
}

TRAP_CLASSES = frozenset({OpClass.ECALL, OpClass.EBREAK, OpClass.C_EBREAK})


def step(state: MachineState, insn: Instruction) -> None:
    """
    执行位于 state.pc 的一条指令并推进 pc

    ecall/ebreak 由运行循环处理，不经过这里

    异常:
        IllegalInstructionError: 不支持的编码（含 CSR 指令）
        MisalignedAccessError: 访存未按自然边界对齐
        UnmappedAccessError: 访问未映射内存
    """
    pc = state.pc
    op = insn.op
    regs = state.regs
    next_pc = pc + insn.width

    if op in _ALU:
        state.set_reg(insn.rd, _ALU[op](regs[insn.rs1], regs[insn.rs2]))
    elif op in _IMM_TO_ALU:
        state.set_reg(insn.rd, _ALU[_IMM_TO_ALU[op]](regs[insn.rs1], insn.imm & MASK64))
    elif op in _LOADS:
        size, signed = _LOADS[op]
        address = (regs[insn.rs1] + insn.imm) & MASK64
        if address % size:
            raise MisalignedAccessError(f"{insn.mnemonic} 地址 0x{address:x} 未对齐", pc)
        value = state.memory.read_int(address, size, pc)
        state.set_reg(insn.rd, sign_extend(value, 8 * size) if signed else value)
    elif op in _STORES:
        size = _STORES[op]
        address = (regs[insn.rs1] + insn.imm) & MASK64
        if address % size:
            raise MisalignedAccessError(f"{insn.mnemonic} 地址 0x{address:x} 未对齐", pc)
        state.memory.write_int(address, size, regs[insn.rs2], pc)
    elif op == "lui":
        state.set_reg(insn.rd, insn.imm)
    elif op == "auipc":
        state.set_reg(insn.rd, pc + insn.imm)
    elif op == "jal":
        state.set_reg(insn.rd, next_pc)
        next_pc = (pc + insn.imm) & MASK64
    elif op == "jalr":
        target = (regs[insn.rs1] + insn.imm) & MASK64 & ~1
        state.set_reg(insn.rd, next_pc)
        next_pc = target
    elif op in _BRANCHES:
        if _BRANCHES[op](regs[insn.rs1], regs[insn.rs2]):
            next_pc = (pc + insn.imm) & MASK64
    elif insn.opclass is OpClass.FENCE:
        pass
    else:
        raise IllegalInstructionError(f"不支持的指令 {insn.text()}", pc)

    state.pc = next_pc
    state.instret += 1
