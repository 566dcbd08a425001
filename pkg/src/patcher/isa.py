"""
RV64IMC 指令模块
表驱动的解码/编码（基础整数指令、M 扩展、C 扩展整数子集），
以及可重定位判断和跳转可达范围计算
"""
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

from src.core.errors import EncodingError, JumpRangeError, TruncatedCodeError


MASK64 = (1 << 64) - 1

REG_NAMES = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2",
    "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5",
    "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7",
    "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
]
REG_INDEX = {name: i for i, name in enumerate(REG_NAMES)}

ZERO, RA, SP, T0, T1, T2, S0 = 0, 1, 2, 5, 6, 7, 8
A0, A1, A2, A3, A4, A5, A6, A7 = range(10, 18)

# jal: 21 位有符号偶数立即数
JAL_MIN, JAL_MAX = -(1 << 20), (1 << 20) - 2
# auipc+jalr: 高 20 位加 12 位有符号低位，受补码偏置影响不对称
AUIPC_JALR_MIN, AUIPC_JALR_MAX = -0x80000800, 0x7FFFF7FE


class OpClass(Enum):
    ALU = "ALU"
    ALU_IMM = "ALU_IMM"
    LOAD = "LOAD"
    STORE = "STORE"
    LUI = "LUI"
    AUIPC = "AUIPC"
    JAL = "JAL"
    JALR = "JALR"
    BRANCH = "BRANCH"
    ECALL = "ECALL"
    EBREAK = "EBREAK"
    FENCE = "FENCE"
    SYSTEM = "SYSTEM"
    C_ALU = "C_ALU"
    C_ALU_IMM = "C_ALU_IMM"
    C_LOAD = "C_LOAD"
    C_STORE = "C_STORE"
    C_LUI = "C_LUI"
    C_JAL = "C_JAL"
    C_JALR = "C_JALR"
    C_BRANCH = "C_BRANCH"
    C_EBREAK = "C_EBREAK"
    UNKNOWN = "UNKNOWN"


RELOCATABLE_CLASSES = frozenset({
    OpClass.ALU, OpClass.ALU_IMM, OpClass.LOAD, OpClass.STORE, OpClass.LUI,
    OpClass.C_ALU, OpClass.C_ALU_IMM, OpClass.C_LOAD, OpClass.C_STORE, OpClass.C_LUI,
})

CONTROL_FLOW_CLASSES = frozenset({
    OpClass.JAL, OpClass.JALR, OpClass.BRANCH,
    OpClass.C_JAL, OpClass.C_JALR, OpClass.C_BRANCH,
})

DIRECT_JUMP_CLASSES = frozenset({
    OpClass.JAL, OpClass.BRANCH, OpClass.C_JAL, OpClass.C_BRANCH,
})

_WRITES_RD = frozenset({
    OpClass.ALU, OpClass.ALU_IMM, OpClass.LOAD, OpClass.LUI, OpClass.AUIPC,
    OpClass.JAL, OpClass.JALR, OpClass.SYSTEM,
    OpClass.C_ALU, OpClass.C_ALU_IMM, OpClass.C_LOAD, OpClass.C_LUI,
    OpClass.C_JAL, OpClass.C_JALR,
})


@dataclass(frozen=True)
class Instruction:
    """
    一条已解码的 RV64 指令

    raw 对压缩指令只有低 16 位有效；op 是模拟器执行的基础操作名
    （压缩指令展开后的等价指令，如 c.li -> addi）
    """
    raw: int
    width: int
    opclass: OpClass
    mnemonic: str
    op: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0
    address: int = 0

    @property
    def compressed(self) -> bool:
        return self.width == 2

    @property
    def end(self) -> int:
        return self.address + self.width

    def to_bytes(self) -> bytes:
        return encode(self).to_bytes(self.width, "little")

    def text(self) -> str:
        if self.opclass is OpClass.UNKNOWN:
            return f"<unknown 0x{self.raw:0{self.width * 2}x}>"
        spec = _BY_MNEMONIC[self.mnemonic]
        parts = [REG_NAMES[getattr(self, name)] for name, *_ in spec.regs]
        if spec.imm_bits:
            parts.append(str(self.imm))
        return f"{self.mnemonic} {', '.join(parts)}".strip()


@dataclass(frozen=True)
class JumpReach:
    """跳转方式及其可达的有符号字节偏移区间"""
    kind: str
    min_offset: int
    max_offset: int

    def contains(self, offset: int) -> bool:
        return self.min_offset <= offset <= self.max_offset and offset % 2 == 0


JAL_REACH = JumpReach("JAL", JAL_MIN, JAL_MAX)
AUIPC_JALR_REACH = JumpReach("AUIPC_JALR", AUIPC_JALR_MIN, AUIPC_JALR_MAX)


# ---------------------------------------------------------------------------
# 编码表
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Spec:
    mnemonic: str
    op: str
    opclass: OpClass
    width: int
    fixed: Tuple[Tuple[int, int, int], ...]
    regs: Tuple[Tuple[str, int, int, int], ...] = ()
    implied: Tuple[Tuple[str, object], ...] = ()
    imm_bits: Tuple[Tuple[int, int], ...] = ()
    signed: bool = False
    nonzero: Tuple[str, ...] = ()

    @property
    def imm_width(self) -> int:
        return max(b for _, b in self.imm_bits) + 1 if self.imm_bits else 0


def _layout(*segments: Tuple[int, str]) -> Tuple[Tuple[int, int], ...]:
    """
    解析立即数散布格式

    参数:
        segments: (起始指令位, "11|4|9:8") 形式，从起始位向下依次放置立即数位

    返回:
        (指令位, 立即数位) 对
    """
    pairs = []
    for top, pattern in segments:
        pos = top
        for seg in pattern.split("|"):
            if ":" in seg:
                hi, lo = (int(x) for x in seg.split(":"))
                bits = range(hi, lo - 1, -1)
            else:
                bits = [int(seg)]
            for b in bits:
                pairs.append((pos, b))
                pos -= 1
    return tuple(pairs)


_RD = ("rd", 11, 7, 0)
_RS1 = ("rs1", 19, 15, 0)
_RS2 = ("rs2", 24, 20, 0)

_I_IMM = _layout((31, "11:0"))
_S_IMM = _layout((31, "11:5"), (11, "4:0"))
_B_IMM = _layout((31, "12|10:5"), (11, "4:1|11"))
_U_IMM = _layout((31, "31:12"))
_J_IMM = _layout((31, "20|10:1|11|19:12"))
_SH6 = _layout((25, "5:0"))
_SH5 = _layout((24, "4:0"))


def _base(opcode: int, f3: Optional[int] = None, hi: Optional[Tuple[int, int, int]] = None):
    fixed = [(6, 0, opcode)]
    if f3 is not None:
        fixed.append((14, 12, f3))
    if hi is not None:
        fixed.append(hi)
    return tuple(fixed)


def _build_base_specs() -> List[_Spec]:
    specs = [
        _Spec("lui", "lui", OpClass.LUI, 4, _base(0x37), (_RD,), (), _U_IMM, True),
        _Spec("auipc", "auipc", OpClass.AUIPC, 4, _base(0x17), (_RD,), (), _U_IMM, True),
        _Spec("jal", "jal", OpClass.JAL, 4, _base(0x6F), (_RD,), (), _J_IMM, True),
        _Spec("jalr", "jalr", OpClass.JALR, 4, _base(0x67, 0), (_RD, _RS1), (), _I_IMM, True),
        _Spec("ecall", "ecall", OpClass.ECALL, 4, ((31, 0, 0x00000073),)),
        _Spec("ebreak", "ebreak", OpClass.EBREAK, 4, ((31, 0, 0x00100073),)),
        _Spec("fence", "fence", OpClass.FENCE, 4, _base(0x0F, 0), (_RD, _RS1), (), _I_IMM, True),
        _Spec("fence.i", "fence.i", OpClass.FENCE, 4, _base(0x0F, 1), (_RD, _RS1), (), _I_IMM, True),
    ]
    for name, f3 in (("beq", 0), ("bne", 1), ("blt", 4), ("bge", 5), ("bltu", 6), ("bgeu", 7)):
        specs.append(_Spec(name, name, OpClass.BRANCH, 4, _base(0x63, f3), (_RS1, _RS2), (), _B_IMM, True))
    for name, f3 in (("lb", 0), ("lh", 1), ("lw", 2), ("ld", 3), ("lbu", 4), ("lhu", 5), ("lwu", 6)):
        specs.append(_Spec(name, name, OpClass.LOAD, 4, _base(0x03, f3), (_RD, _RS1), (), _I_IMM, True))
    for name, f3 in (("sb", 0), ("sh", 1), ("sw", 2), ("sd", 3)):
        specs.append(_Spec(name, name, OpClass.STORE, 4, _base(0x23, f3), (_RS1, _RS2), (), _S_IMM, True))
    for name, f3 in (("addi", 0), ("slti", 2), ("sltiu", 3), ("xori", 4), ("ori", 6), ("andi", 7)):
        specs.append(_Spec(name, name, OpClass.ALU_IMM, 4, _base(0x13, f3), (_RD, _RS1), (), _I_IMM, True))
    for name, f3, f6 in (("slli", 1, 0x00), ("srli", 5, 0x00), ("srai", 5, 0x10)):
        specs.append(_Spec(name, name, OpClass.ALU_IMM, 4, _base(0x13, f3, (31, 26, f6)), (_RD, _RS1), (), _SH6))
    specs.append(_Spec("addiw", "addiw", OpClass.ALU_IMM, 4, _base(0x1B, 0), (_RD, _RS1), (), _I_IMM, True))
    for name, f3, f7 in (("slliw", 1, 0x00), ("srliw", 5, 0x00), ("sraiw", 5, 0x20)):
        specs.append(_Spec(name, name, OpClass.ALU_IMM, 4, _base(0x1B, f3, (31, 25, f7)), (_RD, _RS1), (), _SH5))
    for name, f3, f7 in (
        ("add", 0, 0), ("sub", 0, 0x20), ("sll", 1, 0), ("slt", 2, 0), ("sltu", 3, 0),
        ("xor", 4, 0), ("srl", 5, 0), ("sra", 5, 0x20), ("or", 6, 0), ("and", 7, 0),
        ("mul", 0, 1), ("mulh", 1, 1), ("mulhsu", 2, 1), ("mulhu", 3, 1),
        ("div", 4, 1), ("divu", 5, 1), ("rem", 6, 1), ("remu", 7, 1),
    ):
        specs.append(_Spec(name, name, OpClass.ALU, 4, _base(0x33, f3, (31, 25, f7)), (_RD, _RS1, _RS2)))
    for name, f3, f7 in (
        ("addw", 0, 0), ("subw", 0, 0x20), ("sllw", 1, 0), ("srlw", 5, 0), ("sraw", 5, 0x20),
        ("mulw", 0, 1), ("divw", 4, 1), ("divuw", 5, 1), ("remw", 6, 1), ("remuw", 7, 1),
    ):
        specs.append(_Spec(name, name, OpClass.ALU, 4, _base(0x3B, f3, (31, 25, f7)), (_RD, _RS1, _RS2)))
    for name, f3 in (("csrrw", 1), ("csrrs", 2), ("csrrc", 3), ("csrrwi", 5), ("csrrsi", 6), ("csrrci", 7)):
        specs.append(_Spec(name, name, OpClass.SYSTEM, 4, _base(0x73, f3), (_RD, _RS1), (), _I_IMM, True))
    return specs


# 压缩指令的寄存器槽位
_C_RD = ("rd", 11, 7, 0)
_C_RS1_HI = ("rs1", 11, 7, 0)
_C_RS2_LO = ("rs2", 6, 2, 0)
_CP_RD_HI = ("rd", 9, 7, 8)
_CP_RS1_HI = ("rs1", 9, 7, 8)
_CP_RD_LO = ("rd", 4, 2, 8)
_CP_RS2_LO = ("rs2", 4, 2, 8)

_CI_IMM = _layout((12, "5"), (6, "4:0"))


def _c(q: int, f3: int, *extra: Tuple[int, int, int]) -> Tuple[Tuple[int, int, int], ...]:
    return ((1, 0, q), (15, 13, f3)) + tuple(extra)


def _build_compressed_specs() -> List[_Spec]:
    c = OpClass
    return [
        # 第 0 象限
        _Spec("c.addi4spn", "addi", c.C_ALU_IMM, 2, _c(0, 0), (_CP_RD_LO,), (("rs1", SP),),
              _layout((12, "5:4|9:6|2|3")), False, ("imm",)),
        _Spec("c.lw", "lw", c.C_LOAD, 2, _c(0, 2), (_CP_RS1_HI, _CP_RD_LO), (),
              _layout((12, "5:3"), (6, "2|6"))),
        _Spec("c.ld", "ld", c.C_LOAD, 2, _c(0, 3), (_CP_RS1_HI, _CP_RD_LO), (),
              _layout((12, "5:3"), (6, "7:6"))),
        _Spec("c.sw", "sw", c.C_STORE, 2, _c(0, 6), (_CP_RS1_HI, _CP_RS2_LO), (),
              _layout((12, "5:3"), (6, "2|6"))),
        _Spec("c.sd", "sd", c.C_STORE, 2, _c(0, 7), (_CP_RS1_HI, _CP_RS2_LO), (),
              _layout((12, "5:3"), (6, "7:6"))),
        # 第 1 象限
        _Spec("c.nop", "addi", c.C_ALU_IMM, 2, _c(1, 0, (12, 2, 0))),
        _Spec("c.addi", "addi", c.C_ALU_IMM, 2, _c(1, 0), (_C_RD,), (("rs1", "rd"),), _CI_IMM, True),
        _Spec("c.addiw", "addiw", c.C_ALU_IMM, 2, _c(1, 1), (_C_RD,), (("rs1", "rd"),), _CI_IMM, True, ("rd",)),
        _Spec("c.li", "addi", c.C_ALU_IMM, 2, _c(1, 2), (_C_RD,), (("rs1", ZERO),), _CI_IMM, True),
        _Spec("c.addi16sp", "addi", c.C_ALU_IMM, 2, _c(1, 3, (11, 7, SP)), (), (("rd", SP), ("rs1", SP)),
              _layout((12, "9"), (6, "4|6|8:7|5")), True, ("imm",)),
        _Spec("c.lui", "lui", c.C_LUI, 2, _c(1, 3), (_C_RD,), (), _layout((12, "17"), (6, "16:12")), True, ("imm",)),
        _Spec("c.srli", "srli", c.C_ALU_IMM, 2, _c(1, 4, (11, 10, 0)), (_CP_RD_HI,), (("rs1", "rd"),), _CI_IMM),
        _Spec("c.srai", "srai", c.C_ALU_IMM, 2, _c(1, 4, (11, 10, 1)), (_CP_RD_HI,), (("rs1", "rd"),), _CI_IMM),
        _Spec("c.andi", "andi", c.C_ALU_IMM, 2, _c(1, 4, (11, 10, 2)), (_CP_RD_HI,), (("rs1", "rd"),), _CI_IMM, True),
        _Spec("c.sub", "sub", c.C_ALU, 2, _c(1, 4, (12, 10, 3), (6, 5, 0)), (_CP_RD_HI, _CP_RS2_LO), (("rs1", "rd"),)),
        _Spec("c.xor", "xor", c.C_ALU, 2, _c(1, 4, (12, 10, 3), (6, 5, 1)), (_CP_RD_HI, _CP_RS2_LO), (("rs1", "rd"),)),
        _Spec("c.or", "or", c.C_ALU, 2, _c(1, 4, (12, 10, 3), (6, 5, 2)), (_CP_RD_HI, _CP_RS2_LO), (("rs1", "rd"),)),
        _Spec("c.and", "and", c.C_ALU, 2, _c(1, 4, (12, 10, 3), (6, 5, 3)), (_CP_RD_HI, _CP_RS2_LO), (("rs1", "rd"),)),
        _Spec("c.subw", "subw", c.C_ALU, 2, _c(1, 4, (12, 10, 7), (6, 5, 0)), (_CP_RD_HI, _CP_RS2_LO), (("rs1", "rd"),)),
        _Spec("c.addw", "addw", c.C_ALU, 2, _c(1, 4, (12, 10, 7), (6, 5, 1)), (_CP_RD_HI, _CP_RS2_LO), (("rs1", "rd"),)),
        _Spec("c.j", "jal", c.C_JAL, 2, _c(1, 5), (), (("rd", ZERO),),
              _layout((12, "11|4|9:8|10|6|7|3:1|5")), True),
        _Spec("c.beqz", "beq", c.C_BRANCH, 2, _c(1, 6), (_CP_RS1_HI,), (("rs2", ZERO),),
              _layout((12, "8|4:3"), (6, "7:6|2:1|5")), True),
        _Spec("c.bnez", "bne", c.C_BRANCH, 2, _c(1, 7), (_CP_RS1_HI,), (("rs2", ZERO),),
              _layout((12, "8|4:3"), (6, "7:6|2:1|5")), True),
        # 第 2 象限
        _Spec("c.slli", "slli", c.C_ALU_IMM, 2, _c(2, 0), (_C_RD,), (("rs1", "rd"),), _CI_IMM),
        _Spec("c.lwsp", "lw", c.C_LOAD, 2, _c(2, 2), (_C_RD,), (("rs1", SP),),
              _layout((12, "5"), (6, "4:2|7:6")), False, ("rd",)),
        _Spec("c.ldsp", "ld", c.C_LOAD, 2, _c(2, 3), (_C_RD,), (("rs1", SP),),
              _layout((12, "5"), (6, "4:3|8:6")), False, ("rd",)),
        _Spec("c.ebreak", "ebreak", c.C_EBREAK, 2, ((15, 0, 0x9002),)),
        _Spec("c.jr", "jalr", c.C_JALR, 2, _c(2, 4, (12, 12, 0), (6, 2, 0)), (_C_RS1_HI,), (("rd", ZERO),),
              (), False, ("rs1",)),
        _Spec("c.mv", "add", c.C_ALU, 2, _c(2, 4, (12, 12, 0)), (_C_RD, _C_RS2_LO), (("rs1", ZERO),),
              (), False, ("rs2",)),
        _Spec("c.jalr", "jalr", c.C_JALR, 2, _c(2, 4, (12, 12, 1), (6, 2, 0)), (_C_RS1_HI,), (("rd", RA),),
              (), False, ("rs1",)),
        _Spec("c.add", "add", c.C_ALU, 2, _c(2, 4, (12, 12, 1)), (_C_RD, _C_RS2_LO), (("rs1", "rd"),),
              (), False, ("rs2",)),
        _Spec("c.swsp", "sw", c.C_STORE, 2, _c(2, 6), (_C_RS2_LO,), (("rs1", SP),), _layout((12, "5:2|7:6"))),
        _Spec("c.sdsp", "sd", c.C_STORE, 2, _c(2, 7), (_C_RS2_LO,), (("rs1", SP),), _layout((12, "5:3|8:6"))),
    ]


_BASE_SPECS = _build_base_specs()
_COMPRESSED_SPECS = _build_compressed_specs()
_BY_MNEMONIC: Dict[str, _Spec] = {s.mnemonic: s for s in _BASE_SPECS + _COMPRESSED_SPECS}

_BY_OPCODE: Dict[int, List[_Spec]] = {}
for _s in _BASE_SPECS:
    _BY_OPCODE.setdefault(_s.fixed[0][2] & 0x7F, []).append(_s)
_BY_QUADRANT: Dict[Tuple[int, int], List[_Spec]] = {}
for _s in _COMPRESSED_SPECS:
    if _s.mnemonic == "c.ebreak":
        _BY_QUADRANT.setdefault((2, 4), []).append(_s)
    else:
        _BY_QUADRANT.setdefault((_s.fixed[0][2], _s.fixed[1][2]), []).append(_s)
# c.ebreak 必须排在 c.jalr/c.add 之前
_BY_QUADRANT[(2, 4)].sort(key=lambda s: s.mnemonic != "c.ebreak")

SUPPORTED_MNEMONICS: Tuple[str, ...] = tuple(_BY_MNEMONIC)


def _bits(value: int, hi: int, lo: int) -> int:
    return (value >> lo) & ((1 << (hi - lo + 1)) - 1)


def _gather_imm(spec: _Spec, raw: int) -> int:
    imm = 0
    for ibit, mbit in spec.imm_bits:
        imm |= ((raw >> ibit) & 1) << mbit
    if spec.signed and spec.imm_bits:
        width = spec.imm_width
        if imm & (1 << (width - 1)):
            imm -= 1 << width
    return imm


def _matches(spec: _Spec, raw: int) -> bool:
    return all(_bits(raw, hi, lo) == value for hi, lo, value in spec.fixed)


def _unknown(raw: int, width: int) -> Instruction:
    return Instruction(raw=raw, width=width, opclass=OpClass.UNKNOWN, mnemonic="unknown", op="unknown")


@lru_cache(maxsize=1 << 16)
def _decode_cached(raw: int, width: int) -> Instruction:
    if width == 2:
        candidates = _BY_QUADRANT.get((raw & 3, _bits(raw, 15, 13)), [])
    else:
        candidates = _BY_OPCODE.get(raw & 0x7F, [])

    for spec in candidates:
        if not _matches(spec, raw):
            continue
        fields = {"rd": 0, "rs1": 0, "rs2": 0}
        for name, hi, lo, offset in spec.regs:
            fields[name] = _bits(raw, hi, lo) + offset
        for name, value in spec.implied:
            fields[name] = fields[value] if isinstance(value, str) else value
        imm = _gather_imm(spec, raw)
        if any((imm if f == "imm" else fields[f]) == 0 for f in spec.nonzero):
            continue
        return Instruction(raw=raw, width=width, opclass=spec.opclass, mnemonic=spec.mnemonic,
                           op=spec.op, imm=imm, **fields)
    return _unknown(raw, width)


def instruction_width(low_halfword: int) -> int:
    """低两位不是 0b11 时为 2 字节压缩指令"""
    return 2 if (low_halfword & 3) != 3 else 4


def decode(data: bytes, pc: int = 0, offset: int = 0) -> Instruction:
    """
    解码一条指令

    参数:
        data: 小端字节序列
        pc: 指令地址（写入 Instruction.address）
        offset: 在 data 中的起始偏移

    返回:
        Instruction；不认识的编码返回 UNKNOWN，但宽度正确

    异常:
        TruncatedCodeError: 可用字节少于指令宽度
    """
    available = len(data) - offset
    if available < 2:
        raise TruncatedCodeError(f"地址 0x{pc:x} 处只剩 {max(available, 0)} 字节，无法解码")
    low = data[offset] | (data[offset + 1] << 8)
    if instruction_width(low) == 2:
        return replace(_decode_cached(low, 2), address=pc)
    if available < 4:
        raise TruncatedCodeError(f"地址 0x{pc:x} 处的 32 位指令被截断")
    word = int.from_bytes(data[offset:offset + 4], "little")
    return replace(_decode_cached(word, 4), address=pc)


def decode_word(word: int, pc: int = 0) -> Instruction:
    """按整数解码（低两位决定宽度，压缩指令只取低 16 位）"""
    if instruction_width(word) == 2:
        return replace(_decode_cached(word & 0xFFFF, 2), address=pc)
    return replace(_decode_cached(word & 0xFFFFFFFF, 4), address=pc)


def _pack(spec: _Spec, rd: int, rs1: int, rs2: int, imm: int) -> int:
    fields = {"rd": rd, "rs1": rs1, "rs2": rs2}
    raw = 0
    for hi, lo, value in spec.fixed:
        raw |= value << lo
    for name, hi, lo, offset in spec.regs:
        value = fields[name] - offset
        if not 0 <= value < (1 << (hi - lo + 1)):
            raise EncodingError(f"{spec.mnemonic}: 寄存器 {name}=x{fields[name]} 无法编码")
        raw |= value << lo
    for name, value in spec.implied:
        expected = fields[value] if isinstance(value, str) else value
        if fields[name] != expected:
            raise EncodingError(f"{spec.mnemonic}: {name} 必须等于 {expected}")
    for ibit, mbit in spec.imm_bits:
        raw |= ((imm >> mbit) & 1) << ibit
    if _gather_imm(spec, raw) != imm:
        raise EncodingError(f"{spec.mnemonic}: 立即数 {imm} 超出范围或未对齐")
    if not spec.imm_bits and imm != 0:
        raise EncodingError(f"{spec.mnemonic}: 不接受立即数")
    for name in spec.nonzero:
        if (imm if name == "imm" else fields[name]) == 0:
            raise EncodingError(f"{spec.mnemonic}: {name} 不能为 0")
    return raw


def encode(insn: Instruction) -> int:
    """
    重新编码已解码的指令

    返回:
        原始位（压缩指令为 16 位值）；UNKNOWN 原样返回
    """
    if insn.opclass is OpClass.UNKNOWN:
        return insn.raw
    return _pack(_BY_MNEMONIC[insn.mnemonic], insn.rd, insn.rs1, insn.rs2, insn.imm)


def assemble(mnemonic: str, **fields: int) -> int:
    """
    由助记符和字段汇编一条指令

    使用示例:
        assemble("addi", rd=A7, rs1=ZERO, imm=64)
        assemble("c.sdsp", rs2=T0, imm=0)     # rs1=sp 自动补齐

    参数:
        mnemonic: 助记符（压缩指令带 c. 前缀）
        fields: rd / rs1 / rs2 / imm，未给出的隐含字段自动补齐

    返回:
        指令原始位

    异常:
        EncodingError: 字段超出范围
    """
    spec = _BY_MNEMONIC.get(mnemonic)
    if spec is None:
        raise EncodingError(f"不支持的助记符: {mnemonic}")
    values = {"rd": 0, "rs1": 0, "rs2": 0, "imm": 0}
    values.update(fields)
    for name, implied in spec.implied:
        if name not in fields:
            values[name] = values[implied] if isinstance(implied, str) else implied
    return _pack(spec, values["rd"], values["rs1"], values["rs2"], values["imm"])


def assemble_bytes(mnemonic: str, **fields: int) -> bytes:
    return assemble(mnemonic, **fields).to_bytes(_BY_MNEMONIC[mnemonic].width, "little")


def make_instruction(mnemonic: str, address: int = 0, **fields: int) -> Instruction:
    return decode_word(assemble(mnemonic, **fields), address)


def spec_fields(mnemonic: str) -> Dict[str, object]:
    """描述某个助记符的可变字段（语料生成和测试用）"""
    spec = _BY_MNEMONIC[mnemonic]
    return {
        "width": spec.width,
        "regs": [(name, hi - lo + 1, offset) for name, hi, lo, offset in spec.regs],
        "imm_bits": sorted({b for _, b in spec.imm_bits}),
        "signed": spec.signed,
        "nonzero": spec.nonzero,
    }


# ---------------------------------------------------------------------------
# 分类与可达性
# ---------------------------------------------------------------------------

def is_relocatable(insn: Instruction) -> bool:
    """与位置无关、可以搬到别处执行的指令"""
    return insn.opclass in RELOCATABLE_CLASSES


def is_control_flow(insn: Instruction) -> bool:
    return insn.opclass in CONTROL_FLOW_CLASSES


def direct_target(insn: Instruction) -> Optional[int]:
    """直接跳转/分支的目标地址；其它指令返回 None"""
    if insn.opclass in DIRECT_JUMP_CLASSES:
        return insn.address + insn.imm
    return None


def written_register(insn: Instruction) -> Optional[int]:
    """指令写入的通用寄存器（x0 除外）"""
    if insn.opclass in _WRITES_RD and insn.rd != ZERO:
        return insn.rd
    return None


def jal_in_range(from_pc: int, target: int) -> bool:
    return JAL_REACH.contains(target - from_pc)


def auipc_jalr_in_range(from_pc: int, target: int) -> bool:
    return AUIPC_JALR_REACH.contains(target - from_pc)


def split_pcrel(delta: int) -> Tuple[int, int]:
    """
    把 pc 相对偏移拆成 auipc 高位和 12 位有符号低位

    返回:
        (hi, lo)，满足 (hi << 12) + lo == delta
    """
    hi = (delta + 0x800) >> 12
    lo = delta - (hi << 12)
    return hi, lo


def encode_jal(link_register: int, from_pc: int, target: int) -> int:
    """
    生成 jal link, target

    异常:
        JumpRangeError: 偏移超出 ±1 MiB
    """
    if not jal_in_range(from_pc, target):
        raise JumpRangeError(
            f"jal 无法从 0x{from_pc:x} 到达 0x{target:x}（偏移 {target - from_pc}）")
    return assemble("jal", rd=link_register, imm=target - from_pc)


def encode_auipc_jalr_pair(scratch_register: int, from_pc: int, target: int,
                           link_register: Optional[int] = None) -> Tuple[int, int]:
    """
    生成 auipc scratch, hi; jalr link, lo(scratch)

    参数:
        scratch_register: 承载高位地址的寄存器
        from_pc: auipc 所在地址
        target: 跳转目标
        link_register: jalr 的链接寄存器，默认与 scratch 相同

    返回:
        两个 32 位指令字

    异常:
        JumpRangeError: 偏移超出 [-0x80000800, 0x7ffff7fe]
    """
    if not auipc_jalr_in_range(from_pc, target):
        raise JumpRangeError(
            f"auipc+jalr 无法从 0x{from_pc:x} 到达 0x{target:x}（偏移 {target - from_pc:#x}）")
    link = scratch_register if link_register is None else link_register
    hi, lo = split_pcrel(target - from_pc)
    return (assemble("auipc", rd=scratch_register, imm=hi << 12),
            assemble("jalr", rd=link, rs1=scratch_register, imm=lo))


_CONSTANT_SETTERS = frozenset({"addi", "ori", "xori", "addiw", "c.li"})


def extract_register_setter_immediate(insn: Instruction, reg: int) -> Optional[int]:
    """
    识别 li 惯用法：从 x0 出发、以立即数写入 reg 的指令

    返回:
        无符号 64 位常量；不是常量设置指令时返回 None
    """
    if reg == ZERO or insn.rd != reg or insn.rs1 != ZERO:
        return None
    if insn.mnemonic not in _CONSTANT_SETTERS:
        return None
    return insn.imm & MASK64


def sweep(data: bytes, base: int) -> List[Instruction]:
    """
    线性扫描解码整段代码；尾部被截断的指令不返回
    """
    out = []
    offset = 0
    while offset < len(data):
        try:
            insn = decode(data, base + offset, offset)
        except TruncatedCodeError:
            break
        out.append(insn)
        offset += insn.width
    return out


def format_instructions(insns: Sequence[Instruction]) -> List[str]:
    return [f"0x{i.address:x}: {i.text()}" for i in insns]
