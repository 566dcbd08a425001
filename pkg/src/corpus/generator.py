"""
合成语料生成模块
生成类 libc 的系统调用包装函数代码镜像，并给出每个 ecall 的预期窗口、补丁类型和调用号
"""
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from src.core.errors import InfeasibleSpecError
from src.core.logger import Logger
from src.emulator.kernel import SYS_EXIT
from src.patcher.image import CodeImage, ImageOrigin
from src.patcher.isa import (
    A0, A1, A2, A3, A4, A5, A7, RA, SP, T0, T1, T2, ZERO,
    assemble_bytes,
    spec_fields,
)
from src.patcher.planner import PatchKind, PatchThresholds


UNPATCHABLE = "UNPATCHABLE"
DEFAULT_BASE = 0x10000
DEFAULT_SYSCALLS = (56, 57, 59, 62, 63, 64, 172, 173, 220)
DEFAULT_DISTRIBUTION = {PatchKind.GATEWAY: 0.40, PatchKind.SMALL: 0.45, PatchKind.MIDDLE: 0.15}

S1 = 9
T3, T4, T5, T6 = 28, 29, 30, 31
WRITABLE = (A0, A1, A2, A3, A4, A5, T0, T1, T2, T3, T4, T5, T6)
READABLE = WRITABLE + (ZERO,)
# 压缩算术指令只能用 x8..x15
COMPACT_WRITABLE = (A0, A1, A2, A3, A4, A5)

ROLE_SYSCALL = "syscall"
ROLE_EXIT = "exit"
EXIT_LABEL = "exit"

_KIND_ORDER = (PatchKind.GATEWAY.value, PatchKind.MIDDLE.value, PatchKind.SMALL.value, UNPATCHABLE)


@dataclass(frozen=True)
class CorpusSpec:
    """
    语料规格

    window_distribution 各比例之和不超过 1，剩余部分生成为构造上不可补丁的位置
    """
    n_sites: int = 20
    window_distribution: Dict[PatchKind, float] = field(
        default_factory=lambda: dict(DEFAULT_DISTRIBUTION))
    rvc_enabled: bool = True
    seed: int = 0
    syscall_numbers: Tuple[int, ...] = DEFAULT_SYSCALLS
    base: int = DEFAULT_BASE
    max_window_bytes: int = 40
    include_six_byte_fixture: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> 'CorpusSpec':
        """从 JSON/YAML 文档构造（CLI 的 corpus-spec 输入）"""
        dist = data.get("window_distribution")
        return cls(
            n_sites=int(data.get("n_sites", 20)),
            window_distribution=(
                {PatchKind(k.upper()): float(v) for k, v in dist.items()}
                if dist is not None else dict(DEFAULT_DISTRIBUTION)),
            rvc_enabled=bool(data.get("rvc_enabled", True)),
            seed=int(data.get("seed", 0)),
            syscall_numbers=tuple(int(n) for n in data.get("syscall_numbers", DEFAULT_SYSCALLS)),
            base=int(data.get("base", DEFAULT_BASE)),
            max_window_bytes=int(data.get("max_window_bytes", 40)),
            include_six_byte_fixture=bool(data.get("include_six_byte_fixture", True)),
        )


@dataclass(frozen=True)
class SiteAnnotation:
    address: int
    intended_kind: str
    window_bytes: int
    a7_value: int
    a7_static: bool
    wrapper: int
    role: str = ROLE_SYSCALL

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "address": self.address,
            "intended_kind": self.intended_kind,
            "window_bytes": self.window_bytes,
            "a7_value": self.a7_value,
            "a7_static": self.a7_static,
            "wrapper": self.wrapper,
        }


@dataclass
class CorpusProgram:
    image: CodeImage
    entry: int
    annotations: List[SiteAnnotation]
    rvc: bool = True

    def to_dict(self) -> dict:
        return {
            "base": self.image.base,
            "length": len(self.image),
            "entry": self.entry,
            "rvc": self.rvc,
            "sites": [a.to_dict() for a in self.annotations],
        }


class _Assembler:
    """顺序汇编器：跳转目标用标签表示，最后统一回填"""

    def __init__(self, base: int):
        self.base = base
        self.buf = bytearray()
        self.labels: Dict[str, int] = {}
        self.fixups: List[Tuple[int, str, str, dict]] = []

    @property
    def pc(self) -> int:
        return self.base + len(self.buf)

    def label(self, name: str) -> None:
        self.labels[name] = self.pc

    def emit(self, mnemonic: str, **fields: int) -> int:
        address = self.pc
        self.buf += assemble_bytes(mnemonic, **fields)
        return address

    def raw(self, data: bytes) -> None:
        self.buf += data

    def jump(self, mnemonic: str, label: str, **fields: int) -> None:
        self.fixups.append((len(self.buf), mnemonic, label, fields))
        self.buf += bytes(spec_fields(mnemonic)["width"])

    def finish(self) -> bytes:
        for offset, mnemonic, label, fields in self.fixups:
            data = assemble_bytes(mnemonic, imm=self.labels[label] - (self.base + offset), **fields)
            self.buf[offset:offset + len(data)] = data
        return bytes(self.buf)


# ---------------------------------------------------------------------------
# 填充指令
# ---------------------------------------------------------------------------

def _filler32(rng: random.Random) -> bytes:
    rd = rng.choice(WRITABLE)
    rs1 = rng.choice(READABLE)
    rs2 = rng.choice(READABLE)
    choice = rng.randrange(9)
    if choice == 0:
        return assemble_bytes(rng.choice(("addi", "xori", "ori", "andi", "addiw")),
                              rd=rd, rs1=rs1, imm=rng.randint(-2048, 2047))
    if choice == 1:
        return assemble_bytes(rng.choice(("slli", "srli", "srai")), rd=rd, rs1=rs1,
                              imm=rng.randint(0, 63))
    if choice in (2, 3):
        return assemble_bytes(rng.choice(("add", "sub", "xor", "or", "and", "mul", "addw", "sltu")),
                              rd=rd, rs1=rs1, rs2=rs2)
    if choice == 4:
        return assemble_bytes("lui", rd=rd, imm=rng.randint(-(1 << 19), (1 << 19) - 1) << 12)
    if choice == 5:
        return assemble_bytes(rng.choice(("ld", "lw")), rd=rd, rs1=SP, imm=rng.choice((0, 8)))
    if choice == 6:
        return assemble_bytes("sd", rs1=SP, rs2=rs2, imm=0)
    if choice == 7:
        return assemble_bytes("divu", rd=rd, rs1=rs1, rs2=rs2)
    return assemble_bytes("addi", rd=rd, rs1=ZERO, imm=rng.randint(-2048, 2047))


def _filler16(rng: random.Random) -> bytes:
    rd = rng.choice(WRITABLE)
    src = rng.choice(WRITABLE)
    choice = rng.randrange(8)
    if choice == 0:
        return assemble_bytes("c.li", rd=rd, imm=rng.randint(-32, 31))
    if choice == 1:
        return assemble_bytes("c.addi", rd=rd, imm=rng.choice([i for i in range(-32, 32) if i]))
    if choice == 2:
        return assemble_bytes(rng.choice(("c.mv", "c.add")), rd=rd, rs2=src)
    if choice == 3:
        return assemble_bytes("c.slli", rd=rd, imm=rng.randint(1, 63))
    if choice == 4:
        return assemble_bytes("c.ldsp", rd=rd, imm=rng.choice((0, 8)))
    if choice == 5:
        return assemble_bytes("c.sdsp", rs2=src, imm=0)
    if choice == 6:
        return assemble_bytes(rng.choice(("c.xor", "c.and", "c.or", "c.sub", "c.addw")),
                              rd=rng.choice(COMPACT_WRITABLE), rs2=rng.choice(COMPACT_WRITABLE))
    return assemble_bytes("c.lui", rd=rd, imm=rng.choice([i for i in range(-32, 32) if i]) << 12)


def fillers(rng: random.Random, nbytes: int, rvc: bool) -> bytes:
    """
    生成恰好 nbytes 字节的可重定位填充指令

    只写 a0-a5 和 t0-t6；访存只用 sp 的 0/8 槽位，写只写 0 槽位
    """
    if nbytes < 0 or nbytes % 2 or (not rvc and nbytes % 4):
        raise InfeasibleSpecError(f"无法生成 {nbytes} 字节的填充（rvc={rvc}）")
    out = bytearray()
    while len(out) < nbytes:
        remaining = nbytes - len(out)
        use_compressed = rvc and (remaining == 2 or rng.random() < 0.5)
        out += _filler16(rng) if use_compressed else _filler32(rng)
    return bytes(out)


def _split(rng: random.Random, total: int, unit: int) -> Tuple[int, int]:
    pre = rng.randrange(0, total // unit + 1) * unit
    return pre, total - pre


# ---------------------------------------------------------------------------
# 包装函数
# ---------------------------------------------------------------------------

def _ret(asm: _Assembler, rvc: bool) -> None:
    if rvc:
        asm.emit("c.jr", rs1=RA)
    else:
        asm.emit("jalr", rd=ZERO, rs1=RA, imm=0)


def _set_a7(asm: _Assembler, number: int, known: bool) -> None:
    if known:
        asm.emit("addi", rd=A7, rs1=ZERO, imm=number)
    else:
        asm.emit("addi", rd=T2, rs1=ZERO, imm=number)
        asm.emit("add", rd=A7, rs1=ZERO, rs2=T2)


def _clamp(asm: _Assembler) -> None:
    # auipc 与位置相关，窗口不能越过它
    asm.emit("auipc", rd=T1, imm=0)


def _core_window(asm: _Assembler, rng: random.Random, length: int, spare: int,
                 unit: int, rvc: bool) -> Tuple[int, int]:
    """
    ecall 两侧各放一段核心填充（合计 length - 4 字节，保证存在恰好 length 字节的区域），
    外侧再放至多 spare 字节的额外填充

    返回:
        (ecall 地址, 窗口字节数)
    """
    core_pre, core_post = _split(rng, length - 4, unit)
    extra_pre, extra_post = _split(rng, rng.randrange(0, spare // unit + 1) * unit, unit)
    window_start = asm.pc
    asm.raw(fillers(rng, extra_pre, rvc) + fillers(rng, core_pre, rvc))
    ecall = asm.emit("ecall")
    asm.raw(fillers(rng, core_post, rvc) + fillers(rng, extra_post, rvc))
    return ecall, asm.pc - window_start


def _wrapper(asm: _Assembler, rng: random.Random, kind: str, number: int,
             thresholds: PatchThresholds, rvc: bool, max_window: int) -> Tuple[int, int, bool]:
    """
    生成一个包装函数

    返回:
        (ecall 地址, 预期窗口字节数, a7 是否可静态提取)
    """
    unit = 2 if rvc else 4
    if kind == PatchKind.GATEWAY.value:
        _set_a7(asm, number, True)
        _clamp(asm)
        spare = max(0, max_window - thresholds.gateway)
        ecall, window = _core_window(asm, rng, thresholds.gateway, spare, unit, rvc)
        _ret(asm, rvc)
        return ecall, window, True

    if kind == PatchKind.MIDDLE.value:
        known = rng.random() < 0.5
        _set_a7(asm, number, known)
        _clamp(asm)
        # 窗口必须小于 GATEWAY 长度
        spare = max(0, min(thresholds.gateway - thresholds.middle - unit, max_window - thresholds.middle))
        ecall, window = _core_window(asm, rng, thresholds.middle, spare, unit, rvc)
        _ret(asm, rvc)
        return ecall, window, known

    if kind == PatchKind.SMALL.value:
        _set_a7(asm, number, True)
        _clamp(asm)
        pre = rng.randrange(0, (thresholds.middle - 4) // unit) * unit
        window_start = asm.pc
        asm.raw(fillers(rng, pre, rvc))
        ecall = asm.emit("ecall")
        window = asm.pc - window_start
        _ret(asm, rvc)
        return ecall, window, True

    _set_a7(asm, number, False)
    _clamp(asm)
    ecall = asm.emit("ecall")
    _ret(asm, rvc)
    return ecall, 4, False


def _exit_wrapper(asm: _Assembler, rng: random.Random, thresholds: PatchThresholds,
                  rvc: bool) -> SiteAnnotation:
    """生成以 exit 结束程序的包装函数，窗口恰好容纳一个 GATEWAY"""
    asm.label(EXIT_LABEL)
    wrapper = asm.pc
    ecall, window, known = _wrapper(asm, rng, PatchKind.GATEWAY.value, SYS_EXIT, thresholds, rvc,
                                    thresholds.gateway)
    return SiteAnnotation(ecall, PatchKind.GATEWAY.value, window, SYS_EXIT, known, wrapper, ROLE_EXIT)


def _six_byte_fixture(asm: _Assembler, number: int, tag: str) -> int:
    """bne x0,x0,L; li a7,N; auipc t1,0; c.li a0,1; ecall; L: c.mv a1,a0; ret"""
    asm.jump("bne", tag, rs1=ZERO, rs2=ZERO)
    asm.emit("addi", rd=A7, rs1=ZERO, imm=number)
    _clamp(asm)
    asm.emit("c.li", rd=A0, imm=1)
    ecall = asm.emit("ecall")
    asm.label(tag)
    asm.emit("c.mv", rd=A1, rs2=A0)
    asm.emit("c.jr", rs1=RA)
    return ecall


def _main(asm: _Assembler, wrappers: Sequence[str], rvc: bool) -> None:
    """依次调用每个包装函数，最后在栈帧仍有效时调用 exit 包装函数；其后的返回序列只在 exit 被旁路时执行"""
    if rvc:
        asm.emit("c.addi16sp", imm=-16)
        asm.emit("c.sdsp", rs2=RA, imm=8)
    else:
        asm.emit("addi", rd=SP, rs1=SP, imm=-16)
        asm.emit("sd", rs1=SP, rs2=RA, imm=8)
    for name in wrappers:
        asm.jump("jal", name, rd=RA)
    asm.jump("jal", EXIT_LABEL, rd=RA)
    if rvc:
        asm.emit("c.ldsp", rd=RA, imm=8)
        asm.emit("c.addi16sp", imm=16)
    else:
        asm.emit("ld", rd=RA, rs1=SP, imm=8)
        asm.emit("addi", rd=SP, rs1=SP, imm=16)
    _ret(asm, rvc)


def kind_counts(n_sites: int, distribution: Dict[PatchKind, float]) -> Dict[str, int]:
    """
    按最大余数法把比例换算成各类数量，剩余比例计为 UNPATCHABLE

    异常:
        InfeasibleSpecError: 比例为负或之和超过 1
    """
    fractions = {k.value: Fraction(v).limit_denominator(10 ** 6) for k, v in distribution.items()}
    if any(f < 0 for f in fractions.values()):
        raise InfeasibleSpecError("比例不能为负数")
    total = sum(fractions.values(), Fraction(0))
    if total > 1:
        raise InfeasibleSpecError(f"比例之和 {float(total):.3f} 超过 1")
    fractions[UNPATCHABLE] = 1 - total

    exact = {k: fractions.get(k, Fraction(0)) * n_sites for k in _KIND_ORDER}
    counts = {k: int(v) for k, v in exact.items()}
    leftover = n_sites - sum(counts.values())
    by_remainder = sorted(_KIND_ORDER, key=lambda k: (-(exact[k] - counts[k]), _KIND_ORDER.index(k)))
    for k in by_remainder[:leftover]:
        counts[k] += 1
    return counts


def generate(spec: CorpusSpec) -> CorpusProgram:
    """
    生成合成语料程序

    参数:
        spec: 语料规格

    返回:
        CorpusProgram；同一 seed 生成的字节完全相同

    异常:
        InfeasibleSpecError: 规格无法构造
    """
    logger = Logger.get_logger("Corpus")
    rvc = spec.rvc_enabled
    thresholds = PatchThresholds.for_rvc(rvc)
    counts = kind_counts(spec.n_sites, spec.window_distribution)

    if thresholds.gateway > spec.max_window_bytes:
        raise InfeasibleSpecError(
            f"exit 位置需要 {thresholds.gateway} 字节，超过窗口上限 {spec.max_window_bytes}")
    for kind in PatchKind:
        if counts[kind.value] and thresholds.length_of(kind) > spec.max_window_bytes:
            raise InfeasibleSpecError(
                f"{kind.value} 需要 {thresholds.length_of(kind)} 字节，超过窗口上限 {spec.max_window_bytes}")
    if (counts[PatchKind.MIDDLE.value] or counts[PatchKind.SMALL.value]) \
            and not counts[PatchKind.GATEWAY.value]:
        raise InfeasibleSpecError("请求了 MIDDLE/SMALL 但没有任何 GATEWAY")
    if spec.n_sites and not spec.syscall_numbers:
        raise InfeasibleSpecError("系统调用号池为空")

    rng = random.Random(spec.seed)
    kinds = [k for k in _KIND_ORDER for _ in range(counts[k])]
    rng.shuffle(kinds)
    fixture_index = None
    if spec.include_six_byte_fixture and rvc and PatchKind.SMALL.value in kinds:
        fixture_index = kinds.index(PatchKind.SMALL.value)

    asm = _Assembler(spec.base)
    names = [f"wrapper_{i}" for i in range(len(kinds))]
    _main(asm, names, rvc)

    annotations = []
    for i, (kind, name) in enumerate(zip(kinds, names)):
        number = rng.choice(spec.syscall_numbers)
        asm.label(name)
        wrapper = asm.pc
        if i == fixture_index:
            ecall, window, known = _six_byte_fixture(asm, number, f"{name}_join"), 6, True
        else:
            ecall, window, known = _wrapper(asm, rng, kind, number, thresholds, rvc,
                                            spec.max_window_bytes)
        annotations.append(SiteAnnotation(ecall, kind, window, number, known, wrapper))
    annotations.append(_exit_wrapper(asm, rng, thresholds, rvc))

    data = asm.finish()
    logger.debug(f"生成语料: {len(kinds)} 个位置（另有 1 个 exit）, {len(data)} 字节, seed={spec.seed}")
    image = CodeImage(base=spec.base, data=data, origin=ImageOrigin.RAW)
    return CorpusProgram(image=image, entry=spec.base, annotations=annotations, rvc=rvc)


def loop_program(kind: PatchKind, iterations: int, number: int = 172, rvc: bool = True,
                 base: int = DEFAULT_BASE, seed: int = 0) -> CorpusProgram:
    """
    基准程序：循环 iterations 次调用同一个系统调用包装函数

    MIDDLE/SMALL 需要 GATEWAY 做中转，因此总是附带一个不会被调用的 GATEWAY 包装函数；
    循环结束后经 exit 包装函数终止（也是一个 GATEWAY 位置）

    参数:
        kind: 被调用包装函数的补丁类型
        iterations: 循环次数 K（可以为 0）
        number: 系统调用号
    """
    if iterations < 0:
        raise InfeasibleSpecError("循环次数不能为负数")
    rng = random.Random(seed)
    thresholds = PatchThresholds.for_rvc(rvc)
    asm = _Assembler(base)

    if rvc:
        asm.emit("c.addi16sp", imm=-16)
        asm.emit("c.sdsp", rs2=RA, imm=8)
    else:
        asm.emit("addi", rd=SP, rs1=SP, imm=-16)
        asm.emit("sd", rs1=SP, rs2=RA, imm=8)
    asm.emit("lui", rd=S1, imm=((iterations + 0x800) >> 12) << 12)
    asm.emit("addiw", rd=S1, rs1=S1, imm=iterations - (((iterations + 0x800) >> 12) << 12))
    asm.label("loop")
    asm.jump("beq", "done", rs1=S1, rs2=ZERO)
    asm.jump("jal", "target", rd=RA)
    asm.emit("addi", rd=S1, rs1=S1, imm=-1)
    asm.jump("jal", "loop", rd=ZERO)
    asm.label("done")
    asm.jump("jal", EXIT_LABEL, rd=RA)
    if rvc:
        asm.emit("c.ldsp", rd=RA, imm=8)
        asm.emit("c.addi16sp", imm=16)
    else:
        asm.emit("ld", rd=RA, rs1=SP, imm=8)
        asm.emit("addi", rd=SP, rs1=SP, imm=16)
    _ret(asm, rvc)

    annotations = []
    if kind is not PatchKind.GATEWAY:
        asm.label("hub")
        hub = asm.pc
        ecall, window, known = _wrapper(asm, rng, PatchKind.GATEWAY.value, number, thresholds,
                                        rvc, thresholds.gateway)
        annotations.append(SiteAnnotation(ecall, PatchKind.GATEWAY.value, window, number, known, hub))
    asm.label("target")
    target = asm.pc
    ecall, window, known = _wrapper(asm, rng, kind.value, number, thresholds, rvc,
                                    thresholds.gateway)
    annotations.append(SiteAnnotation(ecall, kind.value, window, number, known, target))
    annotations.append(_exit_wrapper(asm, rng, thresholds, rvc))

    image = CodeImage(base=base, data=asm.finish(), origin=ImageOrigin.RAW)
    return CorpusProgram(image=image, entry=base, annotations=annotations, rvc=rvc)
