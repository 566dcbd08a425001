"""
代码生成模块
为每个补丁生成机器码，并生成共享入口点、共享 trampoline、
重定位指令表（含识别键）和位图跳转表
"""
from dataclasses import dataclass, field
from math import ceil
from typing import Dict, Iterable, List, Optional, Tuple

from src.core.errors import CodegenError, JumpRangeError, PlacementError
from src.core.logger import Logger
from src.patcher.image import CodeImage
from src.patcher.isa import (
    A7,
    MASK64,
    RA,
    SP,
    T0,
    ZERO,
    assemble_bytes,
    encode_auipc_jalr_pair,
    encode_jal,
    split_pcrel,
    auipc_jalr_in_range,
    jal_in_range,
)
from src.patcher.planner import PatchKind, Plan, PlannedPatch, align_up, default_runtime_base


FRAME_SIZE = 256
BLOCK_STRIDE = 64
BLOCK_HEADER = 8
KEY_BYTES = 8
GATE_BYTES = 4
SAVED_REGISTERS = (1,) + tuple(range(3, 32))
CLONE_SYSCALLS = frozenset({220, 435})


@dataclass(frozen=True)
class Blob:
    """一段放在固定地址的运行时代码或数据"""
    address: int
    data: bytes

    @property
    def length(self) -> int:
        return len(self.data)

    @property
    def end(self) -> int:
        return self.address + len(self.data)

    def placement(self) -> dict:
        return {"address": self.address, "length": self.length}


@dataclass(frozen=True)
class RuntimeRecord:
    """
    运行时目录中的一条补丁记录

    gateway_key 对 GATEWAY 是自身的键，对 MIDDLE/SMALL 是所指派 GATEWAY 的键
    """
    key: int
    kind: PatchKind
    region_start: int
    region_length: int
    gateway_key: int
    block_address: int
    gate_address: int
    syscall_number: Optional[int] = None
    a7_clobbered: bool = False

    @property
    def code_address(self) -> int:
        return self.block_address + BLOCK_HEADER

    @property
    def resume_address(self) -> int:
        return self.gate_address + GATE_BYTES

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "kind": self.kind.value,
            "region_start": self.region_start,
            "region_length": self.region_length,
            "gateway_key": self.gateway_key,
            "block_address": self.block_address,
            "code_address": self.code_address,
            "gate_address": self.gate_address,
            "syscall_number": self.syscall_number,
            "a7_clobbered": self.a7_clobbered,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RuntimeRecord':
        return cls(
            key=int(data["key"]),
            kind=PatchKind(data["kind"]),
            region_start=int(data["region_start"]),
            region_length=int(data["region_length"]),
            gateway_key=int(data["gateway_key"]),
            block_address=int(data["block_address"]),
            gate_address=int(data["gate_address"]),
            syscall_number=data.get("syscall_number"),
            a7_clobbered=bool(data.get("a7_clobbered", False)),
        )


@dataclass
class RuntimeDirectory:
    """拦截运行时需要的全部查找信息"""
    entry_gate: int
    text_base: int
    text_length: int
    bitmap_address: int
    records: List[RuntimeRecord]
    by_key: Dict[int, RuntimeRecord] = field(default_factory=dict, repr=False)
    by_gate: Dict[int, RuntimeRecord] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.by_key = {r.key: r for r in self.records}
        self.by_gate = {r.gate_address: r for r in self.records}

    def member(self, gateway_key: int, key: int, kind: PatchKind) -> Optional[RuntimeRecord]:
        record = self.by_key.get(key)
        if record and record.kind is kind and record.gateway_key == gateway_key:
            return record
        return None

    def to_dict(self) -> dict:
        return {
            "entry_gate": self.entry_gate,
            "text_base": self.text_base,
            "text_length": self.text_length,
            "bitmap_address": self.bitmap_address,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RuntimeDirectory':
        return cls(
            entry_gate=int(data["entry_gate"]),
            text_base=int(data["text_base"]),
            text_length=int(data["text_length"]),
            bitmap_address=int(data["bitmap_address"]),
            records=[RuntimeRecord.from_dict(r) for r in data["records"]],
        )


@dataclass(frozen=True)
class FootprintReport:
    relocated_bytes: int
    trampoline_bytes: int
    bitmap_bytes: int
    dispatch_bytes: int
    per_patch_bytes: int
    n_patches: int

    @property
    def total_bytes(self) -> int:
        # 识别键存放在重定位块头部，dispatch_bytes 已包含在 relocated_bytes 中
        return self.relocated_bytes + self.trampoline_bytes + self.bitmap_bytes

    def to_dict(self) -> dict:
        return {
            "relocated_bytes": self.relocated_bytes,
            "trampoline_bytes": self.trampoline_bytes,
            "bitmap_bytes": self.bitmap_bytes,
            "dispatch_bytes": self.dispatch_bytes,
            "per_patch_bytes": self.per_patch_bytes,
            "n_patches": self.n_patches,
            "total_bytes": self.total_bytes,
        }


@dataclass
class PatchArtifacts:
    patch_bytes: Dict[int, bytes]
    entry_point: Blob
    trampoline: Blob
    relocated_table: Blob
    bitmap: Blob
    dispatch_map: Dict[int, int]
    runtime: RuntimeDirectory
    rvc: bool = True
    footprint: Optional[FootprintReport] = None

    def blobs(self) -> Dict[str, Blob]:
        return {
            "entry_point": self.entry_point,
            "trampoline": self.trampoline,
            "relocated_table": self.relocated_table,
            "bitmap": self.bitmap,
        }

    def to_metadata(self, image: CodeImage) -> dict:
        """旁路元数据文档（JSON 可序列化）"""
        return {
            "base": image.base,
            "text_length": len(image),
            "origin": image.origin.value,
            "rvc": self.rvc,
            "blobs": {name: blob.placement() for name, blob in self.blobs().items()},
            "runtime": self.runtime.to_dict(),
            "patches": [
                {"region_start": start, "length": len(data), "bytes": data.hex()}
                for start, data in sorted(self.patch_bytes.items())
            ],
            "footprint": self.footprint.to_dict() if self.footprint else None,
        }


# ---------------------------------------------------------------------------
# 指令片段
# ---------------------------------------------------------------------------

def _push(reg: int, rvc: bool) -> bytes:
    """sp -= 16; sd reg, 0(sp)"""
    if rvc:
        return assemble_bytes("c.addi16sp", imm=-16) + assemble_bytes("c.sdsp", rs2=reg, imm=0)
    return (assemble_bytes("addi", rd=SP, rs1=SP, imm=-16)
            + assemble_bytes("sd", rs1=SP, rs2=reg, imm=0))


def _pop(reg: int, rvc: bool) -> bytes:
    """ld reg, 0(sp); sp += 16"""
    if rvc:
        return assemble_bytes("c.ldsp", rd=reg, imm=0) + assemble_bytes("c.addi16sp", imm=16)
    return (assemble_bytes("ld", rd=reg, rs1=SP, imm=0)
            + assemble_bytes("addi", rd=SP, rs1=SP, imm=16))


def _words(*words: int) -> bytes:
    return b"".join(w.to_bytes(4, "little") for w in words)


def _signed(value: int) -> int:
    value &= MASK64
    return value - (1 << 64) if value >> 63 else value


def _check_region(p: PlannedPatch, data: bytes) -> bytes:
    if len(data) != p.region_length:
        raise CodegenError(
            f"{p.kind.value} 补丁长度 {len(data)} 与规划区域 {p.region_length} 不符")
    return data


def emit_gateway_patch(p: PlannedPatch, entry_point_addr: int) -> bytes:
    """
    生成 GATEWAY 补丁

    布局: 压栈 t0 / auipc t0 / jalr t0 / 出栈 t0，auipc+jalr 跳转范围约 ±2 GiB

    参数:
        p: GATEWAY 类规划补丁
        entry_point_addr: 共享入口点地址

    返回:
        region_length 字节的补丁

    异常:
        CodegenError: 类型不符或入口点不可达
    """
    if p.kind is not PatchKind.GATEWAY:
        raise CodegenError(f"0x{p.site.address:x} 不是 GATEWAY 补丁")
    try:
        auipc, jalr = encode_auipc_jalr_pair(T0, p.jump_pc, entry_point_addr)
    except JumpRangeError as e:
        raise CodegenError(f"GATEWAY 0x{p.site.address:x}: {e}") from e
    return _check_region(p, _push(T0, p.rvc) + _words(auipc, jalr) + _pop(T0, p.rvc))


def emit_middle_patch(p: PlannedPatch, gateway_addr: int) -> bytes:
    """
    生成 MIDDLE 补丁：保存 ra，jal ra 跳到 GATEWAY，返回后恢复 ra

    到达 GATEWAY 时 ra == jal 地址 + 4，即该补丁的识别键。
    非 RVC 时只剩一条指令的位置：重定位块返回前已把 sp 复原，
    并把 ra 的原值写在 -16(sp)，补丁末尾用 ld ra, -16(sp) 取回
    """
    if p.kind is not PatchKind.MIDDLE:
        raise CodegenError(f"0x{p.site.address:x} 不是 MIDDLE 补丁")
    if gateway_addr == p.jump_pc:
        raise CodegenError(f"MIDDLE 0x{p.site.address:x} 的 GATEWAY 地址与 jal 地址相同")
    try:
        jal = encode_jal(RA, p.jump_pc, gateway_addr)
    except JumpRangeError as e:
        raise CodegenError(f"MIDDLE 0x{p.site.address:x}: {e}") from e
    tail = _pop(RA, True) if p.rvc else assemble_bytes("ld", rd=RA, rs1=SP, imm=-16)
    return _check_region(p, _push(RA, p.rvc) + _words(jal) + tail)


def emit_small_patch(p: PlannedPatch, gateway_addr: int) -> bytes:
    """生成 SMALL 补丁：单条 jal a7，a7 的原值由运行时按静态提取的调用号恢复"""
    if p.kind is not PatchKind.SMALL:
        raise CodegenError(f"0x{p.site.address:x} 不是 SMALL 补丁")
    if p.syscall_number is None:
        raise CodegenError(f"SMALL 0x{p.site.address:x} 缺少系统调用号")
    try:
        jal = encode_jal(A7, p.jump_pc, gateway_addr)
    except JumpRangeError as e:
        raise CodegenError(f"SMALL 0x{p.site.address:x}: {e}") from e
    return _check_region(p, _words(jal))


def emit_entry_point(rvc: bool = True) -> bytes:
    """
    共享入口点：分配 256 字节的帧，把 x1 和 x3..x31 存到 8*i(sp)，
    最后以 ebreak 作为入口门交给宿主侧运行时
    """
    if rvc:
        code = assemble_bytes("c.addi16sp", imm=-FRAME_SIZE)
        code += b"".join(assemble_bytes("c.sdsp", rs2=i, imm=8 * i) for i in SAVED_REGISTERS)
        return code + assemble_bytes("c.ebreak")
    code = assemble_bytes("addi", rd=SP, rs1=SP, imm=-FRAME_SIZE)
    code += b"".join(assemble_bytes("sd", rs1=SP, rs2=i, imm=8 * i) for i in SAVED_REGISTERS)
    return code + assemble_bytes("ebreak")


def emit_trampoline(rvc: bool = True) -> bytes:
    """共享 trampoline：jr t0; jr ra"""
    if rvc:
        return assemble_bytes("c.jr", rs1=T0) + assemble_bytes("c.jr", rs1=RA)
    return (assemble_bytes("jalr", rd=ZERO, rs1=T0, imm=0)
            + assemble_bytes("jalr", rd=ZERO, rs1=RA, imm=0))


def trampoline_slot(register: int, rvc: bool = True) -> int:
    """trampoline 中跳到指定寄存器的槽位偏移"""
    width = 2 if rvc else 4
    if register == T0:
        return 0
    if register == RA:
        return width
    raise CodegenError(f"trampoline 没有 x{register} 的槽位")


def _return_via_trampoline(reg: int, pc: int, key: int, trampoline_addr: int, rvc: bool,
                            spill_below_sp: bool = False) -> bytes:
    """
    保存 reg，令 reg = key，再经 trampoline 跳回补丁内的恢复指令

    spill_below_sp 为真时不移动 sp，只把 reg 写到 -16(sp)（非 RVC 的 MIDDLE）
    """
    if spill_below_sp:
        code = assemble_bytes("sd", rs1=SP, rs2=reg, imm=-16)
    else:
        code = _push(reg, rvc)
    auipc_pc = pc + len(code)
    delta = key - auipc_pc
    if not auipc_jalr_in_range(auipc_pc, key):
        raise PlacementError(f"重定位块 0x{auipc_pc:x} 无法用 auipc 取得键 0x{key:x}")
    hi, lo = split_pcrel(delta)
    code += assemble_bytes("auipc", rd=reg, imm=hi << 12)
    code += assemble_bytes("addi", rd=reg, rs1=reg, imm=lo)
    jal_pc = pc + len(code)
    target = trampoline_addr + trampoline_slot(reg, rvc)
    try:
        code += _words(encode_jal(ZERO, jal_pc, target))
    except JumpRangeError as e:
        raise PlacementError(f"重定位块无法到达 trampoline: {e}") from e
    return code


def _small_return(p: PlannedPatch, pc: int) -> Tuple[bytes, bool]:
    """恢复 a7 后直接跳回；超出 jal 范围时退化为 auipc+jalr（会留下 a7 = 键）"""
    code = assemble_bytes("addi", rd=A7, rs1=ZERO, imm=_signed(p.syscall_number))
    jal_pc = pc + len(code)
    if jal_in_range(jal_pc, p.key):
        return code + _words(encode_jal(ZERO, jal_pc, p.key)), False
    Logger.get_logger("CodeGen").warning(
        f"SMALL 0x{p.site.address:x} 的返回地址超出 jal 范围，改用 auipc+jalr，a7 将被改写")
    try:
        auipc, jalr = encode_auipc_jalr_pair(A7, pc, p.key, link_register=ZERO)
    except JumpRangeError as e:
        raise PlacementError(f"SMALL 0x{p.site.address:x}: {e}") from e
    return _words(auipc, jalr), True


def emit_relocated_block(p: PlannedPatch, block_address: int, trampoline_addr: int
                         ) -> Tuple[bytes, int, bool]:
    """
    生成一个 64 字节的重定位块

    布局: 8 字节识别键 | relocated_pre | ebreak（系统调用门）| relocated_post | 返回序列

    返回:
        (块字节, 门地址, a7 是否被改写)
    """
    code_start = block_address + BLOCK_HEADER
    body = b"".join(i.to_bytes() for i in p.relocated_pre)
    gate_address = code_start + len(body)
    body += assemble_bytes("ebreak")
    body += b"".join(i.to_bytes() for i in p.relocated_post)

    clobbered = False
    pc = code_start + len(body)
    if p.kind is PatchKind.SMALL:
        tail, clobbered = _small_return(p, pc)
    else:
        tail = _return_via_trampoline(p.link_register, pc, p.key, trampoline_addr, p.rvc,
                                      spill_below_sp=p.kind is PatchKind.MIDDLE and not p.rvc)
    body += tail

    block = p.key.to_bytes(KEY_BYTES, "little") + body
    if len(block) > BLOCK_STRIDE:
        raise CodegenError(f"0x{p.site.address:x} 的重定位块 {len(block)} 字节超过 {BLOCK_STRIDE}")
    return block.ljust(BLOCK_STRIDE, b"\x00"), gate_address, clobbered


def bitmap_length(text_length: int, alignment: int = 2) -> int:
    """每个对齐单元一位"""
    return ceil(text_length / alignment / 8)


def build_bitmap(text_base: int, text_length: int, regions: Iterable[Tuple[int, int]]) -> bytes:
    """
    生成位图跳转表：补丁区域覆盖的每个 2 字节单元置位（低位在前）

    参数:
        regions: (起始地址, 长度)
    """
    bits = bytearray(bitmap_length(text_length))
    for start, length in regions:
        for addr in range(start, start + length, 2):
            unit = (addr - text_base) // 2
            bits[unit // 8] |= 1 << (unit % 8)
    return bytes(bits)


def bitmap_marks(bitmap: bytes, text_base: int, address: int) -> bool:
    unit = (address - text_base) // 2
    if unit < 0 or unit // 8 >= len(bitmap):
        return False
    return bool(bitmap[unit // 8] >> (unit % 8) & 1)


@dataclass(frozen=True)
class RuntimeLayout:
    entry_address: int
    trampoline_address: int
    table_base: int
    bitmap_address: int


def layout_runtime(runtime_base: int, n_patches: int, rvc: bool = True) -> RuntimeLayout:
    entry_size = len(emit_entry_point(rvc))
    trampoline = align_up(runtime_base + entry_size, 8)
    table = align_up(trampoline + len(emit_trampoline(rvc)), BLOCK_STRIDE)
    bitmap = align_up(table + BLOCK_STRIDE * n_patches, 8)
    return RuntimeLayout(runtime_base, trampoline, table, bitmap)


def build_runtime(plan: Plan, image: CodeImage, runtime_base: Optional[int] = None) -> PatchArtifacts:
    """
    生成全部补丁和运行时代码块

    参数:
        plan: 规划结果
        image: 原始镜像
        runtime_base: 入口点地址，None 时使用规划时的入口点

    返回:
        PatchArtifacts

    异常:
        PlacementError: 运行时代码块超出某个补丁的可达范围
        CodegenError: 规划结果内部不一致
    """
    logger = Logger.get_logger("CodeGen")
    rvc = plan.rvc
    if runtime_base is None:
        runtime_base = plan.entry_address or default_runtime_base(image)
    if image.base <= runtime_base < image.end:
        raise PlacementError(f"运行时基地址 0x{runtime_base:x} 与代码段重叠")
    layout = layout_runtime(runtime_base, len(plan.patches), rvc)
    for g in plan.gateways():
        if not auipc_jalr_in_range(g.jump_pc, layout.entry_address):
            raise PlacementError(
                f"入口点 0x{layout.entry_address:x} 超出 GATEWAY 0x{g.site.address:x} 的 auipc+jalr 范围")

    gateway_keys = {g.region_start: g.key for g in plan.gateways()}
    patch_bytes: Dict[int, bytes] = {}
    records: List[RuntimeRecord] = []
    table = bytearray()

    for index, p in enumerate(plan.patches):
        if p.kind is PatchKind.GATEWAY:
            data = emit_gateway_patch(p, layout.entry_address)
            gateway_key = p.key
        else:
            if p.gateway_start not in gateway_keys:
                raise CodegenError(f"0x{p.site.address:x} 指派的 GATEWAY 不存在")
            emit = emit_middle_patch if p.kind is PatchKind.MIDDLE else emit_small_patch
            data = emit(p, p.gateway_start)
            gateway_key = gateway_keys[p.gateway_start]
        patch_bytes[p.region_start] = data

        block_address = layout.table_base + index * BLOCK_STRIDE
        block, gate, clobbered = emit_relocated_block(p, block_address, layout.trampoline_address)
        table += block
        records.append(RuntimeRecord(
            key=p.key, kind=p.kind, region_start=p.region_start, region_length=p.region_length,
            gateway_key=gateway_key, block_address=block_address, gate_address=gate,
            syscall_number=p.syscall_number, a7_clobbered=clobbered,
        ))

    keys = [r.key for r in records]
    if len(set(keys)) != len(keys):
        raise CodegenError("识别键重复")

    entry = emit_entry_point(rvc)
    bitmap = build_bitmap(image.base, len(image),
                          ((p.region_start, p.region_length) for p in plan.patches))
    runtime = RuntimeDirectory(
        entry_gate=layout.entry_address + len(entry) - (2 if rvc else 4),
        text_base=image.base,
        text_length=len(image),
        bitmap_address=layout.bitmap_address,
        records=records,
    )
    artifacts = PatchArtifacts(
        patch_bytes=patch_bytes,
        entry_point=Blob(layout.entry_address, entry),
        trampoline=Blob(layout.trampoline_address, emit_trampoline(rvc)),
        relocated_table=Blob(layout.table_base, bytes(table)),
        bitmap=Blob(layout.bitmap_address, bitmap),
        dispatch_map={r.key: r.region_start for r in records},
        runtime=runtime,
        rvc=rvc,
    )
    artifacts.footprint = account_footprint(artifacts)
    logger.info(f"代码生成完成: {len(records)} 个补丁, 入口点 0x{layout.entry_address:x}, "
                f"重定位表 0x{layout.table_base:x}")
    return artifacts


def account_footprint(artifacts: PatchArtifacts, n_patches: Optional[int] = None) -> FootprintReport:
    """统计运行时内存占用"""
    n = len(artifacts.dispatch_map) if n_patches is None else n_patches
    return FootprintReport(
        relocated_bytes=artifacts.relocated_table.length,
        trampoline_bytes=artifacts.trampoline.length,
        bitmap_bytes=artifacts.bitmap.length,
        dispatch_bytes=KEY_BYTES * n,
        per_patch_bytes=BLOCK_STRIDE,
        n_patches=n,
    )
