"""
补丁规划模块
按可用空间把每个 ecall 分为 GATEWAY / MIDDLE / SMALL 三类，
为 MIDDLE 和 SMALL 指派可达的 GATEWAY，并报告无法补丁的位置
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from src.core.logger import Logger
from src.patcher.analysis import (
    AnalysisResult,
    EcallSite,
    PatchWindow,
    SyscallNumberFact,
    analyze,
)
from src.patcher.image import CodeImage
from src.patcher.isa import A7, RA, T0, Instruction, auipc_jalr_in_range, jal_in_range


RUNTIME_ALIGNMENT = 0x1000

REASON_SMALL_WITHOUT_NUMBER = "small-without-known-number"
REASON_NO_REACHABLE_GATEWAY = "no-reachable-gateway"
REASON_ENTRY_OUT_OF_REACH = "entry-out-of-reach"


class PatchKind(Enum):
    GATEWAY = "GATEWAY"
    MIDDLE = "MIDDLE"
    SMALL = "SMALL"


@dataclass(frozen=True)
class PatchLayout:
    """
    某类补丁的字节布局

    jump_offset 是跳转指令（GATEWAY 为 auipc，其余为 jal）相对区域起点的偏移，
    key_offset 是识别键（跳转返回地址）相对区域起点的偏移
    """
    length: int
    jump_offset: int
    key_offset: int


_LAYOUTS: Dict[Tuple[PatchKind, bool], PatchLayout] = {
    (PatchKind.GATEWAY, True): PatchLayout(16, 4, 12),
    (PatchKind.GATEWAY, False): PatchLayout(24, 8, 16),
    (PatchKind.MIDDLE, True): PatchLayout(12, 4, 8),
    (PatchKind.MIDDLE, False): PatchLayout(16, 8, 12),
    (PatchKind.SMALL, True): PatchLayout(4, 0, 4),
    (PatchKind.SMALL, False): PatchLayout(4, 0, 4),
}

LINK_REGISTERS = {PatchKind.GATEWAY: T0, PatchKind.MIDDLE: RA, PatchKind.SMALL: A7}


def patch_layout(kind: PatchKind, rvc: bool = True) -> PatchLayout:
    return _LAYOUTS[(kind, rvc)]


@dataclass(frozen=True)
class PatchThresholds:
    gateway: int
    middle: int
    small: int

    @classmethod
    def for_rvc(cls, rvc: bool = True) -> 'PatchThresholds':
        return cls(
            gateway=patch_layout(PatchKind.GATEWAY, rvc).length,
            middle=patch_layout(PatchKind.MIDDLE, rvc).length,
            small=patch_layout(PatchKind.SMALL, rvc).length,
        )

    def length_of(self, kind: PatchKind) -> int:
        return {PatchKind.GATEWAY: self.gateway, PatchKind.MIDDLE: self.middle,
                PatchKind.SMALL: self.small}[kind]


@dataclass(frozen=True)
class PlannedPatch:
    site: EcallSite
    kind: PatchKind
    region_start: int
    region_length: int
    relocated_pre: Tuple[Instruction, ...]
    relocated_post: Tuple[Instruction, ...]
    syscall_number: Optional[int] = None
    gateway_start: Optional[int] = None
    rvc: bool = True

    @property
    def region_end(self) -> int:
        return self.region_start + self.region_length

    @property
    def layout(self) -> PatchLayout:
        return patch_layout(self.kind, self.rvc)

    @property
    def link_register(self) -> int:
        return LINK_REGISTERS[self.kind]

    @property
    def jump_pc(self) -> int:
        return self.region_start + self.layout.jump_offset

    @property
    def key(self) -> int:
        """跳转后链接寄存器中的返回地址，即补丁的唯一识别键"""
        return self.region_start + self.layout.key_offset

    def with_gateway(self, gateway_start: int) -> 'PlannedPatch':
        return PlannedPatch(self.site, self.kind, self.region_start, self.region_length,
                            self.relocated_pre, self.relocated_post, self.syscall_number,
                            gateway_start, self.rvc)

    def to_dict(self) -> dict:
        return {
            "site": self.site.address,
            "kind": self.kind.value,
            "region_start": self.region_start,
            "region_length": self.region_length,
            "key": self.key,
            "gateway": self.gateway_start,
            "syscall_number": self.syscall_number,
            "relocated_pre": [i.text() for i in self.relocated_pre],
            "relocated_post": [i.text() for i in self.relocated_post],
        }


@dataclass(frozen=True)
class Unpatchable:
    site: EcallSite
    reason: str

    def to_dict(self) -> dict:
        return {"site": self.site.address, "reason": self.reason}


@dataclass
class Plan:
    patches: List[PlannedPatch]
    unpatchable: List[Unpatchable]
    rvc: bool = True
    entry_address: int = 0
    analysis: Optional[AnalysisResult] = field(default=None, repr=False, compare=False)

    @property
    def site_count(self) -> int:
        return len(self.patches) + len(self.unpatchable)

    def gateways(self) -> List[PlannedPatch]:
        return [p for p in self.patches if p.kind is PatchKind.GATEWAY]

    def patch_at(self, region_start: int) -> PlannedPatch:
        for p in self.patches:
            if p.region_start == region_start:
                return p
        raise KeyError(region_start)

    def distribution(self) -> Dict[str, Dict[str, float]]:
        """各类补丁的数量和占全部 ecall 的百分比（含 UNPATCHABLE 行）"""
        total = self.site_count
        counts = {kind.value: 0 for kind in PatchKind}
        for p in self.patches:
            counts[p.kind.value] += 1
        counts["UNPATCHABLE"] = len(self.unpatchable)
        return {
            name: {"count": n, "percent": round(100.0 * n / total, 2) if total else 0.0}
            for name, n in counts.items()
        }

    def to_dict(self) -> dict:
        return {
            "rvc": self.rvc,
            "entry_address": self.entry_address,
            "patches": [p.to_dict() for p in self.patches],
            "unpatchable": [u.to_dict() for u in self.unpatchable],
            "distribution": self.distribution(),
        }


def align_up(value: int, alignment: int) -> int:
    return (value + alignment - 1) // alignment * alignment


def default_runtime_base(image: CodeImage) -> int:
    """运行时代码块默认放在代码段之后第一个 4 KiB 对齐处"""
    return align_up(image.end, RUNTIME_ALIGNMENT)


def fit_region(window: PatchWindow, length: int, floor: Optional[int] = None) -> Optional[int]:
    """
    在窗口内找一个恰好 length 字节、起止都在指令边界上、包含 ecall 的区域

    多个候选时取前后字节差最小的，相同则取前部字节多的

    参数:
        window: 补丁窗口
        length: 区域长度
        floor: 区域起点下限（前一个补丁区域的终点）

    返回:
        区域起始地址；不存在时返回 None
    """
    ecall = window.site.address
    starts = [i.address for i in window.pre_instructions] + [ecall]
    ends = {ecall + 4} | {i.end for i in window.post_instructions}
    best = None
    best_key = None
    for start in starts:
        if floor is not None and start < floor:
            continue
        end = start + length
        if end not in ends:
            continue
        pre = ecall - start
        post = end - (ecall + 4)
        key = (abs(pre - post), -pre)
        if best_key is None or key < best_key:
            best, best_key = start, key
    return best


def classify(window: PatchWindow, fact: SyscallNumberFact,
             thresholds: Optional[PatchThresholds] = None,
             floor: Optional[int] = None) -> Union[Tuple[PatchKind, int], str]:
    """
    按可用空间给 ecall 分类

    空间足够但找不到恰好对齐的区域时依次降级；SMALL 需要已知的调用号

    返回:
        (PatchKind, 区域起点) 或不可补丁原因
    """
    thresholds = thresholds or PatchThresholds.for_rvc(True)
    for kind in (PatchKind.GATEWAY, PatchKind.MIDDLE):
        length = thresholds.length_of(kind)
        if window.usable_bytes >= length:
            start = fit_region(window, length, floor)
            if start is not None:
                return kind, start
    if fact.value is None:
        return REASON_SMALL_WITHOUT_NUMBER
    return PatchKind.SMALL, window.site.address


def _split_relocated(window: PatchWindow, start: int, end: int):
    pre = tuple(i for i in window.pre_instructions if i.address >= start)
    post = tuple(i for i in window.post_instructions if i.end <= end)
    return pre, post


def _nearest_gateway(jump_pc: int, gateways: Sequence[PlannedPatch]) -> Optional[PlannedPatch]:
    candidates = [
        g for g in gateways
        if g.region_start != jump_pc and jal_in_range(jump_pc, g.region_start)
    ]
    if not candidates:
        return None
    return min(candidates, key=lambda g: (abs(g.region_start - jump_pc), g.region_start))


def assign_gateways(classified: Sequence[PlannedPatch], unpatchable: Sequence[Unpatchable],
                    entry_address: int, rvc: bool = True) -> Plan:
    """
    为每个 MIDDLE/SMALL 指派最近的可达 GATEWAY

    GATEWAY 的 auipc 必须能到达共享入口点，否则记为 entry-out-of-reach；
    找不到可达 GATEWAY 的 MIDDLE/SMALL 记为 no-reachable-gateway

    返回:
        Plan（补丁按地址排序）
    """
    logger = Logger.get_logger("Planner")
    patches: List[PlannedPatch] = []
    failed = list(unpatchable)

    gateways = []
    for p in classified:
        if p.kind is not PatchKind.GATEWAY:
            continue
        if auipc_jalr_in_range(p.jump_pc, entry_address):
            gateways.append(p)
        else:
            failed.append(Unpatchable(p.site, REASON_ENTRY_OUT_OF_REACH))
            logger.debug(f"GATEWAY 0x{p.site.address:x} 无法到达入口点 0x{entry_address:x}")
    patches.extend(gateways)

    for p in classified:
        if p.kind is PatchKind.GATEWAY:
            continue
        gateway = _nearest_gateway(p.jump_pc, gateways)
        if gateway is None:
            failed.append(Unpatchable(p.site, REASON_NO_REACHABLE_GATEWAY))
            logger.debug(f"{p.kind.value} 0x{p.site.address:x} 没有可达的 GATEWAY")
            continue
        patches.append(p.with_gateway(gateway.region_start))

    patches.sort(key=lambda p: p.site.address)
    failed.sort(key=lambda u: u.site.address)
    return Plan(patches=patches, unpatchable=failed, rvc=rvc, entry_address=entry_address)


def plan(image: CodeImage, rvc: bool = True, runtime_base: Optional[int] = None,
         analysis: Optional[AnalysisResult] = None) -> Plan:
    """
    完整规划流程：扫描 -> 窗口 -> 调用号 -> 分类 -> 指派

    参数:
        image: 代码镜像
        rvc: 是否使用压缩指令布局
        runtime_base: 运行时代码块基地址（入口点所在），None 时取默认位置
        analysis: 已有的分析结果

    返回:
        Plan；同一镜像多次规划结果完全相同
    """
    logger = Logger.get_logger("Planner")
    analysis = analysis or analyze(image)
    thresholds = PatchThresholds.for_rvc(rvc)
    entry_address = default_runtime_base(image) if runtime_base is None else runtime_base

    classified: List[PlannedPatch] = []
    unpatchable: List[Unpatchable] = []
    floor = None
    for window, fact in zip(analysis.windows, analysis.facts):
        result = classify(window, fact, thresholds, floor)
        if isinstance(result, str):
            unpatchable.append(Unpatchable(window.site, result))
            logger.debug(f"ecall 0x{window.site.address:x}: 不可补丁 ({result})")
            continue
        kind, start = result
        length = thresholds.length_of(kind)
        pre, post = _split_relocated(window, start, start + length)
        classified.append(PlannedPatch(
            site=window.site, kind=kind, region_start=start, region_length=length,
            relocated_pre=pre, relocated_post=post, syscall_number=fact.value, rvc=rvc,
        ))
        floor = start + length
        logger.debug(f"ecall 0x{window.site.address:x}: {kind.value} "
                     f"[0x{start:x}, 0x{start + length:x}) 窗口 {window.usable_bytes} 字节")

    result = assign_gateways(classified, unpatchable, entry_address, rvc)
    result.analysis = analysis
    dist = result.distribution()
    logger.info("规划完成: " + ", ".join(
        f"{name} {v['count']} ({v['percent']}%)" for name, v in dist.items()))
    return result
