"""
静态分析模块
线性扫描找出所有 ecall，计算每个 ecall 周围可重定位的最大补丁窗口，
并向后扫描提取 a7 中的系统调用号
"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from src.core.errors import TruncatedCodeError
from src.core.logger import Logger
from src.patcher.image import CodeImage
from src.patcher.isa import (
    A7,
    Instruction,
    OpClass,
    decode,
    direct_target,
    extract_register_setter_immediate,
    is_control_flow,
    is_relocatable,
    written_register,
)


@dataclass(frozen=True)
class EcallSite:
    address: int
    index: int


@dataclass(frozen=True)
class PatchWindow:
    """
    ecall 周围的最大可重定位区间 [start, end)

    窗口内除 ecall 外都是可重定位指令，且除 start 外没有任何地址是跳转目标
    """
    site: EcallSite
    start: int
    end: int
    pre_instructions: Tuple[Instruction, ...]
    post_instructions: Tuple[Instruction, ...]

    @property
    def usable_bytes(self) -> int:
        return self.end - self.start

    @property
    def instructions(self) -> List[Instruction]:
        """窗口内全部指令（含 ecall 的位置由 site 给出）"""
        return list(self.pre_instructions) + list(self.post_instructions)

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "usable_bytes": self.usable_bytes,
            "pre": len(self.pre_instructions),
            "post": len(self.post_instructions),
        }


@dataclass(frozen=True)
class SyscallNumberFact:
    site: EcallSite
    value: Optional[int] = None
    setter_address: Optional[int] = None

    @property
    def known(self) -> bool:
        return self.value is not None


@dataclass
class Listing:
    """线性扫描得到的指令序列及地址索引"""
    image: CodeImage
    instructions: List[Instruction]
    index_of: Dict[int, int] = field(default_factory=dict)
    truncated_at: Optional[int] = None

    def __post_init__(self):
        if not self.index_of:
            self.index_of = {insn.address: i for i, insn in enumerate(self.instructions)}


def disassemble(image: CodeImage) -> Listing:
    """
    从镜像基地址开始线性扫描

    末尾被截断的指令会终止扫描并记录警告
    """
    logger = Logger.get_logger("Analysis")
    instructions: List[Instruction] = []
    data = image.data
    offset = 0
    truncated_at = None
    while offset < len(data):
        try:
            insn = decode(data, image.base + offset, offset)
        except TruncatedCodeError:
            truncated_at = image.base + offset
            logger.warning(f"镜像末尾 0x{truncated_at:x} 处的指令被截断，停止扫描")
            break
        instructions.append(insn)
        offset += insn.width
    return Listing(image=image, instructions=instructions, truncated_at=truncated_at)


def collect_branch_targets(image: CodeImage, listing: Optional[Listing] = None) -> FrozenSet[int]:
    """
    收集镜像内所有直接跳转/分支的目标地址，外加镜像基地址

    参数:
        image: 代码镜像
        listing: 已有的扫描结果，None 时重新扫描

    返回:
        地址集合
    """
    listing = listing or disassemble(image)
    targets = {image.base}
    for insn in listing.instructions:
        target = direct_target(insn)
        if target is not None and image.contains(target):
            targets.add(target)
    return frozenset(targets)


def scan_ecalls(image: CodeImage, listing: Optional[Listing] = None) -> List[EcallSite]:
    """按地址升序返回所有 ecall 位置"""
    listing = listing or disassemble(image)
    sites = []
    for insn in listing.instructions:
        if insn.opclass is OpClass.ECALL:
            sites.append(EcallSite(address=insn.address, index=len(sites)))
    return sites


def compute_window(image: CodeImage, site: EcallSite, branch_targets: FrozenSet[int],
                   listing: Optional[Listing] = None) -> PatchWindow:
    """
    从 ecall 向两侧贪心扩展补丁窗口

    左右交替、先左后右，每次一条指令；遇到不可重定位指令、
    会落入窗口内部的跳转目标或镜像边界时该侧停止

    参数:
        image: 代码镜像
        site: scan_ecalls 得到的位置
        branch_targets: collect_branch_targets 的结果

    返回:
        PatchWindow
    """
    listing = listing or disassemble(image)
    insns = listing.instructions
    center = listing.index_of[site.address]
    left = right = center

    def can_grow_left() -> bool:
        return (left > 0 and is_relocatable(insns[left - 1])
                and insns[left].address not in branch_targets)

    def can_grow_right() -> bool:
        return (right + 1 < len(insns) and is_relocatable(insns[right + 1])
                and insns[right + 1].address not in branch_targets)

    while True:
        grew = False
        if can_grow_left():
            left -= 1
            grew = True
        if can_grow_right():
            right += 1
            grew = True
        if not grew:
            break

    return PatchWindow(
        site=site,
        start=insns[left].address,
        end=insns[right].end,
        pre_instructions=tuple(insns[left:center]),
        post_instructions=tuple(insns[center + 1:right + 1]),
    )


def extract_syscall_number(image: CodeImage, site: EcallSite,
                           branch_targets: Optional[FrozenSet[int]] = None,
                           listing: Optional[Listing] = None) -> SyscallNumberFact:
    """
    在 ecall 所在的直线代码段内向后查找 a7 的常量赋值

    遇到控制流指令、另一个 ecall、跳转目标或非常量的 a7 写入时放弃

    返回:
        SyscallNumberFact，未知时 value 为 None
    """
    listing = listing or disassemble(image)
    if branch_targets is None:
        branch_targets = collect_branch_targets(image, listing)
    insns = listing.instructions
    cur = listing.index_of[site.address]

    while cur > 0:
        if insns[cur].address in branch_targets:
            break
        prev = insns[cur - 1]
        if is_control_flow(prev) or prev.opclass is OpClass.ECALL:
            break
        if written_register(prev) == A7:
            value = extract_register_setter_immediate(prev, A7)
            if value is None:
                break
            return SyscallNumberFact(site=site, value=value, setter_address=prev.address)
        cur -= 1
    return SyscallNumberFact(site=site)


@dataclass
class AnalysisResult:
    image: CodeImage
    listing: Listing
    branch_targets: FrozenSet[int]
    sites: List[EcallSite]
    windows: List[PatchWindow]
    facts: List[SyscallNumberFact]

    def site_reports(self) -> List[dict]:
        return [
            {
                "address": w.site.address,
                "index": w.site.index,
                "window": w.to_dict(),
                "syscall_number": f.value,
                "setter_address": f.setter_address,
            }
            for w, f in zip(self.windows, self.facts)
        ]


def analyze(image: CodeImage) -> AnalysisResult:
    """扫描、窗口计算、调用号提取一次完成"""
    logger = Logger.get_logger("Analysis")
    listing = disassemble(image)
    targets = collect_branch_targets(image, listing)
    sites = scan_ecalls(image, listing)
    windows = [compute_window(image, s, targets, listing) for s in sites]
    facts = [extract_syscall_number(image, s, targets, listing) for s in sites]
    logger.info(f"扫描完成: {len(listing.instructions)} 条指令, {len(sites)} 个 ecall")
    return AnalysisResult(image, listing, targets, sites, windows, facts)


def instructions_between(listing: Listing, start: int, end: int) -> Sequence[Instruction]:
    """[start, end) 内的指令；start 必须是指令边界"""
    i = listing.index_of[start]
    out = []
    while i < len(listing.instructions) and listing.instructions[i].address < end:
        out.append(listing.instructions[i])
        i += 1
    return out
