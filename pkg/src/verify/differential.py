"""
差分验证模块
在模拟器上分别运行原始镜像和补丁后的镜像，比较系统调用序列、退出状态、最终寄存器和内存
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.core.errors import EmulationError
from src.core.logger import Logger
from src.emulator.interceptor import install_interceptor
from src.emulator.kernel import DEFAULT_COST_UNITS, KernelModel
from src.emulator.machine import (
    DEFAULT_STACK_SIZE,
    DEFAULT_STACK_TOP,
    PAGE_SIZE,
    MachineState,
    new_state,
)
from src.emulator.runner import DEFAULT_MAX_INSTRET, program_blobs, run
from src.emulator.trace import Decision, EventKind, ExecutionTrace, Via
from src.hooks.groups import HookSet
from src.patcher.codegen import PatchArtifacts
from src.patcher.image import CodeImage
from src.patcher.isa import REG_NAMES


MODES = ("strict", "bypass")
_ZERO_PAGE = bytes(PAGE_SIZE)


@dataclass
class Verdict:
    """
    差分验证结论

    属性:
        equivalent: 两次运行是否等价
        first_divergence: 第一个分歧点，如 {"event": 3}、{"exit_status": 0}、{"register": "a0"}、{"memory": 0x3fff0}
        details: 可读的差异说明
    """
    equivalent: bool
    first_divergence: Optional[Dict[str, Any]] = None
    details: List[str] = field(default_factory=list)
    original: Optional[ExecutionTrace] = None
    patched: Optional[ExecutionTrace] = None

    def to_dict(self) -> dict:
        data: Dict[str, Any] = {
            "equivalent": self.equivalent,
            "first_divergence": self.first_divergence,
            "details": list(self.details),
        }
        for name, trace in (("original", self.original), ("patched", self.patched)):
            if trace is not None:
                data[name] = {
                    "syscalls": len(trace.syscalls),
                    "instret": trace.instret_total,
                    "kernel_cost": trace.kernel_cost_total,
                }
        return data


def _fail(divergence: Dict[str, Any], message: str, **traces) -> Verdict:
    return Verdict(False, divergence, [message], **traces)


def _compare_events(original: ExecutionTrace, patched: ExecutionTrace) -> Optional[Tuple[dict, str]]:
    ours = [e.syscall_signature() for e in original.syscalls]
    theirs = [e.syscall_signature() for e in patched.syscalls]
    for i, (a, b) in enumerate(zip(ours, theirs)):
        if a != b:
            return {"event": i}, f"第 {i} 个系统调用不同: 原始 {a}，补丁后 {b}"
    if len(ours) != len(theirs):
        i = min(len(ours), len(theirs))
        return {"event": i}, f"系统调用数量不同: 原始 {len(ours)}，补丁后 {len(theirs)}"
    return None


def _compare_bypassed(original: ExecutionTrace, patched: ExecutionTrace) -> Optional[Tuple[dict, str]]:
    """
    旁路模式：被钩子旁路的调用只要求调用号一致；第一个旁路点之前的调用要求完全一致，
    之后的调用只比较调用号（旁路返回值会流入后续状态）
    """
    effective = []
    for event in patched.events:
        if event.kind is EventKind.SYSCALL:
            effective.append((False, event))
        elif event.kind is EventKind.HOOK_PRE and event.decision is Decision.BYPASS:
            effective.append((True, event))

    expected = original.syscalls
    if len(effective) != len(expected):
        i = min(len(effective), len(expected))
        return {"event": i}, f"系统调用数量不同: 原始 {len(expected)}，补丁后 {len(effective)}"

    seen_bypass = False
    for i, ((bypassed, event), orig) in enumerate(zip(effective, expected)):
        if event.number != orig.number:
            return {"event": i}, f"第 {i} 个系统调用号不同: {orig.number} / {event.number}"
        if bypassed:
            seen_bypass = True
        elif not seen_bypass and event.syscall_signature() != orig.syscall_signature():
            return {"event": i}, f"旁路之前的第 {i} 个系统调用不同"
    return None


def _compare_exit(original: MachineState, patched: MachineState) -> Optional[Tuple[dict, str]]:
    if original.exit_status != patched.exit_status:
        return ({"exit_status": patched.exit_status},
                f"退出状态不同: 原始 {original.exit_status}，补丁后 {patched.exit_status}")
    return None


def _compare_registers(original: MachineState, patched: MachineState) -> Optional[Tuple[dict, str]]:
    for i in range(1, 32):
        if original.regs[i] != patched.regs[i]:
            return ({"register": REG_NAMES[i]},
                    f"寄存器 {REG_NAMES[i]} 不同: 0x{original.regs[i]:x} / 0x{patched.regs[i]:x}")
    return None


def _compare_memory(original: MachineState, patched: MachineState,
                    exclude: Sequence[Tuple[int, int]]) -> Optional[Tuple[dict, str]]:
    ours = original.memory.byte_map(exclude)
    theirs = patched.memory.byte_map(exclude)
    for page in sorted(set(ours) | set(theirs)):
        a = ours.get(page, _ZERO_PAGE)
        b = theirs.get(page, _ZERO_PAGE)
        if a == b:
            continue
        offset = next(k for k in range(PAGE_SIZE) if a[k] != b[k])
        address = page * PAGE_SIZE + offset
        return {"memory": address}, f"内存 0x{address:x} 不同: 0x{a[offset]:02x} / 0x{b[offset]:02x}"
    return None


def differential_run(image: CodeImage, artifacts: PatchArtifacts, entry: Optional[int] = None,
                     cost_units: int = DEFAULT_COST_UNITS, hooks: Optional[HookSet] = None,
                     mode: str = "strict", initial: Optional[MachineState] = None,
                     stack_top: int = DEFAULT_STACK_TOP, stack_size: int = DEFAULT_STACK_SIZE,
                     max_instret: int = DEFAULT_MAX_INSTRET,
                     require_intercepted: bool = True) -> Verdict:
    """
    差分运行：原始镜像直接执行，补丁后镜像在拦截运行时下执行

    参数:
        image: 原始代码镜像
        artifacts: build_runtime 生成的补丁产物
        entry: 程序入口，默认为镜像起始地址
        cost_units: 内核模型每次调用的代价
        hooks: 钩子集，默认全部透传
        mode: "strict" 要求系统调用完全一致；"bypass" 只允许被旁路的调用不同
        initial: 初始状态，默认 new_state(stack_top, stack_size)
        require_intercepted: 补丁后的运行中是否要求每个系统调用都经过拦截

    返回:
        Verdict；任一次运行出错时 equivalent=False 并记录错误
    """
    if mode not in MODES:
        raise ValueError(f"未知的比较模式: {mode}")
    logger = Logger.get_logger("Verifier")
    entry = image.base if entry is None else entry
    initial = initial if initial is not None else new_state(stack_top, stack_size)
    hooks = hooks or HookSet.passthrough()

    try:
        orig_state, orig_trace = run(program_blobs(image), entry, initial,
                                     KernelModel(cost_units), max_instret=max_instret)
    except EmulationError as e:
        logger.warning(f"原始镜像运行出错: {e}")
        return _fail({"fault": "original", "pc": e.pc}, f"原始镜像运行出错: {e}")

    kernel = KernelModel(cost_units)
    runtime = install_interceptor(artifacts, hooks, kernel)
    try:
        patched_state, patched_trace = run(program_blobs(image, artifacts), entry, initial,
                                           kernel, runtime, max_instret=max_instret)
    except EmulationError as e:
        logger.warning(f"补丁后镜像运行出错: {e}")
        return _fail({"fault": "patched", "pc": e.pc}, f"补丁后镜像运行出错: {e}",
                     original=orig_trace)

    traces = {"original": orig_trace, "patched": patched_trace}

    if require_intercepted:
        for i, event in enumerate(patched_trace.syscalls):
            if event.via is not Via.INTERCEPTED:
                return _fail({"event": i}, f"第 {i} 个系统调用没有经过拦截", **traces)

    if mode == "bypass":
        problem = _compare_bypassed(orig_trace, patched_trace)
        if problem:
            return _fail(*problem, **traces)
        return Verdict(True, **traces)

    problem = _compare_events(orig_trace, patched_trace)
    if problem is None:
        problem = _compare_exit(orig_state, patched_state)
    if problem is None:
        problem = _compare_registers(orig_state, patched_state)
    if problem is None:
        exclude: List[Tuple[int, int]] = [(image.base, image.end)]
        exclude.extend((b.address, b.end) for b in artifacts.blobs().values())
        stack_bottom = min(stack_top - stack_size, orig_state.min_sp)
        exclude.append((stack_bottom, orig_state.min_sp))
        problem = _compare_memory(orig_state, patched_state, exclude)
    if problem:
        logger.debug(f"发现分歧: {problem[1]}")
        return _fail(*problem, **traces)
    return Verdict(True, **traces)
