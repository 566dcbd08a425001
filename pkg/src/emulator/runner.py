"""
运行循环
取指、解码缓存、单步执行，ecall 交给内核模型，ebreak 交给拦截运行时。
exit 族系统调用终止程序；停机哨兵地址只作为兜底
"""
from typing import Iterable, List, Optional, Protocol, Tuple

from src.core.errors import InstructionLimitError, MisalignedAccessError, UnexpectedBreakError
from src.core.logger import Logger
from src.emulator.kernel import CLONE_FAMILY, EXIT_FAMILY, KernelModel, SyscallCall
from src.emulator.machine import HALT_ADDRESS, MachineState, TRAP_CLASSES, step
from src.emulator.trace import EventKind, ExecutionTrace, TraceEvent, Via
from src.patcher.codegen import PatchArtifacts
from src.patcher.image import CodeImage, write_patched_image
from src.patcher.isa import A0, A1, A7, Instruction, OpClass, decode_word


DEFAULT_MAX_INSTRET = 5_000_000

Placed = Tuple[int, bytes]


class BreakHandler(Protocol):
    def on_break(self, state: MachineState, trace: ExecutionTrace) -> None:
        ...


def program_blobs(image: CodeImage, artifacts: Optional[PatchArtifacts] = None) -> List[Placed]:
    """
    生成要装入模拟器的内存块

    参数:
        image: 原始镜像
        artifacts: 补丁产物，None 时只装原始代码

    返回:
        (地址, 字节) 列表；有补丁时代码段为补丁后的字节，并附带全部运行时代码块
    """
    if artifacts is None:
        return [(image.base, image.data)]
    blobs = [(image.base, write_patched_image(image, artifacts))]
    blobs.extend((b.address, b.data) for b in artifacts.blobs().values() if b.length)
    return blobs


def direct_syscall(state: MachineState, kernel: KernelModel, trace: ExecutionTrace) -> None:
    """未打补丁的 ecall：直接调用内核模型并写回 (a0, a1)；exit 族不写回，只记录退出码"""
    regs = state.regs
    call = SyscallCall(regs[A7], tuple(regs[A0:A0 + 6]))
    ret0, ret1, cost = kernel.handle(call)
    trace.kernel_cost_total += cost
    trace.add(TraceEvent(EventKind.SYSCALL, number=call.number, args=call.args,
                         ret0=ret0, ret1=ret1, via=Via.DIRECT))
    if call.number in EXIT_FAMILY:
        state.exit_status = call.args[0]
        return
    state.set_reg(A0, ret0)
    state.set_reg(A1, ret1)
    if call.number in CLONE_FAMILY:
        trace.add(TraceEvent(EventKind.POST_CLONE, number=call.number, child=ret0))


def _fetch(state: MachineState, cache: dict) -> Instruction:
    pc = state.pc
    low = state.memory.fetch_halfword(pc)
    raw = low if (low & 3) != 3 else low | (state.memory.fetch_halfword(pc + 2) << 16)
    insn = cache.get(pc)
    if insn is None or insn.raw != raw:
        insn = decode_word(raw, pc)
        cache[pc] = insn
    return insn


def run(blobs: Iterable[Placed], entry: int, initial: MachineState, kernel: KernelModel,
        runtime: Optional[BreakHandler] = None, max_instret: int = DEFAULT_MAX_INSTRET,
        stop_at: Iterable[int] = ()) -> Tuple[MachineState, ExecutionTrace]:
    """
    执行程序直到 exit 族系统调用、跳到停机哨兵地址或 stop_at 中的地址

    参数:
        blobs: 要装入内存的 (地址, 字节)
        entry: 入口地址
        initial: 初始状态（不会被修改）
        kernel: 内核模型
        runtime: 拦截运行时，None 时 ebreak 视为错误
        max_instret: 指令数上限
        stop_at: 额外的停止地址

    返回:
        (最终状态, 执行轨迹)；因 exit 终止时 pc 停在该 ecall（或系统调用门）上

    异常:
        EmulationError 的各个子类，均携带出错时的 pc
    """
    if max_instret <= 0:
        raise ValueError("max_instret 必须为正数")
    logger = Logger.get_logger("Emulator")
    state = initial.copy()
    for address, data in blobs:
        state.memory.load(address, data)
    state.pc = entry
    state.track_sp()
    kernel.reset()

    trace = ExecutionTrace()
    stops = frozenset(stop_at) | {HALT_ADDRESS}
    cache: dict = {}

    while state.exit_status is None and state.pc not in stops:
        if state.instret >= max_instret:
            raise InstructionLimitError(f"超过指令数上限 {max_instret}", state.pc)
        if state.pc & 1:
            raise MisalignedAccessError("取指地址未对齐", state.pc)
        insn = _fetch(state, cache)
        if insn.opclass in TRAP_CLASSES:
            state.instret += 1
            if insn.opclass is OpClass.ECALL:
                direct_syscall(state, kernel, trace)
                if state.exit_status is None:
                    state.pc += insn.width
            elif runtime is None:
                raise UnexpectedBreakError("没有安装拦截运行时却遇到 ebreak", state.pc)
            else:
                runtime.on_break(state, trace)
        else:
            step(state, insn)
        state.track_sp()

    trace.instret_total = state.instret
    trace.exit_status = state.exit_status
    logger.debug(f"运行结束: pc=0x{state.pc:x}, instret={state.instret}, exit={state.exit_status}, "
                 f"事件 {len(trace.events)} 个")
    return state, trace
