"""
拦截运行时（宿主侧）
处理两类 ebreak：
- 入口门：从入口点保存的寄存器帧里识别补丁，恢复程序寄存器视图，跳到重定位块
- 系统调用门：依次执行 pre 钩子、内核（或旁路）、post 钩子和 clone 后回调；
  透传到内核的 exit 族调用不再返回，程序在门上终止
"""
from typing import Optional

from src.core.errors import DispatchFailureError, UnexpectedBreakError
from src.core.logger import Logger
from src.emulator.kernel import CLONE_FAMILY, EXIT_FAMILY, KernelModel, SyscallCall
from src.emulator.machine import MachineState
from src.emulator.trace import Decision, EventKind, ExecutionTrace, TraceEvent, Via
from src.hooks.groups import HookSet
from src.patcher.codegen import (
    FRAME_SIZE,
    SAVED_REGISTERS,
    PatchArtifacts,
    RuntimeDirectory,
    RuntimeRecord,
)
from src.patcher.isa import A0, A1, A7, MASK64, RA, SP, T0
from src.patcher.planner import PatchKind


class InterceptorRuntime:
    """
    拦截运行时

    属性:
        directory: 补丁目录（识别键 -> 记录，门地址 -> 记录）
        hooks: 钩子集
        kernel: 内核模型
    """

    def __init__(self, directory: RuntimeDirectory, hooks: Optional[HookSet] = None,
                 kernel: Optional[KernelModel] = None):
        self.directory = directory
        self.hooks = hooks or HookSet.passthrough()
        self.kernel = kernel or KernelModel()
        self.logger = Logger.get_logger("Interceptor")

    def on_break(self, state: MachineState, trace: ExecutionTrace) -> None:
        pc = state.pc
        if pc == self.directory.entry_gate:
            self._enter(state, trace)
            return
        record = self.directory.by_gate.get(pc)
        if record is None:
            raise UnexpectedBreakError("ebreak 不在任何已知的门地址上", pc)
        self._syscall(state, trace, record)

    def _bitmap_marks(self, state: MachineState, address: int) -> bool:
        d = self.directory
        if not d.text_base <= address < d.text_base + d.text_length:
            return False
        unit = (address - d.text_base) // 2
        byte = state.memory.read_int(d.bitmap_address + unit // 8, 1)
        return bool(byte >> (unit % 8) & 1)

    def _enter(self, state: MachineState, trace: ExecutionTrace) -> None:
        """
        入口门处理

        帧中保存的 t0 是 GATEWAY 的键；再看 ra 是否为该 GATEWAY 下某个 MIDDLE 的键，
        a7 是否为某个 SMALL 的键，都不是则是 GATEWAY 自身的 ecall
        """
        pc = state.pc
        mem = state.memory
        sp = state.regs[SP]
        frame = {i: mem.read_int(sp + 8 * i, 8, pc) for i in SAVED_REGISTERS}

        gateway_key = frame[T0]
        gateway = self.directory.by_key.get(gateway_key)
        if gateway is None or gateway.kind is not PatchKind.GATEWAY:
            raise DispatchFailureError(f"入口点收到未知的识别键 0x{gateway_key:x}", pc)

        sp_gateway = sp + FRAME_SIZE
        regs = [0] * 32
        for i in SAVED_REGISTERS:
            regs[i] = frame[i]
        regs[T0] = mem.read_int(sp_gateway, 8, pc)

        middle = self.directory.member(gateway_key, frame[RA], PatchKind.MIDDLE)
        small = None if middle else self.directory.member(gateway_key, frame[A7], PatchKind.SMALL)
        if middle is not None:
            record = middle
            regs[RA] = mem.read_int(sp_gateway + 16, 8, pc)
            regs[SP] = sp_gateway + 32
        elif small is not None:
            record = small
            regs[A7] = small.syscall_number & MASK64
            regs[SP] = sp_gateway + 16
        else:
            record = gateway
            regs[SP] = sp_gateway + 16

        if not self._bitmap_marks(state, record.key - 4):
            raise DispatchFailureError(f"位图中没有标记识别键 0x{record.key:x} 对应的补丁", pc)

        state.regs = [r & MASK64 for r in regs]
        trace.add(TraceEvent(EventKind.BREAK, key=record.key))
        state.pc = record.code_address

    def _syscall(self, state: MachineState, trace: ExecutionTrace, record: RuntimeRecord) -> None:
        regs = state.regs
        call = SyscallCall(regs[A7], tuple(regs[A0:A0 + 6]))
        result = self.hooks.run_pre(call)
        if result is not None:
            trace.add(TraceEvent(EventKind.HOOK_PRE, number=call.number, decision=Decision.BYPASS))
            ret0, ret1 = result.ret0 & MASK64, result.ret1 & MASK64
        else:
            trace.add(TraceEvent(EventKind.HOOK_PRE, number=call.number,
                                 decision=Decision.PASSTHROUGH))
            ret0, ret1, cost = self.kernel.handle(call)
            trace.kernel_cost_total += cost
            trace.add(TraceEvent(EventKind.SYSCALL, number=call.number, args=call.args,
                                 ret0=ret0, ret1=ret1, via=Via.INTERCEPTED))
            if call.number in EXIT_FAMILY:
                state.exit_status = call.args[0]
                self.logger.debug(f"识别键 0x{record.key:x} 处的 exit 已透传，程序终止")
                return

        state.set_reg(A0, ret0)
        state.set_reg(A1, ret1)
        self.hooks.run_post(call, ret0, ret1)
        trace.add(TraceEvent(EventKind.HOOK_POST, number=call.number))
        if call.number in CLONE_FAMILY:
            trace.add(TraceEvent(EventKind.POST_CLONE, number=call.number, child=ret0))
            self.hooks.run_clone(call, ret0)
        state.pc = record.resume_address


def install_interceptor(artifacts: PatchArtifacts, hooks: Optional[HookSet] = None,
                        kernel: Optional[KernelModel] = None) -> InterceptorRuntime:
    """
    由补丁产物创建拦截运行时

    参数:
        artifacts: build_runtime 的结果
        hooks: 钩子集，默认全部透传
        kernel: 内核模型（应与 run() 使用同一个实例）

    返回:
        InterceptorRuntime
    """
    return InterceptorRuntime(artifacts.runtime, hooks, kernel)
