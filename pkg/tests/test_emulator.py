import io
import json
import random

import pytest

from src.core.errors import (
    IllegalInstructionError,
    InstructionLimitError,
    MisalignedAccessError,
    UnexpectedBreakError,
    UnmappedAccessError,
    UnmappedFetchError,
)
from src.emulator.kernel import CHILD_ID_BASE, FAKE_PID, PIPE_FDS, SYS_EXIT, KernelModel, SyscallCall
from src.emulator.machine import HALT_ADDRESS, MASK64, MachineState, Memory, new_state, step
from src.emulator.runner import run
from src.emulator.trace import EventKind, Via
from src.patcher.isa import A0, A1, A2, A7, RA, SP, T0, ZERO, OpClass, decode_word, make_instruction
from tests.helpers import asm, i


BASE = 0x10000


def _exec(mnemonic: str, pc: int = 0x1000, regs=None, **fields) -> MachineState:
    state = MachineState(list(regs) if regs else [0] * 32, pc)
    step(state, make_instruction(mnemonic, **fields))
    return state


def test_auipc_and_jal():
    state = _exec("auipc", rd=T0, imm=0x1000)
    assert state.regs[T0] == 0x2000 and state.pc == 0x1004

    state = _exec("jal", rd=RA, imm=0)
    assert state.regs[RA] == 0x1004 and state.pc == 0x1000


def test_jalr_reads_source_before_link():
    regs = [0] * 32
    regs[T0] = 0x3001
    state = _exec("jalr", regs=regs, rd=T0, rs1=T0, imm=4)
    assert state.pc == 0x3004 and state.regs[T0] == 0x1004


def test_arithmetic_wraps_and_sign_extends():
    regs = [0] * 32
    regs[A0] = MASK64
    assert _exec("addi", regs=regs, rd=A1, rs1=A0, imm=1).regs[A1] == 0
    regs[A0] = 0x7FFFFFFF
    assert _exec("addiw", regs=regs, rd=A1, rs1=A0, imm=1).regs[A1] == 0xFFFFFFFF80000000
    regs[A0], regs[A2] = 7, 0
    assert _exec("divu", regs=regs, rd=A1, rs1=A0, rs2=A2).regs[A1] == MASK64


def test_x0_stays_zero():
    rng = random.Random(3)
    checked = 0
    while checked < 5000:
        insn = decode_word(rng.getrandbits(32) | 3, 0x1000)
        if insn.opclass in (OpClass.UNKNOWN, OpClass.ECALL, OpClass.EBREAK) or insn.rd != ZERO:
            continue
        memory = Memory()
        memory.map(0, 0x10000)
        state = MachineState([0] + [rng.randrange(0, 0x8000) * 8 for _ in range(31)], 0x1000, memory)
        try:
            step(state, insn)
        except (IllegalInstructionError, MisalignedAccessError, UnmappedAccessError):
            pass
        assert state.regs[ZERO] == 0
        checked += 1


def test_new_state():
    state = new_state(stack_top=0x50000, stack_size=0x2000, regs=[5] * 32)
    assert state.regs[SP] == 0x50000 and state.regs[RA] == HALT_ADDRESS
    assert state.regs[ZERO] == 0 and state.regs[A0] == 5
    assert state.memory.is_mapped(0x4E000, 0x2000)
    assert not state.memory.is_mapped(0x50000)


def test_run_until_halt_with_direct_syscall():
    code = asm(i("addi", rd=A7, rs1=ZERO, imm=172), i("ecall"), i("c.jr", rs1=RA))
    initial = new_state()
    state, trace = run([(BASE, code)], BASE, initial, KernelModel())
    assert state.pc == HALT_ADDRESS
    assert state.regs[A0] == FAKE_PID
    (event,) = trace.syscalls
    assert (event.number, event.via, event.ret0) == (172, Via.DIRECT, FAKE_PID)
    assert trace.instret_total == 3 and trace.kernel_cost_total == 2000
    # 初始状态不被修改
    assert initial.regs[A0] == 0


def test_run_errors_carry_pc():
    with pytest.raises(UnmappedFetchError) as info:
        run([(BASE, asm(i("jal", rd=ZERO, imm=0x1000)))], BASE, new_state(), KernelModel())
    assert info.value.pc == BASE + 0x1000

    with pytest.raises(InstructionLimitError):
        run([(BASE, asm(i("jal", rd=ZERO, imm=0)))], BASE, new_state(), KernelModel(), max_instret=100)

    with pytest.raises(UnexpectedBreakError) as info:
        run([(BASE, asm(i("c.li", rd=A0, imm=1), i("c.ebreak")))], BASE, new_state(), KernelModel())
    assert info.value.pc == BASE + 2

    with pytest.raises(MisalignedAccessError):
        run([(BASE, asm(i("ld", rd=A0, rs1=SP, imm=4)))], BASE, new_state(), KernelModel())

    with pytest.raises(IllegalInstructionError):
        run([(BASE, b"\x00\x00")], BASE, new_state(), KernelModel())

    with pytest.raises(ValueError):
        run([(BASE, b"\x00\x00")], BASE, new_state(), KernelModel(), max_instret=0)


def test_stop_at():
    code = asm(i("c.li", rd=A0, imm=1), i("c.li", rd=A1, imm=2), i("c.jr", rs1=RA))
    state, _ = run([(BASE, code)], BASE, new_state(), KernelModel(), stop_at=[BASE + 2])
    assert state.pc == BASE + 2 and state.regs[A0] == 1 and state.regs[A1] == 0


def test_min_sp_tracks_lowest_stack_pointer():
    code = asm(i("c.addi16sp", imm=-32), i("c.addi16sp", imm=32), i("c.jr", rs1=RA))
    initial = new_state()
    state, _ = run([(BASE, code)], BASE, initial, KernelModel())
    assert state.min_sp == initial.regs[SP] - 32


def test_kernel_returns():
    kernel = KernelModel()
    args = (10, 20, 30, 0, 0, 0)
    assert kernel.handle(SyscallCall(172, args)) == (FAKE_PID, 0, 2000)
    assert kernel.handle(SyscallCall(173, args))[0] == 1
    assert kernel.handle(SyscallCall(63, args))[0] == 30
    assert kernel.handle(SyscallCall(64, args))[0] == 30
    assert kernel.handle(SyscallCall(56, args))[0] == 3
    assert kernel.handle(SyscallCall(57, args))[0] == 0
    assert kernel.handle(SyscallCall(62, args))[0] == 20
    assert kernel.handle(SyscallCall(93, args))[0] == 0
    assert kernel.handle(SyscallCall(59, args))[:2] == PIPE_FDS
    assert kernel.handle(SyscallCall(999, args))[:2] == (10 ^ 999, 0)
    assert SyscallCall(64, args).name == "write" and SyscallCall(999, args).name == "sys_999"


def test_kernel_clone_children_and_reset():
    kernel = KernelModel(cost_units=5)
    args = (0,) * 6
    assert [kernel.handle(SyscallCall(220, args))[0] for _ in range(2)] == [CHILD_ID_BASE, CHILD_ID_BASE + 1]
    assert kernel.handle(SyscallCall(435, args)) == (CHILD_ID_BASE + 2, 0, 5)
    kernel.reset()
    assert kernel.handle(SyscallCall(220, args))[0] == CHILD_ID_BASE
    with pytest.raises(ValueError):
        KernelModel(cost_units=-1)


def test_kernel_custom_handler():
    kernel = KernelModel(handlers={172: lambda c: (-1, 7)})
    assert kernel.handle(SyscallCall(172, (0,) * 6)) == (MASK64, 7, 2000)


def test_direct_clone_records_post_clone():
    code = asm(i("addi", rd=A7, rs1=ZERO, imm=220), i("ecall"), i("ecall"), i("c.jr", rs1=RA))
    _, trace = run([(BASE, code)], BASE, new_state(), KernelModel())
    children = [e.child for e in trace.of_kind(EventKind.POST_CLONE)]
    assert children == [CHILD_ID_BASE, CHILD_ID_BASE + 1]


def test_trace_write_jsonl():
    code = asm(i("addi", rd=A7, rs1=ZERO, imm=64), i("c.li", rd=A2, imm=5), i("ecall"), i("c.jr", rs1=RA))
    _, trace = run([(BASE, code)], BASE, new_state(), KernelModel())
    stream = io.StringIO()
    trace.write_jsonl(stream)
    lines = stream.getvalue().splitlines()
    assert len(lines) == 1
    event = json.loads(lines[0])
    assert event["kind"] == "SYSCALL" and event["via"] == "DIRECT"
    assert event["number"] == 64 and event["ret0"] == 5 and event["args"][2] == 5
    assert trace.to_dict()["kernel_cost_total"] == 2000


def test_exit_stops_before_halt():
    code = asm(i("addi", rd=A7, rs1=ZERO, imm=SYS_EXIT), i("c.li", rd=A0, imm=0), i("ecall"),
               i("c.li", rd=A1, imm=9), i("c.jr", rs1=RA))
    state, trace = run([(BASE, code)], BASE, new_state(), KernelModel())
    (event,) = trace.syscalls
    assert (event.number, event.via) == (SYS_EXIT, Via.DIRECT)
    assert state.exit_status == trace.exit_status == 0
    assert state.pc == BASE + 6 and state.regs[A1] == 0
    assert trace.to_dict()["exit_status"] == 0


def test_halt_sentinel_without_exit():
    state, trace = run([(BASE, asm(i("c.jr", rs1=RA)))], BASE, new_state(), KernelModel())
    assert state.pc == HALT_ADDRESS
    assert state.exit_status is None and trace.exit_status is None
