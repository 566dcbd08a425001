import random

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from src.core.errors import EmulationError, EncodingError, JumpRangeError, TruncatedCodeError
from src.emulator.machine import MASK64, MachineState, Memory, step
from src.patcher.isa import (
    A0,
    A7,
    AUIPC_JALR_MAX,
    AUIPC_JALR_MIN,
    JAL_MAX,
    JAL_MIN,
    RA,
    T0,
    ZERO,
    OpClass,
    assemble,
    assemble_bytes,
    auipc_jalr_in_range,
    decode,
    decode_word,
    encode,
    encode_auipc_jalr_pair,
    encode_jal,
    extract_register_setter_immediate,
    is_relocatable,
    jal_in_range,
    make_instruction,
    split_pcrel,
    sweep,
)


def test_compressed_round_trip_exhaustive():
    for word in range(0x10000):
        if word & 3 == 3:
            continue
        insn = decode_word(word)
        if insn.opclass is OpClass.UNKNOWN:
            continue
        assert insn.width == 2
        assert encode(insn) == word, insn.text()


@given(st.integers(min_value=0, max_value=(1 << 32) - 1))
def test_base_round_trip(word):
    word |= 3
    insn = decode_word(word)
    assume(insn.opclass is not OpClass.UNKNOWN)
    assert insn.width == 4
    assert encode(insn) == word


def test_base_round_trip_seeded_corpus():
    rng = random.Random(1)
    seen = set()
    for _ in range(100_000):
        word = rng.getrandbits(32) | 3
        insn = decode_word(word)
        if insn.opclass is OpClass.UNKNOWN:
            continue
        seen.add(insn.mnemonic)
        assert encode(insn) == word
    for word in (0x00000073, 0x00100073):
        assert encode(decode_word(word)) == word
    assert {"lui", "auipc", "jal", "jalr", "beq", "ld", "sd", "addi", "addiw"} <= seen


def test_decode_examples():
    insn = decode((0x00000073).to_bytes(4, "little"), pc=0x1000)
    assert insn.opclass is OpClass.ECALL and insn.width == 4 and insn.address == 0x1000

    # 0x0001 的规范形式是 c.nop
    nop = decode(b"\x01\x00")
    assert nop.mnemonic == "c.nop" and nop.width == 2

    assert decode(b"\x00\x00").opclass is OpClass.UNKNOWN
    assert decode_word(0x9002).opclass is OpClass.C_EBREAK


def test_decode_truncated():
    with pytest.raises(TruncatedCodeError):
        decode(b"\x13")
    with pytest.raises(TruncatedCodeError):
        decode(b"\x13\x00")


def test_sweep_stops_before_truncated_tail():
    data = assemble_bytes("addi", rd=A0, rs1=ZERO, imm=1) + assemble_bytes("c.li", rd=A0, imm=2) + b"\x13\x00"
    insns = sweep(data, 0x1000)
    assert [x.mnemonic for x in insns] == ["addi", "c.li"]
    assert insns[1].address == 0x1004


def test_assemble_rejects_bad_fields():
    with pytest.raises(EncodingError):
        assemble("addi", rd=A0, rs1=ZERO, imm=4096)
    with pytest.raises(EncodingError):
        assemble("c.addi16sp", imm=0)
    with pytest.raises(EncodingError):
        assemble("nosuchop")


# ---------------------------------------------------------------------------
# 跳转可达范围
# ---------------------------------------------------------------------------

def test_jal_reach_exact_bounds():
    assert JAL_MIN == -1048576 and JAL_MAX == 1048574
    assert jal_in_range(0x200000, 0x200000 + JAL_MAX)
    assert not jal_in_range(0x200000, 0x200000 + JAL_MAX + 2)
    assert jal_in_range(0x200000, 0x200000 + JAL_MIN)
    assert not jal_in_range(0x200000, 0x200000 + JAL_MIN - 2)
    assert not jal_in_range(0x200000, 0x200001)


def test_jal_reach_examples():
    assert not jal_in_range(0x10000, 0x110000)
    assert jal_in_range(0x110000, 0x10000)


def test_auipc_jalr_reach_exact_bounds():
    base = 0x1_0000_0000
    assert auipc_jalr_in_range(base, base + AUIPC_JALR_MAX)
    assert not auipc_jalr_in_range(base, base + AUIPC_JALR_MAX + 1)
    assert not auipc_jalr_in_range(base, base + AUIPC_JALR_MAX + 2)
    assert auipc_jalr_in_range(base, base + AUIPC_JALR_MIN)
    assert not auipc_jalr_in_range(base, base + AUIPC_JALR_MIN - 1)
    assert not auipc_jalr_in_range(base, base + AUIPC_JALR_MIN - 2)


def test_encode_jal_examples():
    insn = decode_word(encode_jal(RA, 0x1000, 0x1008), 0x1000)
    assert (insn.mnemonic, insn.rd, insn.imm) == ("jal", RA, 8)
    insn = decode_word(encode_jal(A7, 0x1000, 0x1000), 0x1000)
    assert (insn.rd, insn.imm) == (A7, 0)
    with pytest.raises(JumpRangeError):
        encode_jal(RA, 0, 0x100000)


def _jump_with_pair(from_pc: int, target: int) -> int:
    auipc, jalr = encode_auipc_jalr_pair(T0, from_pc, target)
    state = MachineState(pc=from_pc)
    step(state, decode_word(auipc, from_pc))
    step(state, decode_word(jalr, from_pc + 4))
    return state.pc


def test_split_pcrel_sign_bias():
    assert split_pcrel(0x800) == (1, -0x800)
    assert split_pcrel(0x7FF) == (0, 0x7FF)
    hi, lo = split_pcrel(-0x80000800)
    assert (hi << 12) + lo == -0x80000800


def test_auipc_jalr_pair_reaches_bounds():
    base = 0x1_0000_0000
    for delta in (AUIPC_JALR_MAX, AUIPC_JALR_MIN, 0x12345678, 0x800, -0x800, 0):
        assert _jump_with_pair(base, base + delta) == base + delta
    with pytest.raises(JumpRangeError):
        encode_auipc_jalr_pair(T0, base, base + AUIPC_JALR_MAX + 2)


def test_auipc_jalr_pair_random_deltas():
    rng = random.Random(2024)
    for _ in range(10_000):
        from_pc = 0x1_0000_0000 + rng.randrange(0, 1 << 20) * 2
        delta = rng.randrange(AUIPC_JALR_MIN // 2, AUIPC_JALR_MAX // 2 + 1) * 2
        assert _jump_with_pair(from_pc, from_pc + delta) == from_pc + delta


# ---------------------------------------------------------------------------
# 可重定位判断
# ---------------------------------------------------------------------------

DATA_BASE = 0x20_0000
SHIFT = 0x12_3456


def _outcome(insn_word: int, pc: int, regs, memory: Memory):
    state = MachineState(list(regs), pc, memory.copy())
    try:
        step(state, decode_word(insn_word, pc))
    except EmulationError as e:
        return type(e).__name__
    return tuple(state.regs), state.memory.byte_map(), state.pc - pc


def _random_word(rng: random.Random) -> int:
    if rng.random() < 0.5:
        word = rng.getrandbits(16)
        return word if word & 3 != 3 else word & ~1
    return rng.getrandbits(32) | 3


def test_relocatability_oracle():
    rng = random.Random(7)
    memory = Memory()
    memory.map(DATA_BASE, 0x3000)
    for offset in range(0, 0x3000, 8):
        memory.write_int(DATA_BASE + offset, 8, rng.getrandbits(64))

    checked = 0
    position_dependent = set()
    while checked < 10_000:
        word = _random_word(rng)
        insn = decode_word(word)
        if insn.opclass is OpClass.UNKNOWN:
            continue
        regs = [0] + [DATA_BASE + 0x1000 + rng.randrange(0, 0x100) * 8 for _ in range(31)]
        here = _outcome(word, 0x10000, regs, memory)
        there = _outcome(word, 0x10000 + SHIFT, regs, memory)
        if here != there:
            assert not is_relocatable(insn), insn.text()
            position_dependent.add(insn.opclass)
        checked += 1

    assert OpClass.AUIPC in position_dependent


def test_relocatable_classes():
    assert is_relocatable(make_instruction("lui", rd=A0, imm=0x1000))
    assert is_relocatable(make_instruction("add", rd=A0, rs1=A0, rs2=A7))
    assert is_relocatable(make_instruction("c.ldsp", rd=A0, imm=8))
    for mnemonic, fields in (("auipc", {"rd": A0}), ("jal", {"rd": RA, "imm": 8}),
                             ("jalr", {"rd": ZERO, "rs1": RA}), ("beq", {"imm": 8}),
                             ("c.jr", {"rs1": RA}), ("ecall", {})):
        assert not is_relocatable(make_instruction(mnemonic, **fields))


def test_extract_register_setter_immediate():
    assert extract_register_setter_immediate(make_instruction("addi", rd=A7, rs1=ZERO, imm=64), A7) == 64
    assert extract_register_setter_immediate(make_instruction("c.li", rd=A7, imm=-1), A7) == MASK64
    assert extract_register_setter_immediate(make_instruction("addi", rd=A7, rs1=A0, imm=1), A7) is None
    assert extract_register_setter_immediate(make_instruction("addi", rd=A0, rs1=ZERO, imm=1), A7) is None
