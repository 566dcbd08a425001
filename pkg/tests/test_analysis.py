from hypothesis import given
from hypothesis import strategies as st

from src.corpus.generator import T3, T4, T5, CorpusSpec, generate
from src.emulator.kernel import KernelModel
from src.emulator.machine import new_state
from src.emulator.runner import program_blobs, run
from src.patcher.analysis import (
    analyze,
    collect_branch_targets,
    compute_window,
    disassemble,
    extract_syscall_number,
    scan_ecalls,
)
from src.patcher.isa import A0, A7, RA, T1, T2, ZERO, is_relocatable
from tests.helpers import i, image_of


BASE = 0x10000


def test_scan_and_window_straight_line():
    image = image_of(
        i("addi", rd=T3, rs1=ZERO, imm=1),
        i("addi", rd=A7, rs1=ZERO, imm=64),
        i("ecall"),
        i("c.li", rd=A0, imm=3),
        i("c.jr", rs1=RA),
    )
    sites = scan_ecalls(image)
    assert [s.address for s in sites] == [BASE + 8]
    window = compute_window(image, sites[0], collect_branch_targets(image))
    assert (window.start, window.end, window.usable_bytes) == (BASE, BASE + 14, 14)
    assert len(window.pre_instructions) == 2 and len(window.post_instructions) == 1


def test_window_stops_at_branch_target():
    image = image_of(
        i("beq", rs1=A0, rs2=ZERO, imm=8),      # 目标是 ecall 前一条指令
        i("addi", rd=T3, rs1=ZERO, imm=1),
        i("addi", rd=T4, rs1=ZERO, imm=2),
        i("ecall"),
        i("addi", rd=T5, rs1=ZERO, imm=3),
        i("c.jr", rs1=RA),
    )
    result = analyze(image)
    window = result.windows[0]
    assert BASE + 8 in result.branch_targets
    assert window.start == BASE + 8
    assert window.end == BASE + 20


def test_window_never_contains_non_relocatable():
    image = image_of(
        i("auipc", rd=T1, imm=0),
        i("ecall"),
        i("jal", rd=ZERO, imm=-8),
    )
    window = analyze(image).windows[0]
    assert (window.start, window.usable_bytes) == (BASE + 4, 4)
    assert window.pre_instructions == () and window.post_instructions == ()


def test_extract_number_known_and_unknown():
    image = image_of(
        i("addi", rd=A7, rs1=ZERO, imm=172),
        i("auipc", rd=T1, imm=0),
        i("ecall"),
        i("addi", rd=T2, rs1=ZERO, imm=63),
        i("add", rd=A7, rs1=ZERO, rs2=T2),
        i("ecall"),
        i("c.jr", rs1=RA),
    )
    result = analyze(image)
    known, unknown = result.facts
    assert known.value == 172 and known.setter_address == BASE
    assert not unknown.known


def test_extract_number_stops_at_branch_target():
    image = image_of(
        i("addi", rd=A7, rs1=ZERO, imm=64),
        i("bne", rs1=A0, rs2=ZERO, imm=4),
        i("ecall"),
        i("c.jr", rs1=RA),
    )
    fact = extract_syscall_number(image, scan_ecalls(image)[0])
    assert fact.value is None


def test_truncated_tail_is_reported():
    image = image_of(i("ecall"), i("c.jr", rs1=RA))
    listing = disassemble(image.__class__(image.base, image.data + b"\x13\x00"))
    assert listing.truncated_at == BASE + 6
    assert len(listing.instructions) == 2


@given(st.integers(min_value=0, max_value=200))
def test_window_invariants_on_corpus(seed):
    program = generate(CorpusSpec(n_sites=8, seed=seed))
    result = analyze(program.image)
    for window in result.windows:
        assert window.usable_bytes >= 4
        assert window.start <= window.site.address < window.site.address + 4 <= window.end
        inner = [x.address for x in window.instructions if x.address != window.start]
        assert not set(inner) & result.branch_targets


def test_windows_match_corpus_annotations():
    program = generate(CorpusSpec(n_sites=30, seed=11))
    result = analyze(program.image)
    assert [w.site.address for w in result.windows] == [a.address for a in program.annotations]
    for window, fact, note in zip(result.windows, result.facts, program.annotations):
        assert window.usable_bytes == note.window_bytes
        assert fact.known == note.a7_static


def test_extraction_agrees_with_live_a7():
    for seed in range(10):
        program = generate(CorpusSpec(n_sites=20, seed=seed))
        result = analyze(program.image)
        _, trace = run(program_blobs(program.image), program.entry, new_state(), KernelModel())
        # main 按地址顺序调用每个包装函数一次
        live = [event.number for event in trace.syscalls]
        assert len(live) == len(result.facts)
        for fact, number in zip(result.facts, live):
            if fact.known:
                assert fact.value == number


@given(st.integers(min_value=0, max_value=500), st.booleans())
def test_windows_are_maximal(seed, rvc):
    program = generate(CorpusSpec(n_sites=10, seed=seed, rvc_enabled=rvc))
    listing = disassemble(program.image)
    targets = collect_branch_targets(program.image, listing)
    by_end = {insn.end: insn for insn in listing.instructions}
    by_start = {insn.address: insn for insn in listing.instructions}

    for site in scan_ecalls(program.image, listing):
        window = compute_window(program.image, site, targets, listing)
        # 左侧：再纳入前一条指令会让 start 成为窗口内部的跳转目标，或该指令不可重定位
        before = by_end.get(window.start)
        assert before is None or not is_relocatable(before) or window.start in targets
        # 右侧：后一条指令不可重定位，或它本身是跳转目标
        after = by_start.get(window.end)
        assert after is None or not is_relocatable(after) or after.address in targets
