import random

import pytest

from src.core.errors import InfeasibleSpecError
from src.corpus.generator import (
    DEFAULT_DISTRIBUTION,
    ROLE_EXIT,
    ROLE_SYSCALL,
    UNPATCHABLE,
    CorpusSpec,
    fillers,
    generate,
    kind_counts,
    loop_program,
)
from src.emulator.kernel import SYS_EXIT, KernelModel
from src.emulator.machine import new_state
from src.emulator.runner import program_blobs, run
from src.emulator.trace import Via
from src.patcher.codegen import build_runtime
from src.patcher.isa import is_relocatable, sweep
from src.patcher.planner import PatchKind, plan
from src.verify.differential import differential_run


def test_kind_counts_default():
    assert kind_counts(20, DEFAULT_DISTRIBUTION) == {"GATEWAY": 8, "MIDDLE": 3, "SMALL": 9, UNPATCHABLE: 0}
    assert kind_counts(0, DEFAULT_DISTRIBUTION) == {"GATEWAY": 0, "MIDDLE": 0, "SMALL": 0, UNPATCHABLE: 0}
    assert kind_counts(10, {PatchKind.GATEWAY: 0.5})[UNPATCHABLE] == 5


def test_planned_distribution_is_exact():
    program = generate(CorpusSpec(n_sites=20, seed=7))
    distribution = plan(program.image).distribution()
    # 比例针对包装函数，exit 位置另计一个 GATEWAY
    assert {k: v["count"] for k, v in distribution.items()} == {
        "GATEWAY": 8 + 1, "MIDDLE": 3, "SMALL": 9, "UNPATCHABLE": 0}


def test_generate_is_deterministic():
    one = generate(CorpusSpec(n_sites=15, seed=21))
    two = generate(CorpusSpec(n_sites=15, seed=21))
    assert one.image.data == two.image.data
    assert one.to_dict() == two.to_dict()
    assert generate(CorpusSpec(n_sites=15, seed=22)).image.data != one.image.data


def test_annotations():
    program = generate(CorpusSpec(n_sites=12, seed=9, syscall_numbers=(63, 64)))
    assert len(program.annotations) == 12 + 1
    assert [a.role for a in program.annotations] == [ROLE_SYSCALL] * 12 + [ROLE_EXIT]
    assert all(a.a7_value in (63, 64) for a in program.annotations[:-1])
    # 包装函数按地址顺序排列
    assert [a.address for a in program.annotations] == sorted(a.address for a in program.annotations)
    # 六字节夹具只在 RVC 下生成
    assert any(a.window_bytes == 6 for a in program.annotations)
    no_rvc = generate(CorpusSpec(n_sites=12, seed=9, rvc_enabled=False))
    assert all(a.window_bytes % 4 == 0 for a in no_rvc.annotations)


def test_infeasible_specs():
    with pytest.raises(InfeasibleSpecError):
        generate(CorpusSpec(n_sites=10, max_window_bytes=8))
    with pytest.raises(InfeasibleSpecError):
        generate(CorpusSpec(n_sites=10, window_distribution={PatchKind.MIDDLE: 1.0}))
    with pytest.raises(InfeasibleSpecError):
        generate(CorpusSpec(n_sites=10, window_distribution={PatchKind.GATEWAY: 0.7, PatchKind.SMALL: 0.5}))
    with pytest.raises(InfeasibleSpecError):
        generate(CorpusSpec(n_sites=10, window_distribution={PatchKind.GATEWAY: 1.2, PatchKind.SMALL: -0.2}))
    with pytest.raises(InfeasibleSpecError):
        generate(CorpusSpec(n_sites=10, syscall_numbers=()))


def test_empty_corpus():
    program = generate(CorpusSpec(n_sites=0))
    (exit_site,) = program.annotations
    assert (exit_site.role, exit_site.a7_value, exit_site.intended_kind) == (ROLE_EXIT, SYS_EXIT, "GATEWAY")
    result = plan(program.image)
    assert result.site_count == 1 and result.unpatchable == []

    _, trace = run(program_blobs(program.image), program.entry, new_state(), KernelModel())
    assert [e.number for e in trace.syscalls] == [SYS_EXIT]
    assert trace.exit_status is not None


def test_from_dict():
    spec = CorpusSpec.from_dict({"n_sites": 5, "window_distribution": {"gateway": 1.0},
                                 "rvc_enabled": False, "seed": 3, "syscall_numbers": [172]})
    assert spec.window_distribution == {PatchKind.GATEWAY: 1.0}
    assert (spec.n_sites, spec.rvc_enabled, spec.seed, spec.syscall_numbers) == (5, False, 3, (172,))
    assert CorpusSpec.from_dict({}) == CorpusSpec()


def test_fillers():
    rng = random.Random(0)
    for nbytes in (0, 2, 4, 6, 30):
        data = fillers(rng, nbytes, True)
        assert len(data) == nbytes
        assert all(is_relocatable(x) for x in sweep(data, 0x10000))
    assert len(fillers(rng, 12, False)) == 12
    with pytest.raises(InfeasibleSpecError):
        fillers(rng, 3, True)
    with pytest.raises(InfeasibleSpecError):
        fillers(rng, 6, False)


def test_loop_program():
    program = loop_program(PatchKind.SMALL, 5)
    assert [a.intended_kind for a in program.annotations] == ["GATEWAY", "SMALL", "GATEWAY"]
    assert program.annotations[-1].role == ROLE_EXIT
    assert loop_program(PatchKind.GATEWAY, 0).annotations[0].intended_kind == "GATEWAY"
    with pytest.raises(InfeasibleSpecError):
        loop_program(PatchKind.GATEWAY, -1)


@pytest.mark.parametrize("rvc", [True, False])
def test_programs_end_with_intercepted_exit(rvc):
    program = generate(CorpusSpec(n_sites=10, seed=3, rvc_enabled=rvc))
    result = plan(program.image, rvc=rvc)
    exit_site = program.annotations[-1]
    assert exit_site.address in {p.site.address for p in result.patches}

    artifacts = build_runtime(result, program.image)
    verdict = differential_run(program.image, artifacts, program.entry)
    assert verdict.equivalent, verdict.details
    last = verdict.patched.syscalls[-1]
    assert (last.number, last.via) == (SYS_EXIT, Via.INTERCEPTED)
    assert verdict.patched.exit_status == verdict.original.exit_status is not None
