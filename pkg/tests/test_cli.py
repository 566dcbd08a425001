import json

import pytest

from src.cli import EXIT_CODEGEN, EXIT_INPUT, EXIT_OK, EXIT_STRICT, EXIT_VERIFY, main


def _spec(tmp_path, text="n_sites: 12\nseed: 5\n", name="corpus.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _patch(tmp_path, spec, *extra):
    out = tmp_path / "out"
    code = main(["patch", "--kind", "corpus-spec", "--input", spec, "--out", str(out), *extra])
    return code, out


def test_analyze_corpus_spec(tmp_path, capsys):
    assert main(["analyze", "--kind", "corpus-spec", "--input", _spec(tmp_path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert len(report["sites"]) == 12 + 1
    assert report["distribution"]["UNPATCHABLE"]["count"] == 0


def test_patch_strict_with_unpatchable(tmp_path):
    spec = _spec(tmp_path, "n_sites: 10\nwindow_distribution:\n  gateway: 0.5\n")
    code, _ = _patch(tmp_path, spec, "--strict")
    assert code == EXIT_STRICT
    code, out = _patch(tmp_path, spec)
    assert code == EXIT_OK
    assert len(json.loads((out / "metadata.json").read_text(encoding="utf-8"))["unpatchable"]) == 5


def test_patch_then_verify(tmp_path, capsys):
    code, out = _patch(tmp_path, _spec(tmp_path))
    assert code == EXIT_OK
    for name in ("patched_text.bin", "original_text.bin", "entry_point.bin", "trampoline.bin",
                 "relocated_table.bin", "bitmap.bin", "metadata.json", "plan.json", "annotations.json"):
        assert (out / name).exists(), name
    capsys.readouterr()

    trace = tmp_path / "trace.jsonl"
    assert main(["verify", "--out", str(out), "--trace", str(trace)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["equivalent"] is True
    assert trace.read_text(encoding="utf-8").count("\n") > 0


def test_patch_with_overlapping_placement(tmp_path):
    code, out = _patch(tmp_path, _spec(tmp_path), "--placement", "0x10000")
    assert code == EXIT_CODEGEN
    assert not (out / "metadata.json").exists()


def test_verify_detects_corruption(tmp_path):
    code, out = _patch(tmp_path, _spec(tmp_path))
    assert code == EXIT_OK
    metadata = json.loads((out / "metadata.json").read_text(encoding="utf-8"))
    offset = metadata["patches"][0]["region_start"] - metadata["base"]
    patched = bytearray((out / "patched_text.bin").read_bytes())
    patched[offset:offset + 2] = b"\x00\x00"
    (out / "patched_text.bin").write_bytes(bytes(patched))
    assert main(["verify", "--out", str(out)]) == EXIT_VERIFY


def test_verify_with_bypass_hooks(tmp_path):
    spec = _spec(tmp_path, "n_sites: 8\nseed: 2\nsyscall_numbers: [172]\n")
    code, out = _patch(tmp_path, spec)
    assert code == EXIT_OK
    assert main(["verify", "--out", str(out), "--hooks", "fake_getpid"]) == EXIT_VERIFY
    assert main(["verify", "--out", str(out), "--hooks", "fake_getpid", "--mode", "bypass"]) == EXIT_OK
    assert main(["verify", "--out", str(out), "--hooks", "no_such_group"]) == EXIT_INPUT


def test_input_errors(tmp_path):
    assert main(["analyze", "--input", str(tmp_path / "missing.elf")]) == EXIT_INPUT
    raw = tmp_path / "code.bin"
    raw.write_bytes(b"\x73\x00\x00\x00")
    assert main(["analyze", "--kind", "raw", "--input", str(raw)]) == EXIT_INPUT
    assert main(["analyze", "--kind", "raw", "--input", str(raw), "--base", "0x10000"]) == EXIT_OK
    assert main(["analyze", "--kind", "elf", "--input", str(raw)]) == EXIT_INPUT
    assert main(["verify", "--out", str(tmp_path / "nothing")]) == EXIT_INPUT
    assert main(["analyze", "--kind", "corpus-spec", "--input", _spec(tmp_path, "- 1\n", "list.yaml")]) == EXIT_INPUT


def test_bad_config(tmp_path):
    config = _spec(tmp_path, "kernel: 5\n", "patcher.yaml")
    assert main(["footprint", "--config", config]) == EXIT_INPUT


def test_footprint_and_bench(tmp_path, capsys):
    assert main(["footprint"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["models"]["riscv"]["total"] == 196632

    assert main(["footprint", "--kind", "corpus-spec", "--input", _spec(tmp_path)]) == EXIT_OK
    assert "measured" in json.loads(capsys.readouterr().out)

    assert main(["bench", "--iterations", "5", "--patch-kind", "small"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert [s["scenario"] for s in report["scenarios"]] == ["NORMAL", "INTERCEPT_BYPASS", "INTERCEPT_KERNEL"]

    assert main(["bench", "--iterations", "5", "--format", "text"]) == EXIT_OK
    assert "INTERCEPT_BYPASS" in capsys.readouterr().out


def test_subcommand_is_required():
    with pytest.raises(SystemExit):
        main([])
