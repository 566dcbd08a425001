import pytest

from src.core.settings import Settings
from src.verify.footprint import (
    RISCV_MODEL,
    X86_REFERENCE_MODEL,
    ArchCostModel,
    footprint_compare,
    marginal_slope,
    models_from_settings,
    scaling_series,
)


MIB = 1 << 20


def test_calibration_totals():
    assert RISCV_MODEL.total(2048, MIB) == 24 + 2048 * 64 + 65536 == 196632
    assert 190 * 1024 <= RISCV_MODEL.total(2048, MIB) <= 194 * 1024
    assert X86_REFERENCE_MODEL.total(2048, MIB) == 1441792


def test_ratio_and_slopes():
    comparison = footprint_compare(2048, MIB)
    assert comparison.ratio == pytest.approx(0.136, abs=0.002)
    assert comparison.slopes["riscv"] == pytest.approx(64.0)
    assert comparison.slopes["x86-reference"] == pytest.approx(640.0)
    assert 8 <= comparison.slope_ratio <= 12
    # 已是标定点，不再附带
    assert comparison.calibration is None
    assert comparison.to_dict()["ratio_percent"] == pytest.approx(13.638, abs=0.001)


def test_other_sizes_carry_calibration():
    comparison = footprint_compare(10, 4096)
    assert comparison.calibration is not None
    assert comparison.calibration.n_patches == 2048
    assert "calibration" in comparison.to_dict()
    assert "标定点" in comparison.format_text()


def test_zero_patches():
    comparison = footprint_compare(0, MIB, with_calibration=False)
    assert comparison.rows["riscv"]["total"] == 24 + 65536
    assert comparison.rows["riscv"]["relocated"] == 0


def test_scaling_series_is_monotonic():
    ns = [0, 1, 10, 100, 1000, 4000]
    for model in (RISCV_MODEL, X86_REFERENCE_MODEL):
        series = scaling_series(model, MIB, ns)
        assert series == sorted(series)
        assert len(set(series)) == len(series)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        footprint_compare(-1, MIB)
    with pytest.raises(ValueError):
        footprint_compare(10, 0)
    with pytest.raises(ValueError):
        ArchCostModel("bad", per_patch_template_bytes=-1)
    with pytest.raises(ValueError):
        ArchCostModel("bad", bitmap_alignment_bytes=0)


def test_models_from_settings():
    models = models_from_settings(Settings())
    assert models["riscv"] == RISCV_MODEL
    assert models["x86-reference"] == X86_REFERENCE_MODEL
    assert marginal_slope(models["riscv"], MIB) == pytest.approx(64.0)
