"""
内存占用模型
按架构代价模型计算补丁运行时的总内存，并用线性拟合给出每个补丁的边际占用
"""
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from src.core.settings import Settings


CALIBRATION_PATCHES = 2048
CALIBRATION_TEXT_LENGTH = 1 << 20
SLOPE_SAMPLES = (100, 200, 400, 800)


@dataclass(frozen=True)
class ArchCostModel:
    """
    架构代价模型

    x86 参考参数由总量反推：模板 1 MiB、绝对跳转 trampoline 256 KiB，按 2048 个补丁均摊
    """
    name: str
    per_patch_template_bytes: int = 0
    per_patch_trampoline_bytes: int = 0
    shared_trampoline_bytes: int = 0
    bitmap_alignment_bytes: int = 2
    relocated_block_bytes: int = 0

    def __post_init__(self):
        for key, value in asdict(self).items():
            if key != "name" and value < 0:
                raise ValueError(f"{self.name}: {key} 不能为负数")
        if self.bitmap_alignment_bytes <= 0:
            raise ValueError(f"{self.name}: bitmap_alignment_bytes 必须为正数")

    @property
    def per_patch_bytes(self) -> int:
        return self.per_patch_template_bytes + self.per_patch_trampoline_bytes + self.relocated_block_bytes

    def bitmap_bytes(self, text_length: int) -> int:
        """每个对齐单元一位"""
        return math.ceil(text_length / self.bitmap_alignment_bytes / 8)

    def breakdown(self, n_patches: int, text_length: int) -> Dict[str, int]:
        parts = {
            "templates": self.per_patch_template_bytes * n_patches,
            "trampolines": self.per_patch_trampoline_bytes * n_patches + self.shared_trampoline_bytes,
            "relocated": self.relocated_block_bytes * n_patches,
            "bitmap": self.bitmap_bytes(text_length),
        }
        parts["total"] = sum(parts.values())
        return parts

    def total(self, n_patches: int, text_length: int) -> int:
        return self.breakdown(n_patches, text_length)["total"]


RISCV_MODEL = ArchCostModel("riscv", shared_trampoline_bytes=24, bitmap_alignment_bytes=2,
                            relocated_block_bytes=64)
X86_REFERENCE_MODEL = ArchCostModel("x86-reference", per_patch_template_bytes=512,
                                    per_patch_trampoline_bytes=128, bitmap_alignment_bytes=1)


def models_from_settings(settings: Settings) -> Dict[str, ArchCostModel]:
    return {name: ArchCostModel(name, **params) for name, params in settings.cost_models.items()}


def marginal_slope(model: ArchCostModel, text_length: int,
                   samples: Sequence[int] = SLOPE_SAMPLES) -> float:
    """对 total(n) 做一次线性拟合，返回斜率（每个补丁的边际字节数）"""
    ns = np.asarray(samples, dtype=float)
    totals = np.asarray([model.total(int(n), text_length) for n in samples], dtype=float)
    slope, _ = np.polyfit(ns, totals, 1)
    return float(slope)


@dataclass
class FootprintComparison:
    n_patches: int
    text_length: int
    rows: Dict[str, Dict[str, int]]
    slopes: Dict[str, float]
    ratio: Optional[float]
    slope_ratio: Optional[float]
    calibration: Optional['FootprintComparison'] = None

    def to_dict(self) -> dict:
        data = {
            "n_patches": self.n_patches,
            "text_length": self.text_length,
            "models": self.rows,
            "slopes": self.slopes,
            "ratio_percent": None if self.ratio is None else round(self.ratio * 100, 3),
            "slope_ratio": self.slope_ratio,
        }
        if self.calibration is not None:
            data["calibration"] = self.calibration.to_dict()
        return data

    def format_text(self) -> str:
        lines = [f"补丁数 {self.n_patches}，代码段 {self.text_length} 字节"]
        for name, row in self.rows.items():
            lines.append(f"  {name:<14} 总计 {row['total']:>10} B ({row['total'] / 1024:.2f} KiB)，"
                         f"斜率 {self.slopes[name]:.1f} B/补丁")
        if self.ratio is not None:
            lines.append(f"  占比 {self.ratio * 100:.2f}%，斜率比 {self.slope_ratio:.2f}")
        if self.calibration is not None:
            lines.append("标定点:")
            lines.extend("  " + line for line in self.calibration.format_text().splitlines())
        return "\n".join(lines)


def footprint_compare(n_patches: int, text_length: int,
                      models: Optional[Mapping[str, ArchCostModel]] = None,
                      with_calibration: bool = True) -> FootprintComparison:
    """
    对比两种架构的运行时内存占用

    参数:
        n_patches: 补丁数（可以为 0）
        text_length: 代码段长度（字节）
        models: {"riscv": ..., "x86-reference": ...}，默认使用内置参数
        with_calibration: 是否附带标定点（2048 个补丁、1 MiB 代码段）

    返回:
        FootprintComparison；ratio = riscv / x86
    """
    if n_patches < 0 or text_length <= 0:
        raise ValueError("补丁数不能为负数，代码段长度必须为正数")
    models = dict(models or {RISCV_MODEL.name: RISCV_MODEL, X86_REFERENCE_MODEL.name: X86_REFERENCE_MODEL})

    rows = {name: m.breakdown(n_patches, text_length) for name, m in models.items()}
    slopes = {name: marginal_slope(m, text_length) for name, m in models.items()}

    ratio = slope_ratio = None
    riscv, x86 = models.get(RISCV_MODEL.name), models.get(X86_REFERENCE_MODEL.name)
    if riscv is not None and x86 is not None:
        x86_total = rows[x86.name]["total"]
        ratio = rows[riscv.name]["total"] / x86_total if x86_total else None
        if slopes[riscv.name]:
            slope_ratio = slopes[x86.name] / slopes[riscv.name]

    calibration = None
    if with_calibration and (n_patches, text_length) != (CALIBRATION_PATCHES, CALIBRATION_TEXT_LENGTH):
        calibration = footprint_compare(CALIBRATION_PATCHES, CALIBRATION_TEXT_LENGTH, models, False)
    return FootprintComparison(n_patches, text_length, rows, slopes, ratio, slope_ratio, calibration)


def scaling_series(model: ArchCostModel, text_length: int, ns: Sequence[int]) -> List[int]:
    """按补丁数给出总量序列（单调递增）"""
    return [model.total(n, text_length) for n in ns]
