"""
开销基准
三种场景：未打补丁、拦截后由钩子旁路、拦截后透传到内核
代价 = 执行指令数 + 内核代价单位
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from src.core.logger import Logger
from src.corpus.generator import loop_program
from src.emulator.interceptor import install_interceptor
from src.emulator.kernel import DEFAULT_COST_UNITS, FAKE_PID, KernelModel
from src.emulator.machine import new_state
from src.emulator.runner import DEFAULT_MAX_INSTRET, program_blobs, run
from src.emulator.trace import Via
from src.hooks.groups import HookSet
from src.patcher.codegen import build_runtime
from src.patcher.planner import PatchKind, plan


# 真实硬件上的中位数，只作为报告中的参照，不作断言
HARDWARE_REFERENCE = {
    "x86": {"bypass_percent": -70.0, "kernel_percent": 2.0},
    "riscv": {"bypass_percent": -35.0, "kernel_percent": 5.0},
}


class Scenario(Enum):
    NORMAL = "NORMAL"
    INTERCEPT_BYPASS = "INTERCEPT_BYPASS"
    INTERCEPT_KERNEL = "INTERCEPT_KERNEL"


@dataclass(frozen=True)
class BenchReport:
    scenario: Scenario
    instret: int
    kernel_cost: int
    total_cost: int
    overhead_vs_normal: float

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "instret": self.instret,
            "kernel_cost": self.kernel_cost,
            "total_cost": self.total_cost,
            "overhead_percent": round(self.overhead_vs_normal, 4),
        }


@dataclass
class BenchResult:
    kind: PatchKind
    iterations: int
    syscall_number: int
    cost_units: int
    reports: List[BenchReport]
    per_interception_instret: float
    hardware_reference: Dict[str, Dict[str, float]] = field(default_factory=lambda: dict(HARDWARE_REFERENCE))

    def report(self, scenario: Scenario) -> BenchReport:
        return next(r for r in self.reports if r.scenario is scenario)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "iterations": self.iterations,
            "syscall_number": self.syscall_number,
            "cost_units": self.cost_units,
            "scenarios": [r.to_dict() for r in self.reports],
            "per_interception_instret": self.per_interception_instret,
            "hardware_reference": self.hardware_reference,
        }

    def format_text(self) -> str:
        lines = [f"{self.kind.value} 补丁，循环 {self.iterations} 次系统调用 {self.syscall_number}，"
                 f"内核代价 {self.cost_units}"]
        for r in self.reports:
            lines.append(f"  {r.scenario.value:<18} 指令 {r.instret:>9}  内核 {r.kernel_cost:>9}  "
                         f"总计 {r.total_cost:>9}  开销 {r.overhead_vs_normal:+.2f}%")
        lines.append(f"  每次拦截额外指令数 {self.per_interception_instret:.2f}")
        return "\n".join(lines)


def _overhead(total: int, baseline: int) -> float:
    if baseline == 0:
        return 0.0
    return (total - baseline) / baseline * 100.0


def bench(kind: PatchKind = PatchKind.GATEWAY, iterations: int = 100, syscall_number: int = 172,
          cost_units: int = DEFAULT_COST_UNITS, rvc: bool = True,
          bypass_result: Tuple[int, int] = (FAKE_PID, 0),
          max_instret: int = DEFAULT_MAX_INSTRET,
          hooks: Optional[HookSet] = None) -> BenchResult:
    """
    运行三种场景的开销基准

    参数:
        kind: 循环中被调用的包装函数的补丁类型
        iterations: 循环中的系统调用次数 K（另有一次 exit）
        syscall_number: 系统调用号
        cost_units: 每次进入内核的代价
        bypass_result: INTERCEPT_BYPASS 场景中钩子返回的 (a0, a1)
        hooks: INTERCEPT_KERNEL 场景的钩子集，默认全部透传

    返回:
        BenchResult，NORMAL 的开销恒为 0
    """
    logger = Logger.get_logger("Bench")
    program = loop_program(kind, iterations, syscall_number, rvc)
    artifacts = build_runtime(plan(program.image, rvc=rvc), program.image)
    initial = new_state()

    totals = {}
    normal_kernel = KernelModel(cost_units)
    _, trace = run(program_blobs(program.image), program.entry, initial, normal_kernel,
                   max_instret=max_instret)
    totals[Scenario.NORMAL] = trace

    scenario_hooks = {
        Scenario.INTERCEPT_BYPASS: HookSet.bypassing(syscall_number, *bypass_result),
        Scenario.INTERCEPT_KERNEL: hooks or HookSet.passthrough(),
    }
    for scenario, hook_set in scenario_hooks.items():
        kernel = KernelModel(cost_units)
        runtime = install_interceptor(artifacts, hook_set, kernel)
        _, trace = run(program_blobs(program.image, artifacts), program.entry, initial, kernel,
                       runtime, max_instret=max_instret)
        totals[scenario] = trace

    baseline = totals[Scenario.NORMAL].total_cost
    reports = [
        BenchReport(s, t.instret_total, t.kernel_cost_total, t.total_cost, _overhead(t.total_cost, baseline))
        for s, t in totals.items()
    ]
    # 拦截次数含程序末尾的 exit
    intercepted = totals[Scenario.INTERCEPT_KERNEL]
    interceptions = sum(1 for e in intercepted.syscalls if e.via is Via.INTERCEPTED)
    delta = intercepted.instret_total - totals[Scenario.NORMAL].instret_total
    per_interception = delta / interceptions if interceptions else 0.0

    result = BenchResult(kind, iterations, syscall_number, cost_units, reports, per_interception)
    for r in reports:
        logger.info(f"{r.scenario.value}: 总代价 {r.total_cost}，开销 {r.overhead_vs_normal:+.2f}%")
    return result
