"""
执行轨迹
记录系统调用、钩子、clone 后回调和入口点识别事件，支持导出为 JSON Lines
"""
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import IO, List, Optional, Tuple


class EventKind(Enum):
    SYSCALL = "SYSCALL"
    HOOK_PRE = "HOOK_PRE"
    HOOK_POST = "HOOK_POST"
    POST_CLONE = "POST_CLONE"
    BREAK = "BREAK"


class Via(Enum):
    DIRECT = "DIRECT"
    INTERCEPTED = "INTERCEPTED"


class Decision(Enum):
    BYPASS = "BYPASS"
    PASSTHROUGH = "PASSTHROUGH"


@dataclass(frozen=True)
class TraceEvent:
    kind: EventKind
    number: Optional[int] = None
    args: Tuple[int, ...] = ()
    ret0: Optional[int] = None
    ret1: Optional[int] = None
    via: Optional[Via] = None
    decision: Optional[Decision] = None
    child: Optional[int] = None
    key: Optional[int] = None

    def to_dict(self) -> dict:
        data = {k: v for k, v in asdict(self).items() if v not in (None, ())}
        data["kind"] = self.kind.value
        if self.via is not None:
            data["via"] = self.via.value
        if self.decision is not None:
            data["decision"] = self.decision.value
        if self.args:
            data["args"] = list(self.args)
        return data

    def syscall_signature(self) -> Tuple:
        """比较用的系统调用特征（不含经由方式）"""
        return (self.number, self.args, self.ret0, self.ret1)


@dataclass
class ExecutionTrace:
    events: List[TraceEvent] = field(default_factory=list)
    instret_total: int = 0
    kernel_cost_total: int = 0
    exit_status: Optional[int] = None

    def add(self, event: TraceEvent) -> None:
        self.events.append(event)

    def of_kind(self, kind: EventKind) -> List[TraceEvent]:
        return [e for e in self.events if e.kind is kind]

    @property
    def syscalls(self) -> List[TraceEvent]:
        return self.of_kind(EventKind.SYSCALL)

    @property
    def total_cost(self) -> int:
        return self.instret_total + self.kernel_cost_total

    def write_jsonl(self, stream: IO[str]) -> None:
        """每行一个事件"""
        for event in self.events:
            stream.write(json.dumps(event.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")

    def to_dict(self) -> dict:
        return {
            "events": [e.to_dict() for e in self.events],
            "instret_total": self.instret_total,
            "kernel_cost_total": self.kernel_cost_total,
            "exit_status": self.exit_status,
        }
