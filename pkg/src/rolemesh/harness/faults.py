"""Fault injection through tool runtime hooks."""

from __future__ import annotations

from typing import Mapping, Sequence

from ..domain import TaskEntry
from ..execution import FaultEffect
from ..tools import ToolRuntime, runtime
from .scenario import FaultSpec, LoadedScenario

DEFAULT_MESSAGES = {
    "fail_once": "transient tool failure: connection reset",
    "fail_always": "persistent tool failure: tool raised an internal error",
}
DEFAULT_CLASSES = {"fail_once": "transient", "fail_always": "tool_failure"}


class FaultInjector:
    """Turns a fault schedule into per-call effects.

    A fault targets a task id or a tool name and is active from its trigger
    round on. ``fail_once`` fires a single time per run; the other modes
    persist while the target keeps executing.
    """

    def __init__(self, faults: Sequence[FaultSpec]):
        self.faults = tuple(faults)
        self.fired: dict[int, int] = {}

    def _matches(self, f: FaultSpec, task: TaskEntry, round: int) -> bool:
        return round >= f.trigger_round and f.target in (task.task_id, task.tool)

    def __call__(self, task: TaskEntry, round: int) -> FaultEffect | None:
        effects = []
        for i, f in enumerate(self.faults):
            if not self._matches(f, task, round):
                continue
            if f.mode == "fail_once" and self.fired.get(i):
                continue
            self.fired[i] = self.fired.get(i, 0) + 1
            if f.mode in ("fail_once", "fail_always"):
                effects.append(FaultEffect("fail", f.failure_class or DEFAULT_CLASSES[f.mode],
                                           f.message or DEFAULT_MESSAGES[f.mode]))
            elif f.mode == "corrupt_output":
                effects.append(FaultEffect("corrupt", "type_mismatch", f.message))
            else:
                effects.append(FaultEffect("delay", "tool_timeout", f.message, f.steps))
        if not effects:
            return None
        # a failure wins over a delay, a delay over corruption
        order = {"fail": 0, "delay": 1, "corrupt": 2}
        return min(effects, key=lambda e: order[e.kind])

    @property
    def fire_count(self) -> int:
        return sum(self.fired.values())


def build_tools(loaded: LoadedScenario, injector: FaultInjector | None = None) -> dict[str, ToolRuntime]:
    impls: Mapping[str, str] = dict(loaded.runtimes)
    tools = {}
    for spec in loaded.spec.toolkit:
        rt = runtime(spec, impls.get(spec.name, spec.name))
        tools[spec.name] = rt.with_hooks(injector) if injector is not None else rt
    return tools
