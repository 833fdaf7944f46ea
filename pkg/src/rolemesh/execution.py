"""Execution phase: task pipelines, worker self-correction and the error alert.

Workers run on a discrete step clock. On each tick every worker, in agent
tree order, finishes or advances its in-flight tool call, then reads its
inbox, then (unless paused) starts at most one new step. Reading the inbox
only between steps is what gives the alert protocol its step granularity: an
in-flight call always completes before a worker pauses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

from .bus import MONITOR, MessageBus
from .domain import Binding, ScenarioSpec, Strategy, TaskEntry
from .memory import MemoryStore
from .reasoner.base import ReflectRequest
from .serialize import digest
from .tools import ToolContext, ToolFailure, ToolRuntime, conforms

STOP_WORDS = frozenset(
    "a an and are as at be by for from has have in into is it its of on or that the this to was were "
    "with after before not no than then there their when while which will".split()
)
WORKER_ACTIONS = ("retry", "rebind")
MONITOR_ACTIONS = ("retry", "rebind", "swap_tool", "extend_timeout")


class TaskError(Exception):
    def __init__(self, task_id: str, tool: str, failure_class: str, message: str, inputs_digest: str = ""):
        self.task_id = task_id
        self.tool = tool
        self.failure_class = failure_class
        self.message = message
        self.inputs_digest = inputs_digest
        super().__init__(f"{task_id} ({tool}): {failure_class}: {message}")

    def to_data(self) -> dict:
        return {
            "task_id": self.task_id,
            "tool": self.tool,
            "failure_class": self.failure_class,
            "message": self.message,
            "inputs_digest": self.inputs_digest,
        }


class BindingError(TaskError):
    def __init__(self, task_id: str, tool: str, message: str):
        super().__init__(task_id, tool, "binding", message)


def extract_keywords(message: str, failure_class: str = "") -> frozenset[str]:
    words = {w for w in re.findall(r"[a-z][a-z0-9]*", message.lower()) if not any(c.isdigit() for c in w)}
    if failure_class:
        words.add(failure_class.lower())
        words.update(failure_class.lower().split("_"))
    return frozenset(w for w in words if w not in STOP_WORDS and len(w) > 1)


# ---------------------------------------------------------------------------
# single task execution


def resolve_bindings(task: TaskEntry, results: Mapping[str, Mapping[str, Any]],
                     scenario: ScenarioSpec | None = None) -> dict:
    out = {}
    for param, b in task.inputs:
        if b.kind == "literal":
            out[param] = b.value
        elif b.kind == "scenario":
            if scenario is None or b.value not in ("goal", "description", "user_query"):
                raise BindingError(task.task_id, task.tool, f"input {param} reads unavailable scenario key {b.value}")
            out[param] = getattr(scenario, b.value)
        else:
            upstream = results.get(b.ref_task)
            if upstream is None:
                raise BindingError(task.task_id, task.tool,
                                   f"input {param} binding unresolved: upstream task {b.ref_task} has no output")
            if b.ref_field not in upstream:
                raise BindingError(task.task_id, task.tool,
                                   f"input {param} binding unresolved: upstream output missing field {b.value}")
            out[param] = upstream[b.ref_field]
    return out


@dataclass(frozen=True)
class FaultEffect:
    kind: str  # fail | corrupt | delay
    failure_class: str = "tool_failure"
    message: str = ""
    steps: int = 1


@dataclass(frozen=True)
class CallOutcome:
    outputs: dict | None
    error: TaskError | None
    steps: int


def invoke(task: TaskEntry, bindings: Mapping[str, Any], tools: Mapping[str, ToolRuntime],
           ctx: ToolContext | None = None, *, timeout: int = 3, round: int = 0) -> CallOutcome:
    """Run one atomic tool call and report its outcome and duration in steps."""
    ctx = ctx or ToolContext()
    ctx = replace(ctx, task_id=task.task_id)
    inputs_digest = digest(dict(bindings))
    rt = tools.get(task.tool)
    if rt is None:
        err = TaskError(task.task_id, task.tool, "tool_failure", f"tool {task.tool} is not registered", inputs_digest)
        return CallOutcome(None, err, 1)
    effects = [e for h in rt.fault_hooks if (e := h(task, round)) is not None]
    steps = max([1] + [e.steps for e in effects if e.kind == "delay"])
    if steps > timeout:
        msg = f"tool {task.tool} timeout after {timeout} steps, call still running (delay {steps} steps)"
        return CallOutcome(None, TaskError(task.task_id, task.tool, "tool_timeout", msg, inputs_digest), timeout)
    for e in effects:
        if e.kind == "fail":
            return CallOutcome(None, TaskError(task.task_id, task.tool, e.failure_class, e.message, inputs_digest), steps)
    try:
        outputs = dict(rt.apply(dict(bindings), ctx))
    except ToolFailure as exc:
        return CallOutcome(None, TaskError(task.task_id, task.tool, exc.failure_class, str(exc), inputs_digest), steps)
    except (KeyError, TypeError, ValueError) as exc:
        msg = f"tool {task.tool} raised {type(exc).__name__}: {exc}"
        return CallOutcome(None, TaskError(task.task_id, task.tool, "tool_failure", msg, inputs_digest), steps)
    for e in effects:
        if e.kind == "corrupt" and rt.spec.output_schema:
            first = rt.spec.output_schema[0][0]
            outputs[first] = None
    for name, semantic in rt.spec.output_schema:
        if name not in outputs or not conforms(outputs[name], semantic):
            msg = f"output schema mismatch: field {name} is not a valid {semantic} value"
            for e in effects:
                if e.kind == "corrupt" and e.message:
                    msg = e.message
            return CallOutcome(None, TaskError(task.task_id, task.tool, "type_mismatch", msg, inputs_digest), steps)
    return CallOutcome({n: outputs[n] for n, _ in rt.spec.output_schema} or outputs, None, steps)


def execute_task(task: TaskEntry, bindings: Mapping[str, Any], tools: Mapping[str, ToolRuntime],
                 ctx: ToolContext | None = None, **kw) -> dict:
    """Outputs of one task execution; raises TaskError on failure."""
    outcome = invoke(task, bindings, tools, ctx, **kw)
    if outcome.error is not None:
        raise outcome.error
    return outcome.outputs


# ---------------------------------------------------------------------------
# self-correction


@dataclass(frozen=True)
class ReflectionStep:
    attempt: int
    failure_class: str
    message: str
    verdict: str = ""
    patch: Any = None

    def to_data(self) -> dict:
        return {"attempt": self.attempt, "failure_class": self.failure_class, "message": self.message,
                "verdict": self.verdict, "patch": self.patch}


@dataclass
class Escalation:
    worker: str
    error: TaskError
    trace: list[ReflectionStep]


def normalize_steps(patch: Any) -> list[dict]:
    if patch is None:
        return [{"action": "retry"}]
    if isinstance(patch, Mapping):
        if "steps" in patch:
            return [dict(s) for s in patch["steps"]]
        return [dict(patch)]
    if isinstance(patch, str):
        return [{"action": patch}]
    return [dict(s) for s in patch]


class Corrector:
    """Bounded self-reflection loop for one failing task."""

    def __init__(self, worker: str, task_id: str, reasoner, budget: int):
        if budget < 0:
            raise ValueError("budget must be >= 0")
        self.worker = worker
        self.task_id = task_id
        self.reasoner = reasoner
        self.budget = budget
        self.trace: list[ReflectionStep] = []
        self.fix_calls = 0

    def record(self, error: TaskError) -> None:
        self.trace.append(ReflectionStep(len(self.trace), error.failure_class, error.message))

    def next_patch(self, error: TaskError) -> list[dict] | None:
        """Ask for a fix; None means escalate."""
        if self.fix_calls >= self.budget:
            return None
        self.fix_calls += 1
        resp = self.reasoner.reflect(ReflectRequest(
            "LocalFix", subject=error.to_data(), evidence=tuple(s.to_data() for s in self.trace),
            requester=self.worker, task_id=self.task_id, attempt=len(self.trace) - 1,
        ))
        last = self.trace[-1]
        self.trace[-1] = replace(last, verdict=resp.verdict, patch=resp.patch)
        if resp.verdict != "fix":
            return None
        return normalize_steps(resp.patch)


def self_correct(worker: str, error: TaskError, reasoner, budget: int,
                 rerun: Callable[[list[dict]], dict], trace: list | None = None) -> dict | Escalation:
    """Retry a failed task under LocalFix patches until success or budget exhaustion.

    ``rerun`` applies a patch and re-executes the task, raising TaskError on failure.
    The reflection steps are appended to ``trace`` when one is given.
    """
    corrector = Corrector(worker, error.task_id, reasoner, budget)
    corrector.trace = trace if trace is not None else []
    corrector.record(error)
    while True:
        steps = corrector.next_patch(error)
        if steps is None:
            return Escalation(worker, error, corrector.trace)
        try:
            return rerun(steps)
        except TaskError as exc:
            error = exc
            corrector.record(error)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ErrorReportDetailed:
    worker: str
    task_id: str
    logs: tuple[str, ...]
    error_message: str
    failure_class: str
    history: tuple[dict, ...]
    reflection_trace: tuple[ReflectionStep, ...]
    keywords: frozenset[str]

    def to_data(self) -> dict:
        return {
            "detailed": True,
            "worker": self.worker,
            "task_id": self.task_id,
            "logs": list(self.logs),
            "error_message": self.error_message,
            "failure_class": self.failure_class,
            "history": list(self.history),
            "reflection_trace": [s.to_data() for s in self.reflection_trace],
            "keywords": sorted(self.keywords),
        }

    @classmethod
    def from_data(cls, data: Mapping) -> "ErrorReportDetailed":
        return cls(
            worker=data["worker"],
            task_id=data["task_id"],
            logs=tuple(data.get("logs", ())),
            error_message=data["error_message"],
            failure_class=data.get("failure_class", ""),
            history=tuple(data.get("history", ())),
            reflection_trace=tuple(ReflectionStep(**s) for s in data.get("reflection_trace", ())),
            keywords=frozenset(data.get("keywords", ())),
        )


@dataclass(frozen=True)
class StatusReportNormal:
    worker: str
    results: tuple[dict, ...]
    context: tuple[str, ...]

    def to_data(self) -> dict:
        return {"detailed": False, "worker": self.worker, "results": list(self.results),
                "context": list(self.context)}

    @classmethod
    def from_data(cls, data: Mapping) -> "StatusReportNormal":
        return cls(data["worker"], tuple(data.get("results", ())), tuple(data.get("context", ())))


def report_from_payload(payload: Mapping):
    return ErrorReportDetailed.from_data(payload) if payload.get("detailed") else StatusReportNormal.from_data(payload)


def raise_alert(worker: str, report: ErrorReportDetailed, bus: MessageBus, *, round: int = 0):
    """Broadcast the alert and hand the detailed report to the monitor.

    Peers react when they next read their inbox (see RoundExecution).
    """
    alert = bus.broadcast(worker, "ErrorAlert",
                          {"worker": worker, "task_id": report.task_id, "failure_class": report.failure_class},
                          round=round)
    if bus.is_registered(MONITOR):
        bus.send(worker, MONITOR, "StatusReport", report.to_data(), round=round)
    return alert


# ---------------------------------------------------------------------------
# round execution


@dataclass(frozen=True)
class ExecConfig:
    self_retries: int = 2
    timeout_steps: int = 3
    max_ticks: int = 10_000


@dataclass
class AlertContext:
    worker: str
    task_id: str
    alert_id: int
    report: ErrorReportDetailed


@dataclass
class RoundOutcome:
    status: str  # completed | paused | stalled
    outputs: dict = field(default_factory=dict)
    alert: AlertContext | None = None
    execution: "RoundExecution | None" = None

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def paused(self) -> bool:
        return self.status == "paused"


@dataclass
class _Call:
    task: TaskEntry
    outcome: CallOutcome
    remaining: int


@dataclass
class _Worker:
    agent_id: str
    role: str
    tasks: list[str]
    done: set[str] = field(default_factory=set)
    call: _Call | None = None
    failure: TaskError | None = None
    corrector: Corrector | None = None
    retry_steps: list[dict] | None = None
    paused: bool = False
    awaiting: bool = False
    invoked: bool = False
    history: list[dict] = field(default_factory=list)
    logs: list[str] = field(default_factory=list)
    reflections: int = 0


class RoundExecution:
    def __init__(self, strategy: Strategy, tools: Mapping[str, ToolRuntime], reasoner, bus: MessageBus,
                 memory: MemoryStore | None = None, *, scenario: ScenarioSpec | None = None,
                 config: ExecConfig | None = None, fixtures: Mapping | None = None, seed: int = 0,
                 events: list | None = None):
        self.strategy = strategy
        self.tools = tools
        self.reasoner = reasoner
        self.bus = bus
        self.memory = memory
        self.scenario = scenario
        self.config = config or ExecConfig()
        self.fixtures = fixtures or {}
        self.seed = seed
        self.round = strategy.round
        self.events = events if events is not None else []
        self.results: dict[str, dict] = {}
        self.timeouts: dict[str, int] = {}
        self.tick = 0
        self.alert: AlertContext | None = None
        self.acks: set[str] = set()
        self.workers: dict[str, _Worker] = {}
        for agent in strategy.agents:
            tids = [t.task_id for t in strategy.tasks_of(agent.agent_id)]
            self.workers[agent.agent_id] = _Worker(agent.agent_id, agent.role, tids)
        for stale in [w for w in bus.workers if w not in self.workers]:
            bus.unregister(stale)
        for aid in self.workers:
            bus.register(aid)
            bus.drain(aid)

    # -- helpers

    def _event(self, kind: str, agent: str, **extra) -> None:
        entry = {"round": self.round, "tick": self.tick, "event": kind, "agent": agent}
        entry.update(extra)
        self.events.append(entry)
        w = self.workers.get(agent)
        if w is not None:
            w.logs.append(f"t{self.tick} {kind} " + " ".join(f"{k}={v}" for k, v in sorted(extra.items())))

    def _to_monitor(self, sender: str, kind: str, payload: dict) -> None:
        # without a monitor (ablation) worker reports have nowhere to go
        if self.bus.is_registered(MONITOR):
            self.bus.send(sender, MONITOR, kind, payload, round=self.round)

    def _ready(self, task: TaskEntry) -> bool:
        deps = set(task.depends_on) | {b.ref_task for _, b in task.references()}
        return all(d in self.results for d in deps)

    def _start(self, w: _Worker, task: TaskEntry) -> None:
        if not w.invoked:
            w.invoked = True
            self._event("invoke", w.agent_id, role=w.role)
        self._event("start", w.agent_id, task=task.task_id, tool=task.tool)
        try:
            bindings = resolve_bindings(task, self.results, self.scenario)
        except BindingError as err:
            outcome = CallOutcome(None, err, 1)
        else:
            ctx = ToolContext(self.fixtures, self.seed, task.task_id)
            outcome = invoke(task, bindings, self.tools, ctx,
                             timeout=self.timeouts.get(task.task_id, self.config.timeout_steps), round=self.round)
        w.call = _Call(task, outcome, outcome.steps)

    def _advance(self, w: _Worker) -> None:
        call = w.call
        call.remaining -= 1
        if call.remaining > 0:
            return
        w.call = None
        task, outcome = call.task, call.outcome
        if outcome.error is None:
            self.results[task.task_id] = outcome.outputs
            w.done.add(task.task_id)
            w.corrector = None
            w.history.append({"task_id": task.task_id, "status": "ok", "outputs": sorted(outcome.outputs)})
            self._event("finish", w.agent_id, task=task.task_id)
            self._to_monitor(w.agent_id, "Result", {"task_id": task.task_id, "output_key": task.output_key,
                                                    "digest": digest(outcome.outputs)})
            self._remember(w, task, "ok", 0.3)
        else:
            err = outcome.error
            w.failure = err
            w.history.append({"task_id": task.task_id, "status": "error", "failure_class": err.failure_class})
            self._event("fail", w.agent_id, task=task.task_id, failure_class=err.failure_class)
            self._remember(w, task, err.failure_class, 0.8)

    def _remember(self, w: _Worker, task: TaskEntry, status: str, importance: float) -> None:
        if self.memory is not None:
            self.memory.record(w.agent_id, "sensory", f"{task.task_id} via {task.tool}: {status}",
                               {f"task:{task.task_id}", f"tool:{task.tool}", status}, importance, self.round)

    def _read_inbox(self, w: _Worker) -> None:
        for msg in self.bus.drain(w.agent_id):
            if msg.kind == "ErrorAlert":
                if self.alert is None or msg.msg_id != self.alert.alert_id:
                    continue
                w.paused = True
                self._event("pause", w.agent_id, alert=msg.msg_id)
                self._to_monitor(w.agent_id, "PauseAck", {"alert": msg.msg_id})
                report = StatusReportNormal(
                    w.agent_id,
                    tuple(h for h in w.history if h["status"] == "ok")[-5:],
                    tuple(w.logs[-10:]),
                )
                self._to_monitor(w.agent_id, "StatusReport", report.to_data())
                self.acks.add(w.agent_id)
            elif msg.kind == "Instruction":
                payload = msg.payload
                if "steps" in payload and w.awaiting:
                    self._apply_instruction(w, payload["task_id"], payload["steps"])
                elif payload.get("control") == "resume":
                    if w.paused:
                        self._event("resume", w.agent_id)
                    w.paused = False
                elif payload.get("control") == "stand_down":
                    w.paused = True
                    self._event("stand_down", w.agent_id)

    def _apply_instruction(self, w: _Worker, task_id: str, steps: Sequence[Mapping]) -> None:
        owner = self.strategy.owner_of(task_id)
        task = self.strategy.task(task_id)
        for step in steps:
            action = step.get("action")
            if action == "rebind":
                inputs = task.input_map
                inputs[step["param"]] = Binding.from_data(step["binding"])
                task = replace(task, inputs=tuple(inputs.items()))
            elif action == "swap_tool":
                task = replace(task, tool=step["tool"])
            elif action == "extend_timeout":
                self.timeouts[task_id] = int(step["steps"])
            elif action != "retry":
                self._event("instruction_rejected", w.agent_id, action=str(action))
        self.strategy = self.strategy.replace_task(owner, task)
        self._event("instruction", w.agent_id, task=task_id, steps=[s.get("action") for s in steps])
        w.awaiting = False
        w.failure = None
        w.corrector = None
        w.retry_steps = None
        self._start(w, task)
        self._advance(w)

    def _escalate(self, w: _Worker, err: TaskError) -> None:
        trace = tuple(w.corrector.trace)
        report = ErrorReportDetailed(
            worker=w.agent_id,
            task_id=err.task_id,
            logs=tuple(w.logs[-10:]),
            error_message=err.message,
            failure_class=err.failure_class,
            history=tuple(w.history[-5:]),
            reflection_trace=trace,
            keywords=extract_keywords(err.message, err.failure_class),
        )
        w.awaiting = True
        w.failure = None
        w.corrector = None
        self._event("escalate", w.agent_id, task=err.task_id, trace=len(trace))
        alert = raise_alert(w.agent_id, report, self.bus, round=self.round)
        self.alert = AlertContext(w.agent_id, err.task_id, alert.msg_id, report)
        self.acks = set()

    def _handle_failure(self, w: _Worker) -> None:
        err = w.failure
        if w.corrector is None:
            w.corrector = Corrector(w.agent_id, err.task_id, self.reasoner, self.config.self_retries)
        w.corrector.record(err)
        before = w.corrector.fix_calls
        steps = w.corrector.next_patch(err)
        w.reflections += w.corrector.fix_calls - before
        if steps is None:
            self._escalate(w, err)
            return
        task = self.strategy.task(err.task_id)
        for step in steps:
            action = step.get("action")
            if action == "rebind":
                inputs = task.input_map
                inputs[step["param"]] = Binding.from_data(step["binding"])
                task = replace(task, inputs=tuple(inputs.items()))
            elif action != "retry":
                self._event("patch_rejected", w.agent_id, action=str(action))
        if task != self.strategy.task(err.task_id):
            self.strategy = self.strategy.replace_task(self.strategy.owner_of(err.task_id), task)
        self._event("fix", w.agent_id, task=err.task_id, steps=[s.get("action") for s in steps])
        w.failure = None
        self._start(w, task)
        self._advance(w)

    def _step(self, w: _Worker) -> None:
        if w.call is not None:
            self._advance(w)
            if w.call is not None:
                return
        self._read_inbox(w)
        if w.paused or w.awaiting or w.call is not None:
            return
        if w.failure is not None:
            self._handle_failure(w)
            return
        for tid in w.tasks:
            if tid in w.done:
                continue
            task = self.strategy.task(tid)
            if self._ready(task):
                self._start(w, task)
                self._advance(w)
                return

    def _finished(self) -> bool:
        return all(len(w.done) == len(w.tasks) and w.call is None for w in self.workers.values())

    def _handshake_done(self) -> bool:
        peers = {aid for aid in self.workers if aid != self.alert.worker}
        return peers <= self.acks and all(self.workers[p].call is None for p in peers)

    # -- driver

    def run(self) -> RoundOutcome:
        while True:
            if self.alert is not None and self._handshake_done():
                return RoundOutcome("paused", alert=self.alert, execution=self)
            if self.alert is None and self._finished():
                return RoundOutcome("completed", outputs=self.final_outputs(), execution=self)
            if self.tick >= self.config.max_ticks:
                return RoundOutcome("stalled", execution=self)
            before = (len(self.events), len(self.bus.log))
            self.tick += 1
            for w in self.workers.values():
                self._step(w)
            busy = any(w.call is not None for w in self.workers.values())
            if (len(self.events), len(self.bus.log)) == before and not busy:
                return RoundOutcome("stalled", execution=self)

    def resume(self) -> RoundOutcome:
        """Continue after the monitor has delivered its verdict messages."""
        self.alert = None
        self.acks = set()
        return self.run()

    def stand_down(self) -> None:
        for w in self.workers.values():
            self._read_inbox(w)

    def final_outputs(self) -> dict:
        used = {b.ref_task for _, t in self.strategy.all_tasks() for _, b in t.references()}
        used |= {d for _, t in self.strategy.all_tasks() for d in t.depends_on}
        return {t.output_key: self.results[t.task_id]
                for _, t in self.strategy.all_tasks() if t.task_id not in used and t.task_id in self.results}

    def reflection_counts(self) -> dict[str, int]:
        return {aid: w.reflections for aid, w in self.workers.items()}


def run_round(strategy: Strategy, tools: Mapping[str, ToolRuntime], reasoner, bus: MessageBus,
              memory: MemoryStore | None = None, **kw) -> RoundOutcome:
    return RoundExecution(strategy, tools, reasoner, bus, memory, **kw).run()
