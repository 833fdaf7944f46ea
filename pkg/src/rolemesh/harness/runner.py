"""Lifecycle driver: initialize, execute, monitor, replan; plus run reports."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Any, Iterable

from ..bus import MONITOR, PLANNER, MessageBus
from ..errors import InitializationFailed, ReplanExhausted, RolemeshError
from ..execution import ExecConfig, RoundExecution
from ..memory import MemoryStore
from ..monitor import ErrorTree, Monitor
from ..planner import InitConfig, build_profile, initialize
from ..reasoner.scripted import ScriptedReasoner
from ..replanner import DEFAULT_RULES, ReplanConfig, ReplanStats, replan
from ..serialize import canonical_json, digest
from .faults import FaultInjector, build_tools
from .scenario import SUBTASK_KINDS, LoadedScenario, Toggles

MAX_REPLANS = 3


@dataclass(frozen=True)
class VerdictRecord:
    round: int
    kind: str
    leaf: str
    task_id: str
    escalated_from: str | None = None

    def to_data(self) -> dict:
        return {"round": self.round, "kind": self.kind, "leaf": self.leaf, "task_id": self.task_id,
                "escalated_from": self.escalated_from}


@dataclass
class RunReport:
    scenario: str
    seed: int
    success: bool
    outcome: str
    final_answer_digest: str | None
    worker_count: int
    self_reflection_counts: dict[str, int]
    replanning_count: int
    instruction_count: int
    recommendation_count: int
    alert_episodes: int
    unhandled_alerts: int
    subtask_type_histogram: dict[str, int]
    init_attempts: dict[str, int]
    replan_regenerations: list[int]
    reflection_traces: list[int]
    verdicts: list[VerdictRecord]
    accepted_paths: list[list[str]]
    rounds: int
    toggles: dict[str, bool]
    event_log_digest: str
    message_log_digest: str
    detail: str = ""

    def to_data(self) -> dict:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "verdicts":
                value = [v.to_data() for v in value]
            data[f.name] = value
        return data


def render_structured(report: RunReport) -> str:
    return canonical_json(report.to_data()) + "\n"


def _share(part: int, total: int) -> str:
    return f"{100.0 * part / total:.1f}%" if total else "n/a"


def render_text(report: RunReport) -> str:
    lines = [
        f"scenario: {report.scenario} (seed {report.seed})",
        f"outcome: {'success' if report.success else 'failure'} ({report.outcome})",
    ]
    if report.detail:
        lines.append(f"detail: {report.detail}")
    lines += [f"final answer digest: {report.final_answer_digest or '-'}", "", "[workers]",
              f"worker count: {report.worker_count}", "", "[self-reflection]"]
    counts = report.self_reflection_counts
    for aid in sorted(counts):
        lines.append(f"  {aid}: {counts[aid]}")
    mean = sum(counts.values()) / len(counts) if counts else 0.0
    lines.append(f"mean per agent: {mean:.2f}")
    lines += ["", "[replanning]", f"replanning count: {report.replanning_count}"]
    for i, (regen, paths) in enumerate(zip(report.replan_regenerations, report.accepted_paths), start=1):
        lines.append(f"  replan {i}: {regen} regeneration(s), accepted {', '.join(paths) or 'nothing'}")
    total = report.instruction_count + report.recommendation_count
    lines += [
        "", "[monitor]",
        f"alert episodes: {report.alert_episodes}",
        f"instructions: {report.instruction_count} ({_share(report.instruction_count, total)})",
        f"recommendations: {report.recommendation_count} ({_share(report.recommendation_count, total)})",
    ]
    if report.unhandled_alerts:
        lines.append(f"unhandled alerts: {report.unhandled_alerts}")
    for v in report.verdicts:
        extra = f", escalated from {v.escalated_from}" if v.escalated_from else ""
        lines.append(f"  round {v.round}: {v.kind} for {v.task_id} at {v.leaf}{extra}")
    lines += ["", "[subtasks]"]
    for kind, n in report.subtask_type_histogram.items():
        lines.append(f"  {kind}: {n}")
    lines += ["", f"event log digest: {report.event_log_digest}",
              f"message log digest: {report.message_log_digest}"]
    return "\n".join(lines) + "\n"


def emit_report(report: RunReport, format: str = "text") -> str:
    if format == "structured":
        return render_structured(report)
    if format == "text":
        return render_text(report)
    raise ValueError(f"unknown report format {format!r}")


def counts_from_log(log: Iterable) -> dict[str, int]:
    """Monitor and alert counters recomputed from an exported message log."""
    out = {"alerts": 0, "instructions": 0, "recommendations": 0, "replan_triggers": 0}
    for entry in log:
        data = entry.to_data() if hasattr(entry, "to_data") else entry
        if data["event"] != "send":
            continue
        msg = data["message"]
        if msg["kind"] == "ErrorAlert":
            out["alerts"] += 1
        elif msg["kind"] == "Instruction" and msg["sender"] == MONITOR and "steps" in msg["payload"]:
            out["instructions"] += 1
        elif msg["kind"] == "Recommendation":
            out["recommendations"] += 1
        elif msg["kind"] == "ReplanTrigger":
            out["replan_triggers"] += 1
    return out


@dataclass
class RunArtifacts:
    """Everything a run leaves behind, for tests and debugging."""

    report: RunReport
    bus: MessageBus
    events: list[dict]
    memory: MemoryStore
    strategies: list = field(default_factory=list)
    replans: list[tuple[Any, Any, ReplanStats]] = field(default_factory=list)
    init_trace: list = field(default_factory=list)
    reasoner: Any = None
    last_strategy: Any = None


def execute(loaded: LoadedScenario, seed: int = 0, *, reasoner=None, toggles: Toggles | None = None) -> RunArtifacts:
    """Drive one scenario through the full lifecycle; failures become report outcomes."""
    toggles = toggles or loaded.toggles
    reasoner = reasoner if reasoner is not None else ScriptedReasoner(loaded.script)
    memory = MemoryStore(enabled=not toggles.no_memory)
    bus = MessageBus()
    bus.register(PLANNER, worker=False)
    if not toggles.no_monitor:
        bus.register(MONITOR, worker=False)
    tree = loaded.error_tree or ErrorTree.default()
    monitor = Monitor(tree, reasoner, loaded.spec, memory)
    injector = FaultInjector(loaded.faults)
    tools = build_tools(loaded, injector)
    exec_config = ExecConfig(self_retries=0 if toggles.no_self_reflection else 2)
    replan_config = ReplanConfig(rules=loaded.rules if loaded.rules is not None else DEFAULT_RULES)
    init_config = InitConfig()
    profile = build_profile(init_config.profile_template, loaded.spec)
    events: list[dict] = []
    art = RunArtifacts(None, bus, events, memory, reasoner=reasoner)  # type: ignore[arg-type]

    reflections: dict[str, int] = {}
    traces: list[int] = []
    verdicts: list[VerdictRecord] = []
    regenerations: list[int] = []
    accepted: list[list[str]] = []
    alerts = handled = 0
    outcome, detail, success, answer = "", "", False, None
    strategy = None

    try:
        strategy = initialize(loaded.spec, reasoner, memory, init_config, trace=art.init_trace)
    except InitializationFailed as exc:
        outcome, detail = "initialization_failed", f"stage {exc.stage}"
    except RolemeshError as exc:
        outcome, detail = "reasoner_error", f"{type(exc).__name__}: {exc}"

    replans = 0
    while strategy is not None and not outcome:
        art.strategies.append(strategy)
        exe = RoundExecution(strategy, tools, reasoner, bus, memory, scenario=loaded.spec, config=exec_config,
                             fixtures=loaded.fixtures, seed=seed, events=events)
        next_strategy = None
        try:
            result = exe.run()
            while result.paused:
                alerts += 1
                traces.append(len(result.alert.report.reflection_trace))
                if toggles.no_monitor:
                    outcome, detail = "escalated_without_monitor", f"alert from {result.alert.worker}"
                    break
                reports = monitor.collect(bus)
                state = monitor.collect_state(reports, exe.strategy)
                leaf = monitor.classify(state)
                verdict = monitor.adjudicate(state, leaf, exe.strategy)
                handled += 1
                verdicts.append(VerdictRecord(exe.round, verdict.kind, verdict.classified_leaf, verdict.task_id,
                                              verdict.escalated_from))
                monitor.deliver(verdict, bus, exe.round)
                if verdict.is_instruction:
                    result = exe.resume()
                    continue
                exe.stand_down()
                bus.drain(PLANNER)
                if replans >= MAX_REPLANS:
                    outcome, detail = "replan_limit", f"more than {MAX_REPLANS} replans needed"
                    break
                stats = ReplanStats()
                s_old = exe.strategy
                try:
                    next_strategy = replan(state, verdict.recommendation, loaded.spec, s_old, reasoner, memory,
                                           replan_config, prompt=profile, gap_narrow=not toggles.no_gap_narrow,
                                           stats=stats)
                except ReplanExhausted as exc:
                    regenerations.append(exc.regenerations)
                    outcome, detail = "replan_exhausted", str(exc)
                    break
                replans += 1
                regenerations.append(stats.regenerations)
                accepted.append(list(stats.accepted))
                art.replans.append((s_old, next_strategy, stats))
                break
            else:
                if result.completed:
                    success, outcome = True, "completed"
                    answer = digest(result.outputs)
                else:
                    outcome, detail = "stalled", f"round {exe.round} made no progress"
        except RolemeshError as exc:
            outcome, detail = "reasoner_error", f"{type(exc).__name__}: {exc}"
        for aid, n in exe.reflection_counts().items():
            reflections[aid] = reflections.get(aid, 0) + n
        memory.promote(exe.round + 1)
        strategy = next_strategy if not outcome else None
        art.last_strategy = exe.strategy if next_strategy is None else next_strategy

    last = art.last_strategy
    hist = {k: 0 for k in SUBTASK_KINDS}
    if last is not None:
        for _, t in last.all_tasks():
            kind = loaded.subtask_type(t.tool)
            hist[kind] = hist.get(kind, 0) + 1
    init_attempts = {"team": 0, "tasks": 0}
    for a in art.init_trace:
        init_attempts[a.stage] += 1
    ordered_reflections = {}
    if last is not None:
        for a in last.agents:
            ordered_reflections[a.agent_id] = reflections.get(a.agent_id, 0)
    for aid in sorted(reflections):
        ordered_reflections.setdefault(aid, reflections[aid])
    art.report = RunReport(
        scenario=loaded.name,
        seed=seed,
        success=success,
        outcome=outcome,
        final_answer_digest=answer,
        worker_count=len(last.agents) if last is not None else 0,
        self_reflection_counts=ordered_reflections,
        replanning_count=replans,
        instruction_count=sum(v.kind == "instruction" for v in verdicts),
        recommendation_count=sum(v.kind == "recommendation" for v in verdicts),
        alert_episodes=handled,
        unhandled_alerts=alerts - handled,
        subtask_type_histogram=hist,
        init_attempts=init_attempts,
        replan_regenerations=regenerations,
        reflection_traces=traces,
        verdicts=verdicts,
        accepted_paths=accepted,
        rounds=len(art.strategies),
        toggles=toggles.to_data(),
        event_log_digest=digest(events),
        message_log_digest=bus.log_digest(),
        detail=detail,
    )
    return art


def run(loaded: LoadedScenario, seed: int = 0, **kw) -> RunReport:
    return execute(loaded, seed, **kw).report
