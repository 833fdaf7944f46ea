"""In-memory message bus with per-recipient FIFO inboxes.

Every send is stamped with a global ``msg_id`` and a per-sender ``seq``;
the bus keeps a log of sends and deliveries that can be exported as JSON
lines for trace assertions.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .errors import RoutingError
from .serialize import canonical_json, digest

KINDS = (
    "StatusReport",
    "ErrorAlert",
    "PauseAck",
    "Instruction",
    "Recommendation",
    "Result",
    "ReplanTrigger",
)
BROADCAST = "*"
MONITOR = "monitor"
PLANNER = "planner"


@dataclass(frozen=True)
class Message:
    msg_id: int
    sender: str
    recipient: str
    kind: str
    payload: dict = field(default_factory=dict)
    round: int = 0
    seq: int = 0

    @property
    def is_broadcast(self) -> bool:
        return self.recipient == BROADCAST

    def to_data(self) -> dict:
        return {
            "msg_id": self.msg_id,
            "sender": self.sender,
            "recipient": self.recipient,
            "kind": self.kind,
            "payload": self.payload,
            "round": self.round,
            "seq": self.seq,
        }


@dataclass(frozen=True)
class LogEntry:
    event: str  # "send" or "deliver"
    message: Message
    recipients: tuple[str, ...]

    def to_data(self) -> dict:
        return {"event": self.event, "recipients": list(self.recipients), "message": self.message.to_data()}


class MessageBus:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._inboxes: dict[str, deque[Message]] = {}
        self._workers: list[str] = []
        self._seq: dict[str, int] = {}
        self._next_id = 1
        self.log: list[LogEntry] = []

    # registration

    def register(self, agent_id: str, *, worker: bool = True) -> None:
        with self._lock:
            self._inboxes.setdefault(agent_id, deque())
            if worker and agent_id not in self._workers:
                self._workers.append(agent_id)

    def unregister(self, agent_id: str) -> None:
        with self._lock:
            self._inboxes.pop(agent_id, None)
            if agent_id in self._workers:
                self._workers.remove(agent_id)

    @property
    def workers(self) -> list[str]:
        return list(self._workers)

    def is_registered(self, agent_id: str) -> bool:
        return agent_id in self._inboxes

    # transport

    def _stamp(self, sender: str, recipient: str, kind: str, payload: dict | None, round: int) -> Message:
        if kind not in KINDS:
            raise ValueError(f"unknown message kind {kind!r}")
        seq = self._seq.get(sender, 0) + 1
        self._seq[sender] = seq
        msg = Message(self._next_id, sender, recipient, kind, dict(payload or {}), round, seq)
        self._next_id += 1
        return msg

    def send(self, sender: str, recipient: str, kind: str, payload: dict | None = None, *, round: int = 0) -> Message:
        """Unicast. ErrorAlert is rejected here because alerts are always broadcast."""
        if kind == "ErrorAlert":
            raise ValueError("ErrorAlert must be broadcast")
        with self._lock:
            if recipient not in self._inboxes:
                raise RoutingError(f"unknown recipient {recipient!r}")
            msg = self._stamp(sender, recipient, kind, payload, round)
            self._inboxes[recipient].append(msg)
            self.log.append(LogEntry("send", msg, (recipient,)))
            return msg

    def broadcast(self, sender: str, kind: str, payload: dict | None = None, *, round: int = 0) -> Message:
        """Fan out to every registered worker except the sender, plus the monitor."""
        if kind not in ("ErrorAlert", "Instruction"):
            raise ValueError(f"{kind} cannot be broadcast")
        with self._lock:
            targets = [w for w in self._workers if w != sender]
            if MONITOR in self._inboxes and sender != MONITOR:
                targets.append(MONITOR)
            msg = self._stamp(sender, BROADCAST, kind, payload, round)
            for t in targets:
                self._inboxes[t].append(msg)
            self.log.append(LogEntry("send", msg, tuple(targets)))
            return msg

    def next(self, recipient: str) -> Message | None:
        with self._lock:
            box = self._inboxes.get(recipient)
            if box is None:
                raise RoutingError(f"unknown recipient {recipient!r}")
            if not box:
                return None
            msg = box.popleft()
            self.log.append(LogEntry("deliver", msg, (recipient,)))
            return msg

    def drain(self, recipient: str) -> list[Message]:
        out = []
        while (msg := self.next(recipient)) is not None:
            out.append(msg)
        return out

    def pending(self, recipient: str) -> int:
        with self._lock:
            box = self._inboxes.get(recipient)
            if box is None:
                raise RoutingError(f"unknown recipient {recipient!r}")
            return len(box)

    # export

    def sent(self) -> list[Message]:
        return [e.message for e in self.log if e.event == "send"]

    def export_jsonl(self) -> str:
        return "".join(canonical_json(e.to_data()) + "\n" for e in self.log)

    def log_digest(self) -> str:
        return digest([e.to_data() for e in self.log])


def load_jsonl(text: str) -> list[dict]:
    import json

    return [json.loads(line) for line in text.splitlines() if line.strip()]


def pause_violations(log: Iterable[dict | LogEntry]) -> list[dict]:
    """Result messages sent by a worker while it was paused.

    A worker is paused from the delivery of an ErrorAlert until the delivery
    of the next Instruction addressed to it (unicast or broadcast).
    """
    paused: set[str] = set()
    bad = []
    for entry in log:
        data = entry.to_data() if isinstance(entry, LogEntry) else entry
        msg = data["message"]
        if data["event"] == "deliver":
            who = data["recipients"][0]
            if msg["kind"] == "ErrorAlert":
                paused.add(who)
            elif msg["kind"] in ("Instruction", "Recommendation") and who in paused:
                paused.discard(who)
        elif data["event"] == "send" and msg["kind"] == "Result" and msg["sender"] in paused:
            bad.append(msg)
    return bad
