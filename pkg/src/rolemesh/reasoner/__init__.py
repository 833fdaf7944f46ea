"""Pluggable reasoning backends behind plan / reflect / diff."""

from ..domain import DiffItem
from .base import (
    PlanRequest,
    Reasoner,
    ReflectRequest,
    ReflectResponse,
    checked_diff,
    decode_plan,
)
from .recording import RecordingReasoner
from .remote import RemoteReasoner, ScriptServer
from .scripted import ScriptedReasoner, ScriptEntry, load_script, parse_script

__all__ = [
    "DiffItem", "PlanRequest", "Reasoner", "RecordingReasoner", "ReflectRequest", "ReflectResponse",
    "RemoteReasoner", "ScriptEntry", "ScriptServer", "ScriptedReasoner", "checked_diff",
    "decode_plan", "load_script", "parse_script",
]
