"""Exception hierarchy shared across the runtime."""

from __future__ import annotations


class RolemeshError(Exception):
    """Base class for every error raised by this package."""


class ScenarioInvalid(RolemeshError, ValueError):
    """A domain value violates one of its construction invariants."""


class StructureError(RolemeshError):
    """An agent tree is malformed (no single root, cycle, dangling parent)."""


class DiffConflict(RolemeshError):
    """A set of diff items cannot be applied to a strategy."""


class RoutingError(RolemeshError):
    """A message names a recipient that is not registered on the bus."""


class TemplateError(RolemeshError):
    """A profile template references a slot that cannot be filled."""


class InitializationFailed(RolemeshError):
    def __init__(self, stage: str, findings, trace=()):
        self.stage = stage
        self.findings = list(findings)
        self.trace = list(trace)
        super().__init__(f"initialization failed at {stage} stage with {len(self.findings)} finding(s)")


class ReplanExhausted(RolemeshError):
    def __init__(self, message: str, findings=(), regenerations: int = 0):
        self.findings = list(findings)
        self.regenerations = regenerations
        super().__init__(message)


class ProtocolError(RolemeshError):
    """The alert protocol was driven out of order."""


class MonitorError(RolemeshError):
    """The monitor could not produce a verdict."""


class ScenarioError(RolemeshError):
    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


# reasoner boundary


class ReasonerError(RolemeshError):
    pass


class ScriptError(ReasonerError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ScriptExhausted(ReasonerError):
    pass


class ScriptMismatch(ReasonerError):
    def __init__(self, expected: dict, got: dict, position: int):
        self.expected = expected
        self.got = got
        self.position = position
        super().__init__(f"script step {position}: expected {expected}, got {got}")


class BackendError(ReasonerError):
    pass


class DiffInconsistent(ReasonerError):
    pass
