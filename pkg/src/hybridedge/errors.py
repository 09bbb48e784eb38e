"""Exception hierarchy shared by every module."""

from __future__ import annotations


class HybridEdgeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HybridEdgeError):
    """A workload spec violated one or more invariants.

    ``violations`` holds every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class NonPositiveBaseline(HybridEdgeError, ValueError):
    pass


class ZeroCapacity(HybridEdgeError, ValueError):
    pass


class InvalidRuleTable(HybridEdgeError):
    pass


class MissingCatchAll(InvalidRuleTable):
    pass


class UnknownFlavor(InvalidRuleTable):
    pass


class ParseError(HybridEdgeError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class StaleSnapshot(HybridEdgeError):
    """Heartbeat older than the last one applied; the node state is unchanged."""


class NoCapacity(HybridEdgeError):
    """Placement could not fit an instance although admission said it would."""


class UnknownProfile(HybridEdgeError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class KernelFailure(HybridEdgeError):
    pass


class EmptyDataset(KernelFailure):
    pass


class MalformedRow(KernelFailure):
    def __init__(self, line: int, detail: str = ""):
        self.line = line
        super().__init__(f"malformed row at line {line}" + (f": {detail}" if detail else ""))


class UnreadablePayload(KernelFailure):
    pass


class UnsupportedAppClass(KernelFailure):
    pass


class ProtocolError(HybridEdgeError):
    pass


class DuplicateWorkloadId(HybridEdgeError):
    pass


class UnknownFilterField(HybridEdgeError, ValueError):
    pass


class EmptySet(HybridEdgeError, ValueError):
    def __init__(self, side: str):
        self.side = side
        super().__init__(f"no successful records on side {side}")


class InvalidScenario(HybridEdgeError):
    pass
