"""Exception hierarchy. Every error carries a stable ``code`` string."""

from __future__ import annotations


class ScopexError(Exception):
    code = "error"


class InvalidInput(ScopexError):
    code = "invalid-input"


class DimensionMismatch(ScopexError):
    code = "dimension-mismatch"


class DegenerateEmbedding(ScopexError):
    code = "degenerate-embedding"


class NotFound(ScopexError):
    code = "not-found"


class GatewayError(ScopexError):
    """Backend failure. ``stage`` names the pipeline step that issued the call."""

    code = "gateway-error"

    def __init__(self, message: str, status: int | None = None, stage: str | None = None):
        super().__init__(message)
        self.status = status
        self.stage = stage
        self.trace = None

    def __str__(self) -> str:
        msg = super().__str__()
        if self.stage:
            msg = f"[{self.stage}] {msg}"
        if self.status is not None:
            msg = f"{msg} (status {self.status})"
        return msg


class NoRule(GatewayError):
    code = "no-rule"


class ParseError(GatewayError):
    code = "parse-error"

    def __init__(self, message: str, raw: str, stage: str | None = None):
        super().__init__(message, stage=stage)
        self.raw = raw


class ExtensionEmpty(ScopexError):
    code = "extension-empty"


class NoFeedback(ExtensionEmpty):
    code = "no-feedback"


class NoGeneralization(ScopexError):
    code = "no-generalization"


class AlreadyCommon(ScopexError):
    code = "already-common"


class CycleDetected(ScopexError):
    code = "cycle-detected"

    def __init__(self, cycle: list[str], labels: list[str] | None = None):
        self.cycle = cycle
        self.labels = labels or cycle
        super().__init__("cycle detected: " + " -> ".join(self.labels))


class IdentityCollision(ScopexError):
    code = "identity-collision"


class DegenerateDistribution(ScopexError):
    code = "degenerate-distribution"


class OutcomeMismatch(ScopexError):
    code = "outcome-mismatch"


class BoundViolation(ScopexError):
    code = "bound-violation"


class InvalidStrategy(ScopexError):
    code = "invalid-strategy"
