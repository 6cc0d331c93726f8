"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SciVLAError(Exception):
    """Base class for every error raised by scivla."""


class ConfigError(SciVLAError):
    """A scenario, sequence, bench spec or demo file is malformed."""

    def __init__(self, message: str, field: str | None = None) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ActionError(SciVLAError, ValueError):
    """An action violates its invariants (wrong arity or oversized step)."""


class DemoFormatError(ConfigError):
    """A demonstration record could not be parsed or violates its invariants."""

    def __init__(self, message: str, line: int) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


class NoMatch(SciVLAError):
    """No stored prompt is similar enough to the query."""

    def __init__(self, query: str, best: str | None, score: float) -> None:
        self.query = query
        self.best = best
        self.score = score
        super().__init__(f"no prompt matches {query!r} (best {best!r}, score {score:.3f})")


class UnknownTask(ConfigError):
    """The policy has no demonstrations for a prompt."""

    def __init__(self, prompt: str) -> None:
        self.prompt = prompt
        super().__init__(f"no demonstrations for task {prompt!r}")


class ParseError(SciVLAError):
    """Transition DSL source failed to parse."""

    def __init__(self, message: str, line: int, column: int) -> None:
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}")


class ReplyFormatError(SciVLAError):
    """A model reply did not contain exactly one fenced block."""

    def __init__(self, message: str, spans: list[tuple[int, int]] | None = None) -> None:
        self.spans = spans or []
        super().__init__(message)


class InterpreterFault(SciVLAError):
    """A transition program faulted while executing (collision, gripper conflict)."""

    def __init__(self, kind: str, message: str, command_index: int | None = None) -> None:
        self.kind = kind
        self.command_index = command_index
        super().__init__(f"{kind}: {message}")


class SynthesisFailed(SciVLAError):
    """Every attempt to produce a valid transition program was rejected."""

    def __init__(self, attempts: list) -> None:
        self.attempts = attempts
        super().__init__(f"transition synthesis failed after {len(attempts)} attempt(s)")


class TransportError(SciVLAError):
    """The remote model endpoint could not be reached or answered badly."""
