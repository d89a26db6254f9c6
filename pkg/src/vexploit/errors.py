"""Shared error and diagnostic types."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Diagnostic:
    """A located problem in a source file or manifest."""

    message: str
    origin: str = "<unknown>"
    line: int = 0
    col: int = 0

    def render(self) -> str:
        if self.line:
            return f"{self.origin}:{self.line}:{self.col}: {self.message}"
        return f"{self.origin}: {self.message}"


class VexploitError(Exception):
    """Base class for all errors raised by this package."""


class FrontendError(VexploitError):
    """Lexing, parsing, or resolution failure; carries diagnostics."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(d.render() for d in self.diagnostics) or "frontend error")


class ParseError(FrontendError):
    pass


class ResolutionError(FrontendError):
    pass


class InstrumentationError(VexploitError):
    """Malformed event stream or substitution misuse."""


class CorpusError(VexploitError):
    """Manifest or fixture problem severe enough to stop a load."""


class ConfigError(VexploitError):
    """Bad CLI or pipeline configuration; maps to exit code 2."""
