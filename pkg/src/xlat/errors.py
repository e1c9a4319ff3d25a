"""Error types shared across the package.

Every user-facing failure is an ``XlatError`` carrying an optional source
span so the CLI can point at the offending input.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Span:
    """Half-open byte range ``[start, stop)`` into some source text."""

    start: int
    stop: int

    def merge(self, other: "Span") -> "Span":
        return Span(min(self.start, other.start), max(self.stop, other.stop))


def line_col(text: str, pos: int) -> tuple[int, int]:
    """1-based (line, column) of ``pos`` in ``text``."""
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


class XlatError(Exception):
    """Base class for all translation-pipeline errors."""

    def __init__(self, message: str, span: Span | None = None):
        super().__init__(message)
        self.message = message
        self.span = span

    def __str__(self) -> str:
        if self.span is not None:
            return f"{self.message} [at {self.span.start}..{self.span.stop}]"
        return self.message


# kernel
class IllTyped(XlatError):
    pass


class UnknownConst(XlatError):
    pass


class UnscopedVar(XlatError):
    pass


# unification; raised by MetaState.assign and caught by the unifier
class AssignmentError(XlatError):
    pass


class OccursCheckError(AssignmentError):
    pass


class OutOfScopeFVar(AssignmentError):
    pass


# core surface syntax (environment files, rule term sides, CLI terms)
class CoreSyntaxError(XlatError):
    pass


# environment files
class EnvSyntaxError(XlatError):
    pass


class EnvIllTyped(XlatError):
    pass


class DuplicateDecl(XlatError):
    pass


# rule files
class RuleSyntaxError(XlatError):
    """Syntax error in a rule file; message already carries line:col."""


class ElabError(XlatError):
    """A rule's term side failed to elaborate at compile time."""


class PrecedenceConflict(XlatError):
    pass


# runtime parsing
class LexError(XlatError):
    pass


class ParseError(XlatError):
    def __init__(self, message: str, span: Span | None = None, expected: tuple[str, ...] = ()):
        super().__init__(message, span)
        self.expected = expected


class TrailingInput(ParseError):
    pass


# term -> external
class NoMatch(XlatError):
    pass


class DepthExceeded(XlatError):
    pass


class NoGrouping(XlatError):
    pass


# external -> term
class TypeMismatch(XlatError):
    pass


class UnsolvedMeta(XlatError):
    pass


class UnknownIdent(XlatError):
    pass


class DirectionError(XlatError):
    """Rule used in a direction its arrow does not permit."""
