"""Surface syntax for kernel terms.

The grammar is the one used in environment files, on the term side of rule
files and on the CLI:

    fun x : T => e      lambda (binder type optional)
    Π x : T, e          dependent function type; {x : T} for implicit
    A -> B              non-dependent function type
    let x : T := e; e   local definition (type optional)
    f a b               application by juxtaposition
    (e : T)             ascription
    _                   hole
    Prop / Type         sorts, plus numerals and dotted identifiers
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .errors import CoreSyntaxError, Span
from .terms import (
    App,
    BVar,
    Const,
    FVar,
    Lam,
    Let,
    Level,
    LocalContext,
    MVar,
    NatLit,
    Pi,
    Sort,
    Term,
    app_spine,
)

# ---------------------------------------------------------------------------
# surface AST


@dataclass(frozen=True)
class SrcIdent:
    name: str
    span: Span


@dataclass(frozen=True)
class SrcNum:
    value: int
    span: Span


@dataclass(frozen=True)
class SrcSort:
    level: Level
    span: Span


@dataclass(frozen=True)
class SrcHole:
    span: Span


@dataclass(frozen=True)
class SrcApp:
    fn: "SrcTerm"
    arg: "SrcTerm"
    span: Span


@dataclass(frozen=True)
class SrcFun:
    binder: str
    binder_type: Optional["SrcTerm"]
    body: "SrcTerm"
    span: Span


@dataclass(frozen=True)
class SrcPi:
    binder: str
    binder_type: "SrcTerm"
    body: "SrcTerm"
    implicit: bool
    span: Span


@dataclass(frozen=True)
class SrcLet:
    binder: str
    binder_type: Optional["SrcTerm"]
    value: "SrcTerm"
    body: "SrcTerm"
    span: Span


@dataclass(frozen=True)
class SrcAscribe:
    expr: "SrcTerm"
    type: "SrcTerm"
    span: Span


SrcTerm = Union[SrcIdent, SrcNum, SrcSort, SrcHole, SrcApp, SrcFun, SrcPi, SrcLet, SrcAscribe]


# ---------------------------------------------------------------------------
# lexing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_'.]*)
  | (?P<sym>:=|=>|->|[Π(){}:,;])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"fun", "let", "Prop", "Type"}


@dataclass(frozen=True)
class _Tok:
    kind: str  # "num" | "ident" | "sym" | "kw" | "hole" | "eof"
    text: str
    span: Span


def _lex(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise CoreSyntaxError(f"unexpected character {text[pos]!r}", Span(pos, pos + 1))
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        span = Span(m.start(), m.end())
        value = m.group()
        if m.lastgroup == "num":
            toks.append(_Tok("num", value, span))
        elif m.lastgroup == "ident":
            if value == "_":
                toks.append(_Tok("hole", value, span))
            elif value in _KEYWORDS:
                toks.append(_Tok("kw", value, span))
            else:
                toks.append(_Tok("ident", value, span))
        else:
            toks.append(_Tok("sym", value, span))
    toks.append(_Tok("eof", "", Span(len(text), len(text))))
    return toks


# ---------------------------------------------------------------------------
# parsing


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise CoreSyntaxError(f"expected {want!r}, found {tok.text!r}", tok.span)
        return self.next()

    def at_sym(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "sym" and tok.text == text

    def term(self) -> SrcTerm:
        tok = self.peek()
        if tok.kind == "kw" and tok.text == "fun":
            self.next()
            name = self.expect("ident").text
            binder_type = None
            if self.at_sym(":"):
                self.next()
                binder_type = self.term()
            self.expect("sym", "=>")
            body = self.term()
            return SrcFun(name, binder_type, body, tok.span.merge(body.span))
        if tok.kind == "sym" and tok.text == "Π":
            self.next()
            implicit = self.at_sym("{")
            if implicit:
                self.next()
            name = self.expect("ident").text
            self.expect("sym", ":")
            binder_type = self.term()
            if implicit:
                self.expect("sym", "}")
            self.expect("sym", ",")
            body = self.term()
            return SrcPi(name, binder_type, body, implicit, tok.span.merge(body.span))
        if tok.kind == "kw" and tok.text == "let":
            self.next()
            name = self.expect("ident").text
            binder_type = None
            if self.at_sym(":"):
                self.next()
                binder_type = self.term()
            self.expect("sym", ":=")
            value = self.term()
            self.expect("sym", ";")
            body = self.term()
            return SrcLet(name, binder_type, value, body, tok.span.merge(body.span))
        return self.arrow()

    def arrow(self) -> SrcTerm:
        lhs = self.app()
        if self.at_sym("->"):
            self.next()
            rhs = self.arrow()
            span = lhs.span.merge(rhs.span)
            # sugar: A -> B is a Pi that does not use its binder
            return SrcPi("_", lhs, rhs, False, span)
        return lhs

    def app(self) -> SrcTerm:
        out = self.atom()
        while self._starts_atom():
            arg = self.atom()
            out = SrcApp(out, arg, out.span.merge(arg.span))
        return out

    def _starts_atom(self) -> bool:
        tok = self.peek()
        if tok.kind in ("ident", "num", "hole"):
            return True
        if tok.kind == "kw" and tok.text in ("Prop", "Type"):
            return True
        return tok.kind == "sym" and tok.text == "("

    def atom(self) -> SrcTerm:
        tok = self.next()
        if tok.kind == "ident":
            return SrcIdent(tok.text, tok.span)
        if tok.kind == "num":
            return SrcNum(int(tok.text), tok.span)
        if tok.kind == "hole":
            return SrcHole(tok.span)
        if tok.kind == "kw" and tok.text == "Prop":
            return SrcSort(Level.PROP, tok.span)
        if tok.kind == "kw" and tok.text == "Type":
            return SrcSort(Level.TYPE, tok.span)
        if tok.kind == "sym" and tok.text == "(":
            inner = self.term()
            if self.at_sym(":"):
                self.next()
                ty = self.term()
                close = self.expect("sym", ")")
                return SrcAscribe(inner, ty, tok.span.merge(close.span))
            self.expect("sym", ")")
            return inner
        raise CoreSyntaxError(f"unexpected token {tok.text!r}", tok.span)


def parse_core_term(text: str) -> SrcTerm:
    """Parse the surface syntax of a single term."""
    parser = _Parser(text)
    out = parser.term()
    tok = parser.peek()
    if tok.kind != "eof":
        raise CoreSyntaxError(f"unexpected trailing input {tok.text!r}", tok.span)
    return out


def parse_type_and_value(text: str) -> tuple[SrcTerm, Optional[SrcTerm]]:
    """Parse ``T`` or ``T := e`` (the tail of an environment declaration)."""
    parser = _Parser(text)
    ty = parser.term()
    value = None
    if parser.at_sym(":="):
        parser.next()
        value = parser.term()
    tok = parser.peek()
    if tok.kind != "eof":
        raise CoreSyntaxError(f"unexpected trailing input {tok.text!r}", tok.span)
    return ty, value


# ---------------------------------------------------------------------------
# printing

_PREC_BOTTOM = 0  # fun / Π / let
_PREC_ARROW = 1
_PREC_APP = 2
_PREC_ATOM = 3


def _mentions_bvar(t: Term, idx: int) -> bool:
    match t:
        case BVar(i):
            return i == idx
        case App(f, a):
            return _mentions_bvar(f, idx) or _mentions_bvar(a, idx)
        case Lam(_, ty, b) | Pi(_, ty, b):
            return _mentions_bvar(ty, idx) or _mentions_bvar(b, idx + 1)
        case Let(_, ty, v, b):
            return _mentions_bvar(ty, idx) or _mentions_bvar(v, idx) or _mentions_bvar(b, idx + 1)
        case _:
            return False


def print_term(t: Term, ctx: LocalContext | None = None) -> str:
    """Render a term in the surface syntax; output re-parses to an
    alpha-equivalent term when the input contains no metavariables."""
    names: dict[int, str] = {}
    if ctx is not None:
        names = {e.fvar_id: e.name for e in ctx}
    return _Printer(names).go(t, _PREC_BOTTOM, [])


class _Printer:
    def __init__(self, fvar_names: dict[int, str]):
        self.fvar_names = fvar_names

    def _pick(self, base: str, stack: list[str]) -> str:
        used = set(stack) | set(self.fvar_names.values())
        if base not in used:
            return base
        n = 1
        while f"{base}'{n}" in used:
            n += 1
        return f"{base}'{n}"

    def go(self, t: Term, prec: int, stack: list[str]) -> str:
        match t:
            case Sort(level):
                return level.value
            case Const(name):
                return name
            case NatLit(value):
                return str(value)
            case BVar(i):
                return stack[-1 - i] if i < len(stack) else f"#{i}"
            case FVar(f):
                return self.fvar_names.get(f, f"_fv{f}")
            case MVar(m):
                return f"?m{m}"
            case App():
                head, args = app_spine(t)
                parts = [self.go(head, _PREC_ATOM, stack)]
                parts += [self.go(a, _PREC_ATOM, stack) for a in args]
                return self._wrap(" ".join(parts), prec, _PREC_APP)
            case Lam(name, ty, body):
                name = self._pick(name or "x", stack)
                s = f"fun {name} : {self.go(ty, _PREC_ARROW, stack)} => " + self.go(
                    body, _PREC_BOTTOM, stack + [name]
                )
                return self._wrap(s, prec, _PREC_BOTTOM)
            case Pi(name, ty, body, implicit):
                if not implicit and not _mentions_bvar(body, 0):
                    s = (
                        self.go(ty, _PREC_APP, stack)
                        + " -> "
                        + self.go(body, _PREC_ARROW, stack + ["_"])
                    )
                    return self._wrap(s, prec, _PREC_ARROW)
                name = self._pick(name or "x", stack)
                binder = f"{{{name} : {self.go(ty, _PREC_BOTTOM, stack)}}}" if implicit else f"{name} : {self.go(ty, _PREC_BOTTOM, stack)}"
                s = f"Π {binder}, " + self.go(body, _PREC_BOTTOM, stack + [name])
                return self._wrap(s, prec, _PREC_BOTTOM)
            case Let(name, ty, value, body):
                name = self._pick(name or "x", stack)
                s = (
                    f"let {name} : {self.go(ty, _PREC_ARROW, stack)}"
                    f" := {self.go(value, _PREC_BOTTOM, stack)}; "
                    + self.go(body, _PREC_BOTTOM, stack + [name])
                )
                return self._wrap(s, prec, _PREC_BOTTOM)
            case _:
                return repr(t)

    @staticmethod
    def _wrap(s: str, prec: int, level: int) -> str:
        return f"({s})" if prec > level else s
