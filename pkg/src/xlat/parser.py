"""Runtime parser generated from a compiled rule set.

A Pratt parser over a single syntax category: rules starting with a
terminal dispatch as leading items, rules starting with a nonterminal (or a
name capture) extend an already-parsed left-hand side and are gated by the
binding powers computed at rule-compile time.  Numerals and identifiers are
built-in categories at maximum precedence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .errors import LexError, ParseError, Span, TrailingInput
from .rules import CompiledRule, CompiledRuleSet, NameCapture, Nonterminal, Terminal

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_NUM_RE = re.compile(r"[0-9]+")


@dataclass(frozen=True)
class CSTNode:
    rule_index: int
    children: tuple["CST", ...]
    span: Span


@dataclass(frozen=True)
class CSTNumeral:
    value: int
    span: Span


@dataclass(frozen=True)
class CSTIdent:
    name: str
    span: Span


CST = Union[CSTNode, CSTNumeral, CSTIdent]


def same_shape(a: CST, b: CST) -> bool:
    """Structural equality ignoring source spans."""
    match a, b:
        case CSTNode(i, kids_a, _), CSTNode(j, kids_b, _):
            return (
                i == j
                and len(kids_a) == len(kids_b)
                and all(same_shape(x, y) for x, y in zip(kids_a, kids_b))
            )
        case CSTNumeral(v, _), CSTNumeral(w, _):
            return v == w
        case CSTIdent(n, _), CSTIdent(m, _):
            return n == m
        case _:
            return False


def cst_to_sexpr(cst: CST) -> str:
    match cst:
        case CSTNode(i, children, _):
            inner = " ".join(cst_to_sexpr(c) for c in children)
            return f"(r{i} {inner})" if inner else f"(r{i})"
        case CSTNumeral(v, _):
            return str(v)
        case CSTIdent(n, _):
            return n


# ---------------------------------------------------------------------------
# tokens


@dataclass(frozen=True)
class Token:
    kind: str  # "term" | "num" | "ident" | "error" | "eof"
    text: str
    span: Span


class ParserTable:
    def __init__(self, ruleset: CompiledRuleSet):
        self.ruleset = ruleset
        self.leading: dict[str, list[CompiledRule]] = {}
        self.trailing: dict[str, list[CompiledRule]] = {}
        terminals: set[str] = set()
        for rule in ruleset.rules:
            for sym in rule.symbols:
                if isinstance(sym, Terminal):
                    terminals.add(sym.text)
            if rule.is_trailing:
                self.trailing.setdefault(rule.symbols[1].text, []).append(rule)
            else:
                self.leading.setdefault(rule.symbols[0].text, []).append(rule)
        for group in self.leading.values():
            group.sort(key=lambda r: (-_terminal_prefix_len(r), r.index))
        for group in self.trailing.values():
            group.sort(key=lambda r: (-_terminal_prefix_len(r), r.index))
        # longest match first
        self.terminals = sorted(terminals, key=len, reverse=True)
        self.max_binding_power = max((r.lbp for r in ruleset.rules), default=0)


def _terminal_prefix_len(rule: CompiledRule) -> int:
    n = 0
    start = 0 if isinstance(rule.symbols[0], Terminal) else 1
    for sym in rule.symbols[start:]:
        if not isinstance(sym, Terminal):
            break
        n += 1
    return n


def build_table(ruleset: CompiledRuleSet) -> ParserTable:
    cached = getattr(ruleset, "_table", None)
    if cached is None:
        cached = ParserTable(ruleset)
        ruleset._table = cached  # type: ignore[attr-defined]
    return cached


def tokenize(text: str, table: ParserTable) -> list[Token]:
    """Longest-match tokenization against the table's terminal texts plus
    numeral and identifier categories.  Identifiers that collide with a
    terminal lex as that terminal."""
    toks: list[Token] = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        term_hit = ""
        for t in table.terminals:
            if text.startswith(t, pos):
                term_hit = t
                break
        cat_hit = ""
        kind = ""
        m = _NUM_RE.match(text, pos)
        if m:
            cat_hit, kind = m.group(), "num"
        else:
            m = _IDENT_RE.match(text, pos)
            if m:
                cat_hit, kind = m.group(), "ident"
        if term_hit and len(term_hit) >= len(cat_hit):
            toks.append(Token("term", term_hit, Span(pos, pos + len(term_hit))))
            pos += len(term_hit)
        elif cat_hit:
            toks.append(Token(kind, cat_hit, Span(pos, pos + len(cat_hit))))
            pos += len(cat_hit)
        else:
            toks.append(Token("error", text[pos], Span(pos, pos + 1)))
            pos += 1
    toks.append(Token("eof", "", Span(n, n)))
    return toks


# ---------------------------------------------------------------------------
# Pratt parsing


class _Fail(Exception):
    def __init__(self, err: ParseError):
        self.err = err


class _Parser:
    def __init__(self, toks: list[Token], table: ParserTable):
        self.toks = toks
        self.table = table
        self.i = 0

    def peek(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expr(self, min_bp: int) -> CST:
        node = self._leading()
        while True:
            tok = self.peek()
            if tok.kind != "term":
                break
            cands = [r for r in self.table.trailing.get(tok.text, []) if r.lbp >= min_bp]
            if not cands:
                break
            extended = self._try_trailing(node, cands)
            if extended is None:
                break  # an enclosing rule may consume this token as a delimiter
            node = extended
        return node

    def _leading(self) -> CST:
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return CSTNumeral(int(tok.text), tok.span)
        if tok.kind == "ident":
            self.advance()
            return CSTIdent(tok.text, tok.span)
        if tok.kind == "term":
            cands = self.table.leading.get(tok.text, [])
            if cands:
                return self._try_leading(cands)
        raise ParseError(
            f"expected {self._expected_here()}, found {tok.text!r}"
            if tok.kind != "eof"
            else f"unexpected end of input; expected {self._expected_here()}",
            tok.span,
            expected=tuple(sorted(self.table.leading)) + ("numeral", "identifier"),
        )

    def _expected_here(self) -> str:
        options = [f"'{t}'" for t in sorted(self.table.leading)] + ["a numeral", "an identifier"]
        return "one of " + ", ".join(options)

    def _try_leading(self, cands: list[CompiledRule]) -> CST:
        start = self.i
        best: ParseError | None = None
        best_pos = -1
        for rule in cands:
            try:
                return self._rule_tail(rule, lhs=None, start_pos=start)
            except _Fail as f:
                if self.i > best_pos:
                    best, best_pos = f.err, self.i
                self.i = start
        assert best is not None
        raise best

    def _try_trailing(self, lhs: CST, cands: list[CompiledRule]) -> CST | None:
        start = self.i
        for rule in cands:
            try:
                return self._rule_tail(rule, lhs=lhs, start_pos=start)
            except _Fail:
                self.i = start
        return None

    def _rule_tail(self, rule: CompiledRule, lhs: CST | None, start_pos: int) -> CST:
        children: list[CST] = []
        child_i = 0
        syms = rule.symbols
        sym_start = 0
        span_start = self.toks[start_pos].span.start
        if lhs is not None:
            first = syms[0]
            if isinstance(first, NameCapture):
                if not isinstance(lhs, CSTIdent):
                    raise _Fail(
                        ParseError(
                            f"rule `{rule.label}` needs an identifier here", lhs.span
                        )
                    )
            children.append(lhs)
            child_i = 1
            sym_start = 1
            span_start = lhs.span.start
        for sym in syms[sym_start:]:
            tok = self.peek()
            match sym:
                case Terminal(text):
                    if tok.kind != "term" or tok.text != text:
                        raise _Fail(
                            ParseError(f"expected '{text}', found {tok.text!r}", tok.span,
                                       expected=(text,))
                        )
                    self.advance()
                case NameCapture():
                    if tok.kind != "ident":
                        raise _Fail(
                            ParseError(f"expected an identifier, found {tok.text!r}", tok.span)
                        )
                    self.advance()
                    children.append(CSTIdent(tok.text, tok.span))
                    child_i += 1
                case Nonterminal():
                    try:
                        child = self.expr(rule.slot_bps[child_i])
                    except ParseError as err:
                        raise _Fail(err)
                    children.append(child)
                    child_i += 1
        end = self.toks[self.i - 1].span.stop if self.i > 0 else span_start
        return CSTNode(rule.index, tuple(children), Span(span_start, end))


def parse(text: str, table: ParserTable) -> CST:
    """Parse external text into a concrete syntax tree, consuming all input."""
    toks = tokenize(text, table)
    for tok in toks:
        if tok.kind == "error":
            raise LexError(f"cannot tokenize {tok.text!r}", tok.span)
    parser = _Parser(toks, table)
    cst = parser.expr(0)
    tok = parser.peek()
    if tok.kind != "eof":
        raise TrailingInput(f"unexpected trailing input starting at {tok.text!r}", tok.span)
    return cst
