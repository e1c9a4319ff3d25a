"""Rule files: parsing `external NAME where ...` blocks and compiling the
equivalences into the form both translation directions consume.

Compilation partially elaborates every rule's term side against the
environment, leaving one metavariable per nonterminal plus hidden
metavariables for implicit arguments, then derives for each rule:

* its usable direction (downgrading `<==>` when the nonterminal sets on the
  two sides differ, with a warning),
* a priority class (patterns that are a bare nonterminal after at most one
  head reduction step rank below everything else),
* binding powers for the runtime parser, and
* a "match form" of the pattern in which metavariables occurring under the
  rule's own binders are closed over them, so that matching stays inside
  the Miller fragment of unification.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .coresyntax import parse_core_term, print_term
from .elabcore import CoreElaborator, RuleBinder
from .errors import (
    CoreSyntaxError,
    ElabError,
    PrecedenceConflict,
    RuleSyntaxError,
    XlatError,
)
from .metas import MetaState, StoredMeta, pi_close
from .terms import (
    App,
    BVar,
    Const,
    ContextEntry,
    Environment,
    FVar,
    Lam,
    Let,
    MVar,
    Pi,
    Sort,
    Term,
    app_spine,
    beta_spine,
    collect_mvars,
    instantiate_bvar,
    mk_app,
    subst_mvars,
)
from .typecheck import infer_type, whnf

MAX_BINDING_POWER = 1024
DEFAULT_LEVEL = 100
DEFAULT_NUMERAL_TYPE = "Nat"


# ---------------------------------------------------------------------------
# external pattern symbols


@dataclass(frozen=True)
class Terminal:
    text: str


@dataclass(frozen=True)
class Nonterminal:
    name: str


@dataclass(frozen=True)
class NameCapture:
    name: str


ExtSymbol = Union[Terminal, Nonterminal, NameCapture]


def symbol_text(sym: ExtSymbol) -> str:
    match sym:
        case Terminal(text):
            return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'
        case Nonterminal(name):
            return name
        case NameCapture(name):
            return f"(${name})"


# ---------------------------------------------------------------------------
# raw rule files


@dataclass
class RawRule:
    symbols: tuple[ExtSymbol, ...]
    arrow: str  # "<==>" | "==>" | "<=="
    term_src: str
    precedence: Optional[int]
    right_assoc: bool
    line: int


@dataclass
class RawRuleSet:
    name: str
    rules: list[RawRule] = field(default_factory=list)
    options: dict[str, str] = field(default_factory=dict)
    line: int = 0


_EXTERNAL_RE = re.compile(r"^external\s+([A-Za-z_][A-Za-z0-9_']*)\s+where\s*$")
_OPTION_RE = re.compile(r"^(numberCast)\s*:=\s*([A-Za-z_][A-Za-z0-9_'.]*)\s*$")
_STRING_RE = re.compile(r'"((?:[^"\\]|\\.)*)"')
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_CAPTURE_RE = re.compile(r"\(\$\s*([A-Za-z_][A-Za-z0-9_']*)\s*\)")
_ARROW_RE = re.compile(r"<==>|==>|<==")
_PREC_OPT_RE = re.compile(r"\(\s*precedence\s*:=\s*(-?[0-9]+)\s*\)\s*$")
_RASSOC_OPT_RE = re.compile(r"\+rightAssociative\s*$")


def _strip_comment(line: str) -> str:
    """Cut a ``--`` comment, ignoring dashes inside string literals."""
    i = 0
    in_string = False
    while i < len(line):
        c = line[i]
        if in_string:
            if c == "\\":
                i += 1
            elif c == '"':
                in_string = False
        elif c == '"':
            in_string = True
        elif c == "-" and line.startswith("--", i):
            return line[:i]
        i += 1
    return line


def _unescape(text: str) -> str:
    return text.replace('\\"', '"').replace("\\\\", "\\")


def parse_rule_file(text: str) -> list[RawRuleSet]:
    """Parse a rule file into raw declarations (one per ``external`` block)."""
    rulesets: list[RawRuleSet] = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        m = _EXTERNAL_RE.match(line)
        if m:
            name = m.group(1)
            if any(rs.name == name for rs in rulesets):
                raise RuleSyntaxError(f"line {lineno}: duplicate external block '{name}'")
            rulesets.append(RawRuleSet(name, line=lineno))
            continue
        if not rulesets:
            raise RuleSyntaxError(
                f"line {lineno}: expected 'external <name> where' before rules"
            )
        m = _OPTION_RE.match(line)
        if m:
            rulesets[-1].options[m.group(1)] = m.group(2)
            continue
        rulesets[-1].rules.append(_parse_rule_line(line, lineno))
    if not rulesets:
        raise RuleSyntaxError("empty rule file")
    return rulesets


def _parse_rule_line(line: str, lineno: int) -> RawRule:
    symbols: list[ExtSymbol] = []
    pos = 0
    arrow = None
    while pos < len(line):
        while pos < len(line) and line[pos].isspace():
            pos += 1
        if pos >= len(line):
            break
        m = _ARROW_RE.match(line, pos)
        if m:
            arrow = m.group()
            pos = m.end()
            break
        m = _STRING_RE.match(line, pos)
        if m:
            text = _unescape(m.group(1))
            if not text:
                raise RuleSyntaxError(f"line {lineno}:{pos + 1}: empty terminal string")
            symbols.append(Terminal(text))
            pos = m.end()
            continue
        m = _CAPTURE_RE.match(line, pos)
        if m:
            symbols.append(NameCapture(m.group(1)))
            pos = m.end()
            continue
        m = _IDENT_RE.match(line, pos)
        if m:
            symbols.append(Nonterminal(m.group()))
            pos = m.end()
            continue
        raise RuleSyntaxError(f"line {lineno}:{pos + 1}: unexpected character {line[pos]!r}")
    if arrow is None:
        raise RuleSyntaxError(f"line {lineno}: missing arrow ('<==>', '==>' or '<==')")
    if not symbols:
        raise RuleSyntaxError(f"line {lineno}: rule has no external symbols")

    names = [s.name for s in symbols if isinstance(s, Nonterminal)]
    if len(names) != len(set(names)):
        raise RuleSyntaxError(f"line {lineno}: duplicate nonterminal name in pattern")
    captures = [s.name for s in symbols if isinstance(s, NameCapture)]
    if len(captures) != len(set(captures)) or set(captures) & set(names):
        raise RuleSyntaxError(f"line {lineno}: capture names must be distinct")

    term_src = line[pos:].strip()
    precedence = None
    right_assoc = False
    while True:
        m = _PREC_OPT_RE.search(term_src)
        if m:
            if precedence is not None:
                raise RuleSyntaxError(f"line {lineno}: duplicate precedence option")
            precedence = int(m.group(1))
            term_src = term_src[: m.start()].rstrip()
            continue
        m = _RASSOC_OPT_RE.search(term_src)
        if m:
            right_assoc = True
            term_src = term_src[: m.start()].rstrip()
            continue
        break
    if not term_src:
        raise RuleSyntaxError(f"line {lineno}: missing term side after arrow")
    return RawRule(tuple(symbols), arrow, term_src, precedence, right_assoc, lineno)


# ---------------------------------------------------------------------------
# compiled rules


@dataclass
class CompiledRule:
    index: int
    symbols: tuple[ExtSymbol, ...]
    arrow: str
    direction: str  # "both" | "toTermOnly" | "toExternalOnly"
    pattern: Term  # paper form: bare metas under the rule's own binders
    pattern_type: Term
    stored: tuple[StoredMeta, ...]  # transport descriptors, creation order
    match_pattern: Term  # metas closed over rule binders, applied to bvars
    match_type: Term
    match_stored: tuple[StoredMeta, ...]
    binders: tuple[RuleBinder, ...]  # introduction order
    capture_binder: dict[str, int]  # capture name -> binder fvar id
    under: dict[int, tuple[int, ...]]  # stored meta id -> binder fvar ids over it
    nt_order: tuple[str, ...]  # external nonterminal order
    nt_meta: dict[str, int]  # nonterminal name -> stored meta id
    priority: str  # "normal" | "low"
    level: int
    explicit_level: bool
    right_assoc: bool
    line: int
    missing_nonterminals: tuple[str, ...] = ()  # set when a <==> was downgraded
    slot_bps: tuple[int, ...] = ()  # min binding power per child slot
    lbp: int = 0  # dispatch power for trailing rules

    @property
    def is_trailing(self) -> bool:
        return not isinstance(self.symbols[0], Terminal)

    @property
    def child_symbols(self) -> tuple[ExtSymbol, ...]:
        return tuple(s for s in self.symbols if not isinstance(s, Terminal))

    @property
    def label(self) -> str:
        return " ".join(symbol_text(s) for s in self.symbols)

    def allows_to_external(self) -> bool:
        return self.direction in ("both", "toExternalOnly")

    def allows_from_external(self) -> bool:
        return self.direction in ("both", "toTermOnly")


@dataclass
class CompiledRuleSet:
    name: str
    rules: tuple[CompiledRule, ...]
    numeral_default: str
    env: Environment
    warnings: tuple[str, ...]
    grouping_rule: Optional[int]  # index of the bracket rule used by render

    def describe(self) -> str:
        """Canonical serialization: ids renumbered by first occurrence, so
        recompiling the same source yields byte-identical output."""
        out = [f"external {self.name} (numberCast := {self.numeral_default})"]
        for rule in self.rules:
            renum = {sm.id: MVar(i) for i, sm in enumerate(rule.stored)}
            pat = subst_mvars(rule.pattern, renum)
            ty = subst_mvars(rule.pattern_type, renum)
            metas = ", ".join(
                f"?{i}{'=' + sm.name if sm.name else ''} : {print_term(subst_mvars(sm.type, renum))}"
                for i, sm in enumerate(rule.stored)
            )
            assoc = "right" if rule.right_assoc else "left"
            out.append(
                f"rule {rule.index}: {rule.label} [{rule.direction}] "
                f"level={rule.level} assoc={assoc} priority={rule.priority}"
            )
            out.append(f"  pattern: {print_term(pat)} : {print_term(ty)}")
            out.append(f"  metas: [{metas}]")
        for w in self.warnings:
            out.append(f"warning: {w}")
        return "\n".join(out) + "\n"


def compile_rule_file(text: str, env: Environment, name: str | None = None) -> CompiledRuleSet:
    """Parse and compile one ``external`` block from a rule file."""
    rulesets = parse_rule_file(text)
    if name is None:
        if len(rulesets) > 1:
            names = ", ".join(rs.name for rs in rulesets)
            raise ElabError(f"file defines several externals ({names}); pick one")
        raw = rulesets[0]
    else:
        matches = [rs for rs in rulesets if rs.name == name]
        if not matches:
            raise ElabError(f"no external named '{name}' in rule file")
        raw = matches[0]
    return compile_rules(raw, env)


def compile_rules(raw: RawRuleSet, env: Environment) -> CompiledRuleSet:
    numeral_default = raw.options.get("numberCast", DEFAULT_NUMERAL_TYPE)
    decl = env.lookup(numeral_default)
    if decl is None:
        raise ElabError(f"numberCast target '{numeral_default}' is not declared")

    warnings: list[str] = []
    rules: list[CompiledRule] = []
    for index, rr in enumerate(raw.rules):
        rules.append(_compile_rule(index, rr, env, warnings))
    _infer_precedences(rules)

    grouping = None
    for rule in rules:
        if rule.priority != "low" or not rule.allows_to_external():
            continue
        ok_shape = (
            len(rule.symbols) == 3
            and isinstance(rule.symbols[0], Terminal)
            and isinstance(rule.symbols[1], Nonterminal)
            and isinstance(rule.symbols[2], Terminal)
        )
        if ok_shape and isinstance(rule.pattern, MVar):
            grouping = rule.index
            break

    return CompiledRuleSet(
        raw.name, tuple(rules), numeral_default, env, tuple(warnings), grouping
    )


def _compile_rule(
    index: int, rr: RawRule, env: Environment, warnings: list[str]
) -> CompiledRule:
    ext_nts = tuple(s.name for s in rr.symbols if isinstance(s, Nonterminal))
    captures = tuple(s.name for s in rr.symbols if isinstance(s, NameCapture))
    label = " ".join(symbol_text(s) for s in rr.symbols)

    metas = MetaState()
    elab = CoreElaborator(
        env,
        metas,
        nonterminals=frozenset(ext_nts),
        allow_new_nonterminals=rr.arrow != "==>",
    )
    try:
        src = parse_core_term(rr.term_src)
        pattern = elab.elab(src)
        pattern_type = infer_type(pattern, elab.ctx, env, metas)
    except XlatError as exc:
        raise ElabError(f"line {rr.line}: rule `{label}`: {exc.message}") from exc

    pattern = metas.instantiate(pattern)
    pattern_type = metas.instantiate(pattern_type)

    term_nts = set(elab.nonterminal_mvars)
    for name, mid in elab.nonterminal_mvars.items():
        if metas.is_assigned(mid):
            raise ElabError(
                f"line {rr.line}: rule `{label}`: nonterminal '{name}' was forced to a"
                " fixed term during elaboration"
            )

    direction, missing = _direction_of(rr.arrow, set(ext_nts), term_nts, rr.line, label)
    if missing:
        warnings.append(
            f"line {rr.line}: rule `{label}` is irreversible: nonterminal(s) "
            f"{', '.join(sorted(missing))} appear on one side only; "
            f"usable direction: {direction}"
        )

    # capture names must name binders introduced on the term side
    capture_binder: dict[str, int] = {}
    for cap in captures:
        hits = [b.fvar_id for b in elab.binders if b.name == cap]
        if not hits:
            raise ElabError(
                f"line {rr.line}: rule `{label}`: capture (${cap}) does not name a"
                " binder on the term side"
            )
        if len(hits) > 1:
            raise ElabError(
                f"line {rr.line}: rule `{label}`: capture (${cap}) names several binders"
            )
        capture_binder[cap] = hits[0]

    stored, under = _stored_descriptors(elab, metas, pattern, pattern_type)
    binders = tuple(
        RuleBinder(
            b.fvar_id,
            b.name,
            metas.instantiate(b.type),
            metas.instantiate(b.value) if b.value is not None else None,
            b.is_let,
        )
        for b in elab.binders
    )

    nt_meta = {
        sm.name: sm.id for sm in stored if sm.kind == "nonterminal" and sm.name is not None
    }
    for name in ext_nts:
        if direction in ("both", "toExternalOnly") and name not in nt_meta:
            # unreachable given _direction_of, but keep the invariant explicit
            raise ElabError(
                f"line {rr.line}: rule `{label}`: nonterminal '{name}' has no term-side meta"
            )

    match_pattern, match_type, match_stored = _match_form(
        pattern, pattern_type, stored, under, binders
    )

    priority = "low" if _is_identity_like(pattern, set(nt_meta.values()), env, metas) else "normal"

    return CompiledRule(
        index=index,
        symbols=rr.symbols,
        arrow=rr.arrow,
        direction=direction,
        pattern=pattern,
        pattern_type=pattern_type,
        stored=stored,
        match_pattern=match_pattern,
        match_type=match_type,
        match_stored=match_stored,
        binders=binders,
        capture_binder=capture_binder,
        under=under,
        nt_order=ext_nts,
        nt_meta=nt_meta,
        priority=priority,
        level=rr.precedence if rr.precedence is not None else DEFAULT_LEVEL,
        explicit_level=rr.precedence is not None,
        right_assoc=rr.right_assoc,
        line=rr.line,
        missing_nonterminals=tuple(sorted(missing)),
    )


def _direction_of(
    arrow: str, ext: set[str], term: set[str], line: int, label: str
) -> tuple[str, set[str]]:
    if arrow == "==>":
        extra = term - ext
        if extra:
            raise ElabError(
                f"line {line}: rule `{label}`: term-side nonterminal(s)"
                f" {', '.join(sorted(extra))} cannot be filled when parsing"
            )
        return "toTermOnly", set()
    if arrow == "<==":
        extra = ext - term
        if extra:
            raise ElabError(
                f"line {line}: rule `{label}`: external nonterminal(s)"
                f" {', '.join(sorted(extra))} have no term-side counterpart to render"
            )
        return "toExternalOnly", set()
    # <==>
    if ext == term:
        return "both", set()
    if term < ext:
        return "toTermOnly", ext - term
    if ext < term:
        return "toExternalOnly", term - ext
    raise ElabError(
        f"line {line}: rule `{label}`: nonterminal sets differ on both sides"
        f" ({', '.join(sorted(ext ^ term))}); the rule is unusable in either direction"
    )


def _stored_descriptors(
    elab: CoreElaborator, metas: MetaState, pattern: Term, pattern_type: Term
) -> tuple[tuple[StoredMeta, ...], dict[int, tuple[int, ...]]]:
    binder_by_id = {b.fvar_id: b for b in elab.binders}
    candidates = []
    under: dict[int, tuple[int, ...]] = {}
    for info in elab.metas_created:
        if metas.is_assigned(info.id):
            continue
        entries = tuple(
            ContextEntry(
                fid,
                binder_by_id[fid].name,
                metas.instantiate(binder_by_id[fid].type),
                metas.instantiate(binder_by_id[fid].value)
                if binder_by_id[fid].value is not None
                else None,
            )
            for fid in info.under
        )
        candidates.append(
            StoredMeta(info.id, entries, metas.instantiate(metas.decl(info.id).type), info.name, info.kind)
        )
        under[info.id] = info.under

    # prune metas unreachable from the pattern, its type, or other kept metas
    by_id = {sm.id: sm for sm in candidates}
    reachable: set[int] = set()
    frontier = [m for m in collect_mvars(pattern) + collect_mvars(pattern_type) if m in by_id]
    while frontier:
        mid = frontier.pop()
        if mid in reachable:
            continue
        reachable.add(mid)
        sm = by_id[mid]
        refs = collect_mvars(sm.type)
        for entry in sm.ctx_entries:
            refs += collect_mvars(entry.type)
            if entry.value is not None:
                refs += collect_mvars(entry.value)
        frontier += [m for m in refs if m in by_id]
    stored = tuple(sm for sm in candidates if sm.id in reachable)
    under = {mid: u for mid, u in under.items() if mid in reachable}
    return stored, under


def _match_form(
    pattern: Term,
    pattern_type: Term,
    stored: tuple[StoredMeta, ...],
    under: dict[int, tuple[int, ...]],
    binders: tuple[RuleBinder, ...],
) -> tuple[Term, Term, tuple[StoredMeta, ...]]:
    """Close every stored meta over the rule binders in scope at its
    occurrence; occurrences become the meta applied to those binders."""
    if not binders:
        return pattern, pattern_type, stored

    # occurrence map in fvar space: ?m  ->  ?m f1 ... fk
    occ: dict[int, Term] = {
        sm.id: mk_app(MVar(sm.id), *[FVar(f) for f in under[sm.id]]) for sm in stored
    }

    match_stored = []
    for sm in stored:
        entries = tuple(
            ContextEntry(
                e.fvar_id,
                e.name,
                subst_mvars(e.type, occ),
                subst_mvars(e.value, occ) if e.value is not None else None,
            )
            for e in sm.ctx_entries
        )
        closed_ty = pi_close(entries, subst_mvars(sm.type, occ))
        match_stored.append(StoredMeta(sm.id, (), closed_ty, sm.name, sm.kind))

    seq = [b.fvar_id for b in binders]
    match_pattern = _close_occurrences(pattern, under, seq, [])
    assert not seq, "rule binder bookkeeping out of sync with the pattern"
    match_type = subst_mvars(pattern_type, occ)  # top level: no binders in scope
    return match_pattern, match_type, tuple(match_stored)


def _close_occurrences(
    t: Term, under: dict[int, tuple[int, ...]], seq: list[int], stack: list[int]
) -> Term:
    """Rewrite ``?m`` occurrences to ``?m b1 .. bk`` (bvars of the enclosing
    rule binders).  ``seq`` yields binder fvar ids in elaboration order,
    which matches a traversal that visits binder types and let values before
    bodies."""
    match t:
        case MVar(m) if m in under:
            out: Term = t
            for fid in under[m]:
                pos = stack.index(fid)
                out = App(out, BVar(len(stack) - 1 - pos))
            return out
        case App(f, a):
            return App(
                _close_occurrences(f, under, seq, stack),
                _close_occurrences(a, under, seq, stack),
            )
        case Lam(n, ty, b):
            ty2 = _close_occurrences(ty, under, seq, stack)
            fid = seq.pop(0)
            return Lam(n, ty2, _close_occurrences(b, under, seq, stack + [fid]))
        case Pi(n, ty, b, imp):
            ty2 = _close_occurrences(ty, under, seq, stack)
            fid = seq.pop(0)
            return Pi(n, ty2, _close_occurrences(b, under, seq, stack + [fid]), imp)
        case Let(n, ty, v, b):
            ty2 = _close_occurrences(ty, under, seq, stack)
            v2 = _close_occurrences(v, under, seq, stack)
            fid = seq.pop(0)
            return Let(n, ty2, v2, _close_occurrences(b, under, seq, stack + [fid]))
        case _:
            return t


def _is_identity_like(pattern: Term, nt_ids: set[int], env: Environment, metas: MetaState) -> bool:
    """True when the pattern is a bare nonterminal after at most one head
    reduction step; such rules match anything without making progress."""

    def bare(t: Term) -> bool:
        return isinstance(t, MVar) and t.id in nt_ids

    if bare(pattern):
        return True
    head, args = app_spine(pattern)
    stepped: Term | None = None
    if isinstance(head, Lam) and args:
        stepped = mk_app(instantiate_bvar(head.body, args[0]), *args[1:])
    elif isinstance(head, Let):
        stepped = mk_app(instantiate_bvar(head.body, head.value), *args)
    elif isinstance(head, Const):
        decl = env.lookup(head.name)
        if decl is not None and decl.reducible and decl.definition is not None:
            stepped = beta_spine(mk_app(decl.definition, *args))
    return stepped is not None and bare(stepped)


# ---------------------------------------------------------------------------
# precedence inference


def _infer_precedences(rules: list[CompiledRule]) -> None:
    by_dispatch: dict[str, list[CompiledRule]] = {}
    for rule in rules:
        first = rule.symbols[0]
        if isinstance(first, Terminal):
            _leading_slots(rule)
        else:
            if len(rule.symbols) < 2 or not isinstance(rule.symbols[1], Terminal):
                raise ElabError(
                    f"line {rule.line}: rule `{rule.label}` cannot be dispatched: a rule"
                    " starting with a nonterminal needs a terminal right after it"
                )
            _trailing_slots(rule)
            by_dispatch.setdefault(rule.symbols[1].text, []).append(rule)

    for text, group in by_dispatch.items():
        explicit = {r.level for r in group if r.explicit_level}
        if len(explicit) > 1:
            lines = ", ".join(str(r.line) for r in group if r.explicit_level)
            raise PrecedenceConflict(
                f"rules at lines {lines} give contradictory explicit precedences"
                f" for leading terminal '{text}'"
            )


def _leading_slots(rule: CompiledRule) -> None:
    """Terminal-leading rules: delimited inner slots parse at the lowest
    level; a final (or nonterminal-followed) slot parses at maximum binding
    power, which keeps prefix arguments tight."""
    bps = []
    syms = rule.symbols
    for i, sym in enumerate(syms):
        if isinstance(sym, Terminal):
            continue
        if isinstance(sym, NameCapture):
            bps.append(MAX_BINDING_POWER)  # identifiers are a max-precedence category
            continue
        nxt = syms[i + 1] if i + 1 < len(syms) else None
        bps.append(0 if isinstance(nxt, Terminal) else MAX_BINDING_POWER)
    rule.slot_bps = tuple(bps)
    rule.lbp = MAX_BINDING_POWER


def _trailing_slots(rule: CompiledRule) -> None:
    """Infix/suffix rules: the leading slot binds at the rule level (one
    higher under +rightAssociative); trailing slots at level+1 (level for
    right associativity), giving left associativity by default."""
    level = rule.level
    lead = level + 1 if rule.right_assoc else level
    rest = level if rule.right_assoc else level + 1
    bps = []
    first = True
    for sym in rule.symbols:
        if isinstance(sym, Terminal):
            continue
        if first:
            bps.append(lead)
            first = False
        elif isinstance(sym, NameCapture):
            bps.append(MAX_BINDING_POWER)
        else:
            bps.append(rest)
    rule.slot_bps = tuple(bps)
    rule.lbp = lead
