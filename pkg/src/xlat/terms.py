"""Term calculus: AST, local contexts, environments and pure term traversals.

Terms use a locally nameless representation: bound variables are de Bruijn
indices (``BVar``), and every operation that walks under a binder first
opens it with a fresh free variable (``FVar``).  Binder display names are
kept for printing only and never affect equality.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional, Union

from .errors import UnscopedVar


class Level(Enum):
    PROP = "Prop"
    TYPE = "Type"


@dataclass(frozen=True)
class Sort:
    level: Level


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class App:
    fn: "Term"
    arg: "Term"


@dataclass(frozen=True)
class Lam:
    binder_name: str = field(compare=False)
    binder_type: "Term"
    body: "Term"


@dataclass(frozen=True)
class Pi:
    binder_name: str = field(compare=False)
    binder_type: "Term"
    body: "Term"
    implicit: bool = False


@dataclass(frozen=True)
class Let:
    binder_name: str = field(compare=False)
    binder_type: "Term"
    value: "Term"
    body: "Term"


@dataclass(frozen=True)
class BVar:
    index: int


@dataclass(frozen=True)
class FVar:
    id: int


@dataclass(frozen=True)
class MVar:
    id: int


@dataclass(frozen=True)
class NatLit:
    value: int


Term = Union[Sort, Const, App, Lam, Pi, Let, BVar, FVar, MVar, NatLit]

PROP = Sort(Level.PROP)
TYPE = Sort(Level.TYPE)

_ids = itertools.count(1)


def fresh_id() -> int:
    """Globally unique id for free variables and metavariables."""
    return next(_ids)


# ---------------------------------------------------------------------------
# local contexts and environments


@dataclass(frozen=True)
class ContextEntry:
    fvar_id: int
    name: str
    type: Term
    value: Optional[Term] = None  # present for let-bound entries


class LocalContext:
    """Ordered free-variable declarations; entry types may only mention
    earlier entries.  Immutable: ``extend`` returns a new context."""

    def __init__(self, entries: tuple[ContextEntry, ...] = ()):
        self.entries = entries
        self._by_id = {e.fvar_id: e for e in entries}
        if len(self._by_id) != len(entries):
            raise ValueError("duplicate fvar id in local context")

    def extend(self, entry: ContextEntry) -> "LocalContext":
        return LocalContext(self.entries + (entry,))

    def lookup(self, fvar_id: int) -> ContextEntry:
        entry = self._by_id.get(fvar_id)
        if entry is None:
            raise UnscopedVar(f"free variable #{fvar_id} is not in scope")
        return entry

    def __contains__(self, fvar_id: int) -> bool:
        return fvar_id in self._by_id

    def __iter__(self) -> Iterator[ContextEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LocalContext) and self.entries == other.entries

    def __repr__(self) -> str:
        names = ", ".join(f"{e.name}#{e.fvar_id}" for e in self.entries)
        return f"LocalContext({names})"


EMPTY_CTX = LocalContext()


@dataclass(frozen=True)
class Decl:
    name: str
    type: Term
    definition: Optional[Term] = None
    reducible: bool = False


class Environment:
    """Named constant declarations.  Immutable after construction."""

    def __init__(self, decls: dict[str, Decl] | None = None):
        self.decls: dict[str, Decl] = dict(decls or {})

    def lookup(self, name: str) -> Optional[Decl]:
        return self.decls.get(name)

    def add(self, decl: Decl) -> "Environment":
        merged = dict(self.decls)
        merged[decl.name] = decl
        return Environment(merged)

    def __contains__(self, name: str) -> bool:
        return name in self.decls

    def names(self) -> list[str]:
        return list(self.decls)


# ---------------------------------------------------------------------------
# spines


def app_spine(t: Term) -> tuple[Term, list[Term]]:
    """Split ``f a b c`` into ``(f, [a, b, c])``."""
    args: list[Term] = []
    while isinstance(t, App):
        args.append(t.arg)
        t = t.fn
    args.reverse()
    return t, args


def mk_app(fn: Term, *args: Term) -> Term:
    for a in args:
        fn = App(fn, a)
    return fn


# ---------------------------------------------------------------------------
# de Bruijn manipulation


def lift_loose_bvars(t: Term, amount: int, cutoff: int = 0) -> Term:
    if amount == 0:
        return t
    match t:
        case BVar(i):
            return BVar(i + amount) if i >= cutoff else t
        case App(f, a):
            return App(lift_loose_bvars(f, amount, cutoff), lift_loose_bvars(a, amount, cutoff))
        case Lam(n, ty, b):
            return Lam(n, lift_loose_bvars(ty, amount, cutoff), lift_loose_bvars(b, amount, cutoff + 1))
        case Pi(n, ty, b, imp):
            return Pi(n, lift_loose_bvars(ty, amount, cutoff), lift_loose_bvars(b, amount, cutoff + 1), imp)
        case Let(n, ty, v, b):
            return Let(
                n,
                lift_loose_bvars(ty, amount, cutoff),
                lift_loose_bvars(v, amount, cutoff),
                lift_loose_bvars(b, amount, cutoff + 1),
            )
        case _:
            return t


def instantiate_bvar(t: Term, value: Term, depth: int = 0) -> Term:
    """Substitute ``value`` for the loose ``BVar(depth)`` in ``t``.

    Indices above ``depth`` shift down by one, so this both opens binders
    (``value`` an ``FVar``) and performs beta/zeta substitution.
    """
    match t:
        case BVar(i):
            if i == depth:
                return lift_loose_bvars(value, depth)
            return BVar(i - 1) if i > depth else t
        case App(f, a):
            return App(instantiate_bvar(f, value, depth), instantiate_bvar(a, value, depth))
        case Lam(n, ty, b):
            return Lam(n, instantiate_bvar(ty, value, depth), instantiate_bvar(b, value, depth + 1))
        case Pi(n, ty, b, imp):
            return Pi(n, instantiate_bvar(ty, value, depth), instantiate_bvar(b, value, depth + 1), imp)
        case Let(n, ty, v, b):
            return Let(
                n,
                instantiate_bvar(ty, value, depth),
                instantiate_bvar(v, value, depth),
                instantiate_bvar(b, value, depth + 1),
            )
        case _:
            return t


def abstract_fvars(t: Term, fvar_ids: list[int], depth: int = 0) -> Term:
    """Turn occurrences of the given fvars into loose bvars.

    ``fvar_ids`` are outermost-first: at traversal depth ``d`` the i-th fvar
    maps to ``BVar(d + len(fvar_ids) - 1 - i)``, ready to be wrapped in
    binders in the same order.
    """
    n = len(fvar_ids)
    if n == 0:
        return t
    match t:
        case FVar(f):
            if f in fvar_ids:
                return BVar(depth + n - 1 - fvar_ids.index(f))
            return t
        case BVar(i):
            return BVar(i + n) if i >= depth else t
        case App(f, a):
            return App(abstract_fvars(f, fvar_ids, depth), abstract_fvars(a, fvar_ids, depth))
        case Lam(nm, ty, b):
            return Lam(nm, abstract_fvars(ty, fvar_ids, depth), abstract_fvars(b, fvar_ids, depth + 1))
        case Pi(nm, ty, b, imp):
            return Pi(nm, abstract_fvars(ty, fvar_ids, depth), abstract_fvars(b, fvar_ids, depth + 1), imp)
        case Let(nm, ty, v, b):
            return Let(
                nm,
                abstract_fvars(ty, fvar_ids, depth),
                abstract_fvars(v, fvar_ids, depth),
                abstract_fvars(b, fvar_ids, depth + 1),
            )
        case _:
            return t


def abstract_fvar(t: Term, fvar_id: int) -> Term:
    """Single-binder form of :func:`abstract_fvars`."""
    return abstract_fvars(t, [fvar_id])


# ---------------------------------------------------------------------------
# queries


def _subterms(t: Term) -> Iterator[Term]:
    stack = [t]
    while stack:
        s = stack.pop()
        yield s
        match s:
            case App(f, a):
                stack += [f, a]
            case Lam(_, ty, b) | Pi(_, ty, b):
                stack += [ty, b]
            case Let(_, ty, v, b):
                stack += [ty, v, b]
            case _:
                pass


def collect_mvars(t: Term) -> list[int]:
    seen: list[int] = []
    for s in _subterms(t):
        if isinstance(s, MVar) and s.id not in seen:
            seen.append(s.id)
    return seen


def collect_fvars(t: Term) -> set[int]:
    return {s.id for s in _subterms(t) if isinstance(s, FVar)}


def has_fvar(t: Term, fvar_id: int) -> bool:
    return any(isinstance(s, FVar) and s.id == fvar_id for s in _subterms(t))


def has_mvar(t: Term) -> bool:
    return any(isinstance(s, MVar) for s in _subterms(t))


def has_loose_bvar(t: Term, depth: int = 0) -> bool:
    match t:
        case BVar(i):
            return i >= depth
        case App(f, a):
            return has_loose_bvar(f, depth) or has_loose_bvar(a, depth)
        case Lam(_, ty, b) | Pi(_, ty, b):
            return has_loose_bvar(ty, depth) or has_loose_bvar(b, depth + 1)
        case Let(_, ty, v, b):
            return (
                has_loose_bvar(ty, depth)
                or has_loose_bvar(v, depth)
                or has_loose_bvar(b, depth + 1)
            )
        case _:
            return False


def is_well_scoped(t: Term, ctx: LocalContext) -> bool:
    """No loose bvars and every fvar declared in ``ctx``."""
    if has_loose_bvar(t):
        return False
    return all(f in ctx for f in collect_fvars(t))


# ---------------------------------------------------------------------------
# substitutions and rewrites


def subst_mvars(t: Term, mapping: dict[int, Term]) -> Term:
    """Replace metavariable nodes by terms; mvars are atomic so this never
    captures."""
    if not mapping:
        return t
    match t:
        case MVar(m):
            return mapping.get(m, t)
        case App(f, a):
            return App(subst_mvars(f, mapping), subst_mvars(a, mapping))
        case Lam(n, ty, b):
            return Lam(n, subst_mvars(ty, mapping), subst_mvars(b, mapping))
        case Pi(n, ty, b, imp):
            return Pi(n, subst_mvars(ty, mapping), subst_mvars(b, mapping), imp)
        case Let(n, ty, v, b):
            return Let(n, subst_mvars(ty, mapping), subst_mvars(v, mapping), subst_mvars(b, mapping))
        case _:
            return t


def replace_fvars(t: Term, mapping: dict[int, Term]) -> Term:
    if not mapping:
        return t
    match t:
        case FVar(f):
            return mapping.get(f, t)
        case App(f, a):
            return App(replace_fvars(f, mapping), replace_fvars(a, mapping))
        case Lam(n, ty, b):
            return Lam(n, replace_fvars(ty, mapping), replace_fvars(b, mapping))
        case Pi(n, ty, b, imp):
            return Pi(n, replace_fvars(ty, mapping), replace_fvars(b, mapping), imp)
        case Let(n, ty, v, b):
            return Let(n, replace_fvars(ty, mapping), replace_fvars(v, mapping), replace_fvars(b, mapping))
        case _:
            return t


def beta_spine(t: Term) -> Term:
    """Contract leading beta redexes: ``(fun x => b) a ...`` -> ``b[a] ...``."""
    head, args = app_spine(t)
    i = 0
    while isinstance(head, Lam) and i < len(args):
        head = instantiate_bvar(head.body, args[i])
        i += 1
        inner_head, inner_args = app_spine(head)
        head = inner_head
        args[i:i] = inner_args
    return mk_app(head, *args[i:])


def beta_reduce(t: Term) -> Term:
    """One bottom-up pass contracting every beta redex encountered."""
    match t:
        case App():
            head, args = app_spine(t)
        case _:
            head, args = t, []
    head = _beta_reduce_head(head)
    args = [beta_reduce(a) for a in args]
    out = mk_app(head, *args)
    reduced = beta_spine(out)
    if reduced is not out:
        return beta_reduce(reduced)
    return out


def _beta_reduce_head(t: Term) -> Term:
    match t:
        case Lam(n, ty, b):
            return Lam(n, beta_reduce(ty), beta_reduce(b))
        case Pi(n, ty, b, imp):
            return Pi(n, beta_reduce(ty), beta_reduce(b), imp)
        case Let(n, ty, v, b):
            return Let(n, beta_reduce(ty), beta_reduce(v), beta_reduce(b))
        case _:
            return t


def rename_binders(t: Term, prefix: str = "v") -> Term:
    """Give every binder a fresh sequential display name (printing aid)."""
    counter = itertools.count()

    def go(s: Term) -> Term:
        match s:
            case Lam(_, ty, b):
                return Lam(f"{prefix}{next(counter)}", go(ty), go(b))
            case Pi(_, ty, b, imp):
                return Pi(f"{prefix}{next(counter)}", go(ty), go(b), imp)
            case Let(_, ty, v, b):
                return Let(f"{prefix}{next(counter)}", go(ty), go(v), go(b))
            case App(f, a):
                return App(go(f), go(a))
            case _:
                return s

    return go(t)


def with_binder_name(t: Term, name: str) -> Term:
    """Rename the outermost binder of ``t``."""
    match t:
        case Lam() | Pi() | Let():
            return replace(t, binder_name=name)
        case _:
            return t
