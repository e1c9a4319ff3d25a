"""Metavariable state: declarations, assignments, transport and lifting.

``MetaState`` is the single mutable object of a translation session.  All
mutations go through a trail so any failed unification attempt can roll the
state back exactly (transactionality).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import OccursCheckError, OutOfScopeFVar, Span
from .terms import (
    App,
    ContextEntry,
    FVar,
    Lam,
    Let,
    LocalContext,
    MVar,
    Pi,
    Term,
    abstract_fvars,
    beta_spine,
    collect_fvars,
    collect_mvars,
    fresh_id,
    subst_mvars,
)


@dataclass(frozen=True)
class MetaDecl:
    ctx: LocalContext
    type: Term
    span: Optional[Span] = None
    kind: str = ""


class MetaState:
    def __init__(self) -> None:
        self.decls: dict[int, MetaDecl] = {}
        self.assignments: dict[int, Term] = {}
        self._trail: list[tuple] = []

    # -- bookkeeping ------------------------------------------------------

    def savepoint(self) -> int:
        return len(self._trail)

    def rollback(self, savepoint: int) -> None:
        while len(self._trail) > savepoint:
            tag, mid, payload = self._trail.pop()
            if tag == "decl":
                del self.decls[mid]
            elif tag == "assign":
                del self.assignments[mid]
            elif tag == "reassign":
                self.assignments[mid] = payload
            elif tag == "ctx":
                self.decls[mid] = payload

    def snapshot(self) -> tuple[dict[int, MetaDecl], dict[int, Term]]:
        """Copies used by tests to check byte-identical restoration."""
        return dict(self.decls), dict(self.assignments)

    # -- declarations -----------------------------------------------------

    def fresh(self, ctx: LocalContext, type: Term, span: Span | None = None, kind: str = "") -> int:
        mid = fresh_id()
        self.decls[mid] = MetaDecl(ctx, type, span, kind)
        self._trail.append(("decl", mid, None))
        return mid

    def decl(self, mid: int) -> MetaDecl:
        return self.decls[mid]

    def extend_ctx(self, mid: int, entry: ContextEntry) -> None:
        """Add ``entry`` to the declared context of an unassigned mvar."""
        old = self.decls[mid]
        self.decls[mid] = MetaDecl(old.ctx.extend(entry), old.type, old.span, old.kind)
        self._trail.append(("ctx", mid, old))

    # -- assignments ------------------------------------------------------

    def is_assigned(self, mid: int) -> bool:
        return mid in self.assignments

    def assignment(self, mid: int) -> Optional[Term]:
        return self.assignments.get(mid)

    def chase(self, mid: int) -> int:
        """Follow bare-mvar assignment chains to their root id."""
        seen = set()
        while mid in self.assignments and mid not in seen:
            seen.add(mid)
            value = self.assignments[mid]
            if isinstance(value, MVar):
                mid = value.id
            else:
                break
        return mid

    def assign(self, mid: int, value: Term) -> None:
        """Record ``?mid := value`` after occurs and scope checks.

        Raises :class:`OccursCheckError` / :class:`OutOfScopeFVar`; the state
        is untouched on failure.
        """
        assert mid in self.decls and mid not in self.assignments
        expanded = self.instantiate(value)
        if mid in collect_mvars(expanded):
            raise OccursCheckError(f"?m{mid} occurs in its own assignment")
        ctx = self.decls[mid].ctx
        for f in collect_fvars(expanded):
            if f not in ctx:
                raise OutOfScopeFVar(
                    f"assignment for ?m{mid} mentions out-of-scope free variable #{f}"
                )
        self.assignments[mid] = value
        self._trail.append(("assign", mid, None))

    def reassign(self, mid: int, value: Term) -> None:
        """Overwrite an assignment during binder-context repair.

        The replacement may contain loose bvars that are interpreted at the
        metavariable's occurrence site, so no scope check applies.
        """
        old = self.assignments[mid]
        self.assignments[mid] = value
        self._trail.append(("reassign", mid, old))

    # -- instantiation ----------------------------------------------------

    def instantiate(self, t: Term) -> Term:
        """Replace assigned mvars recursively, beta-reducing redexes the
        substitution exposes."""
        return instantiate_metas(t, self)


def instantiate_metas(t: Term, metas: MetaState) -> Term:
    match t:
        case MVar(m):
            value = metas.assignments.get(m)
            return instantiate_metas(value, metas) if value is not None else t
        case App():
            out = _instantiate_app(t, metas)
            return out
        case Lam(n, ty, b):
            return Lam(n, instantiate_metas(ty, metas), instantiate_metas(b, metas))
        case Pi(n, ty, b, imp):
            return Pi(n, instantiate_metas(ty, metas), instantiate_metas(b, metas), imp)
        case Let(n, ty, v, b):
            return Let(
                n,
                instantiate_metas(ty, metas),
                instantiate_metas(v, metas),
                instantiate_metas(b, metas),
            )
        case _:
            return t


def _instantiate_app(t: App, metas: MetaState) -> Term:
    fn = instantiate_metas(t.fn, metas)
    arg = instantiate_metas(t.arg, metas)
    if isinstance(fn, Lam):
        # the substitution exposed a redex; contract it and keep going
        return instantiate_metas(beta_spine(App(fn, arg)), metas)
    return App(fn, arg)


# ---------------------------------------------------------------------------
# transport: re-create a pattern's metavariables in a new context


@dataclass(frozen=True)
class StoredMeta:
    """A pattern metavariable as recorded at rule-compile time."""

    id: int
    ctx_entries: tuple[ContextEntry, ...]  # rule-binder entries scoping this meta
    type: Term
    name: Optional[str] = None  # nonterminal name; None for hidden metas
    kind: str = "implicit"


def transport(
    pattern: Term,
    stored: tuple[StoredMeta, ...],
    target_ctx: LocalContext,
    metas: MetaState,
    span: Span | None = None,
) -> tuple[Term, dict[int, int]]:
    """Instantiate ``pattern`` with fresh metavariables.

    Each stored meta becomes a fresh one declared in ``target_ctx`` extended
    with its recorded rule-binder entries; stored metas may reference earlier
    ones in their types, so the substitution is built progressively.
    Returns the refreshed pattern and the old-id -> new-id mapping.
    """
    mapping: dict[int, Term] = {}
    ids: dict[int, int] = {}
    for sm in stored:
        ctx = target_ctx
        for entry in sm.ctx_entries:
            ctx = ctx.extend(
                ContextEntry(
                    entry.fvar_id,
                    entry.name,
                    subst_mvars(entry.type, mapping),
                    subst_mvars(entry.value, mapping) if entry.value is not None else None,
                )
            )
        new_type = subst_mvars(sm.type, mapping)
        new_id = metas.fresh(ctx, new_type, span=span, kind=sm.kind)
        mapping[sm.id] = MVar(new_id)
        ids[sm.id] = new_id
    return subst_mvars(pattern, mapping), ids


# ---------------------------------------------------------------------------
# binder lifting


def pi_close(entries: tuple[ContextEntry, ...], body: Term) -> Term:
    ids = [e.fvar_id for e in entries]
    out = abstract_fvars(body, ids)
    for i in range(len(entries) - 1, -1, -1):
        ty = abstract_fvars(entries[i].type, ids[:i])
        out = Pi(entries[i].name, ty, out)
    return out


def lam_close(entries: tuple[ContextEntry, ...], body: Term) -> Term:
    ids = [e.fvar_id for e in entries]
    out = abstract_fvars(body, ids)
    for i in range(len(entries) - 1, -1, -1):
        ty = abstract_fvars(entries[i].type, ids[:i])
        out = Lam(entries[i].name, ty, out)
    return out


def lift_over_binders(mid: int, bound: tuple[ContextEntry, ...], metas: MetaState) -> Term:
    """Make an unassigned mvar's eventual solution able to mention the given
    in-scope binder variables.

    Returns a replacement for the occurrence of ``?mid``: a fresh mvar of
    function type applied to the binder variables.  Solving the application
    against a term abstracts the binders into the fresh mvar's solution, and
    beta-reduction after solving erases any the solution does not use.
    """
    assert not metas.is_assigned(mid)
    if not bound:
        return MVar(mid)
    decl = metas.decl(mid)
    lifted_type = pi_close(bound, decl.type)
    new_id = metas.fresh(decl.ctx, lifted_type, span=decl.span, kind=decl.kind)
    out: Term = MVar(new_id)
    for entry in bound:
        out = App(out, FVar(entry.fvar_id))
    return out
