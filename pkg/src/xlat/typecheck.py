"""Type inference, weak head normalization and definitional equality.

Definitional equality is beta/zeta/delta/alpha plus solvable metavariable
assignment (first-order unification with a Miller-pattern case for
binder-lifted metavariables).  Eta and proof irrelevance are intentionally
not part of the relation.
"""

from __future__ import annotations

from .errors import AssignmentError, IllTyped, UnknownConst, UnscopedVar
from .metas import MetaState, lam_close
from .terms import (
    App,
    BVar,
    Const,
    ContextEntry,
    Environment,
    FVar,
    Lam,
    Let,
    Level,
    LocalContext,
    MVar,
    NatLit,
    Pi,
    Sort,
    TYPE,
    Term,
    abstract_fvar,
    app_spine,
    beta_spine,
    fresh_id,
    has_fvar,
    instantiate_bvar,
    mk_app,
)

NAT_REP = "NatRep"


def whnf_core(t: Term, metas: MetaState) -> Term:
    """Head-reduce by beta, zeta and assigned-mvar instantiation (no delta)."""
    while True:
        head, args = app_spine(t)
        match head:
            case MVar(m) if metas.is_assigned(m):
                t = mk_app(metas.instantiate(MVar(m)), *args)
            case Lam() if args:
                t = beta_spine(t)
            case Let(_, _, value, body):
                t = mk_app(instantiate_bvar(body, value), *args)
            case _:
                return t


def whnf(t: Term, env: Environment, metas: MetaState) -> Term:
    """Weak head normal form: beta, zeta, delta on reducible constants and
    head instantiation of assigned metavariables."""
    while True:
        t = whnf_core(t, metas)
        head, args = app_spine(t)
        if isinstance(head, Const):
            decl = env.lookup(head.name)
            if decl is not None and decl.reducible and decl.definition is not None:
                t = mk_app(decl.definition, *args)
                continue
        return t


def _surface(t: Term, metas: MetaState) -> Term:
    """Cheap head cleanup before structural comparison: instantiate assigned
    head mvars and contract exposed beta redexes.  Lets are preserved."""
    while True:
        head, args = app_spine(t)
        match head:
            case MVar(m) if metas.is_assigned(m):
                t = mk_app(metas.instantiate(MVar(m)), *args)
            case Lam() if args:
                t = beta_spine(t)
            case _:
                return t


class _DefEq:
    def __init__(self, env: Environment, metas: MetaState):
        self.env = env
        self.metas = metas

    def deq(self, a: Term, b: Term, ctx: LocalContext) -> bool:
        a = _surface(a, self.metas)
        b = _surface(b, self.metas)
        if a == b:
            return True

        ha, aargs = app_spine(a)
        hb, bargs = app_spine(b)

        a_flex = isinstance(ha, MVar) and not self.metas.is_assigned(ha.id)
        b_flex = isinstance(hb, MVar) and not self.metas.is_assigned(hb.id)
        if a_flex and b_flex and not aargs and not bargs:
            return self._flex_flex(ha.id, hb.id)
        if a_flex and self._solve(ha.id, aargs, b, ctx):
            return True
        if b_flex and self._solve(hb.id, bargs, a, ctx):
            return True
        if a_flex or b_flex:
            return False

        # structural binder cases before any reduction
        match a, b:
            case Lam(_, ty1, b1), Lam(nb, ty2, b2):
                return self._binder(ty1, b1, ty2, b2, nb, ctx)
            case Pi(_, ty1, b1, imp1), Pi(nb, ty2, b2, imp2):
                return imp1 == imp2 and self._binder(ty1, b1, ty2, b2, nb, ctx)
            case Let(), Let():
                sp = self.metas.savepoint()
                if self._let_structural(a, b, ctx):
                    return True
                self.metas.rollback(sp)
                # fall back to zeta expansion
                return self.deq(whnf_core(a, self.metas), whnf_core(b, self.metas), ctx)
            case (Let(), _) | (_, Let()):
                return self.deq(whnf_core(a, self.metas), whnf_core(b, self.metas), ctx)
            case _:
                pass

        # rigid-rigid
        result = self._rigid(ha, aargs, hb, bargs, ctx)
        if result is not None:
            return result

        # delta
        return self._delta(a, ha, b, hb, ctx)

    def _binder(self, ty1: Term, b1: Term, ty2: Term, b2: Term, name: str, ctx: LocalContext) -> bool:
        if not self.deq(ty1, ty2, ctx):
            return False
        f = fresh_id()
        entry = ContextEntry(f, name, ty1)
        ctx2 = ctx.extend(entry)
        return self.deq(instantiate_bvar(b1, FVar(f)), instantiate_bvar(b2, FVar(f)), ctx2)

    def _let_structural(self, a: Let, b: Let, ctx: LocalContext) -> bool:
        if not self.deq(a.binder_type, b.binder_type, ctx):
            return False
        if not self.deq(a.value, b.value, ctx):
            return False
        f = fresh_id()
        entry = ContextEntry(f, b.binder_name, a.binder_type, a.value)
        ctx2 = ctx.extend(entry)
        return self.deq(
            instantiate_bvar(a.body, FVar(f)), instantiate_bvar(b.body, FVar(f)), ctx2
        )

    def _rigid(self, ha: Term, aargs: list[Term], hb: Term, bargs: list[Term], ctx: LocalContext):
        """Compare rigid spines; ``None`` means undecided (try delta next)."""
        match ha, hb:
            case Sort(l1), Sort(l2):
                return l1 == l2
            case NatLit(v1), NatLit(v2):
                return v1 == v2
            case FVar(f1), FVar(f2):
                if f1 != f2:
                    return False
                return self._args(aargs, bargs, ctx)
            case BVar(i1), BVar(i2):
                if i1 != i2:
                    return False
                return self._args(aargs, bargs, ctx)
            case Const(n1), Const(n2) if n1 == n2:
                sp = self.metas.savepoint()
                if self._args(aargs, bargs, ctx):
                    return True
                self.metas.rollback(sp)
                decl = self.env.lookup(n1)
                if decl is not None and decl.reducible and decl.definition is not None:
                    return None  # same constant, different args: unfold and retry
                return False
            case _:
                return None

    def _args(self, aargs: list[Term], bargs: list[Term], ctx: LocalContext) -> bool:
        if len(aargs) != len(bargs):
            return False
        return all(self.deq(x, y, ctx) for x, y in zip(aargs, bargs))

    def _delta(self, a: Term, ha: Term, b: Term, hb: Term, ctx: LocalContext) -> bool:
        ua = self._unfold(a, ha)
        ub = self._unfold(b, hb)
        if ua is None and ub is None:
            return False
        return self.deq(ua if ua is not None else a, ub if ub is not None else b, ctx)

    def _unfold(self, t: Term, head: Term) -> Term | None:
        if isinstance(head, Const):
            decl = self.env.lookup(head.name)
            if decl is not None and decl.reducible and decl.definition is not None:
                _, args = app_spine(t)
                return mk_app(decl.definition, *args)
        return None

    # -- metavariable solving ---------------------------------------------

    def _flex_flex(self, m1: int, m2: int) -> bool:
        if m1 == m2:
            return True
        younger, older = (m1, m2) if m1 > m2 else (m2, m1)
        return self._checked_assign(younger, MVar(older))

    def _solve(self, mid: int, args: list[Term], rhs: Term, ctx: LocalContext) -> bool:
        """Assign ``?mid args... := rhs``.  Bare flex is first-order; applied
        flex requires the Miller pattern (distinct free-variable arguments)."""
        rhs = self.metas.instantiate(rhs)
        if not args:
            return self._checked_assign(mid, rhs)
        ids = [a.id for a in args if isinstance(a, FVar)]
        if len(ids) != len(args) or len(set(ids)) != len(ids):
            return False
        # refuse a solution whose pending metas could still capture the args
        for pending in _unassigned_mvars(rhs, self.metas):
            pctx = self.metas.decls[pending].ctx
            if any(f in pctx for f in ids):
                return False
        try:
            entries = tuple(ctx.lookup(f) for f in ids)
        except UnscopedVar:
            return False
        return self._checked_assign(mid, lam_close(entries, rhs))

    def _checked_assign(self, mid: int, value: Term) -> bool:
        sp = self.metas.savepoint()
        try:
            self.metas.assign(mid, value)
        except AssignmentError:
            return False
        decl = self.metas.decls[mid]
        try:
            value_ty = infer_type(value, decl.ctx, self.env, self.metas)
        except (IllTyped, UnknownConst, UnscopedVar):
            self.metas.rollback(sp)
            return False
        if not self.deq(value_ty, decl.type, decl.ctx):
            self.metas.rollback(sp)
            return False
        return True


def _unassigned_mvars(t: Term, metas: MetaState) -> list[int]:
    from .terms import collect_mvars

    return [m for m in collect_mvars(t) if not metas.is_assigned(m)]


def is_def_eq(t1: Term, t2: Term, ctx: LocalContext, env: Environment, metas: MetaState) -> bool:
    """True iff the terms are definitionally equal, possibly assigning
    metavariables.  On failure the meta state is rolled back exactly."""
    sp = metas.savepoint()
    if _DefEq(env, metas).deq(t1, t2, ctx):
        return True
    metas.rollback(sp)
    return False


# ---------------------------------------------------------------------------
# type inference


def infer_type(t: Term, ctx: LocalContext, env: Environment, metas: MetaState) -> Term:
    """Infer the type of a well-scoped term.

    Metavariable types are looked up, never solved here; the definitional
    equality checks for applications may still assign metas, which is how
    expected types propagate during elaboration.
    """
    match t:
        case Sort():
            return TYPE
        case Const(name):
            decl = env.lookup(name)
            if decl is None:
                raise UnknownConst(f"unknown constant '{name}'")
            return decl.type
        case FVar(f):
            return ctx.lookup(f).type
        case BVar(i):
            raise UnscopedVar(f"loose bound variable #{i}")
        case MVar(m):
            if m not in metas.decls:
                raise IllTyped(f"undeclared metavariable ?m{m}")
            return metas.decls[m].type
        case NatLit():
            return Const(NAT_REP)
        case App(fn, arg):
            fn_ty = whnf(infer_type(fn, ctx, env, metas), env, metas)
            if not isinstance(fn_ty, Pi):
                raise IllTyped(f"application head is not a function (has type {fn_ty})")
            arg_ty = infer_type(arg, ctx, env, metas)
            if not is_def_eq(arg_ty, fn_ty.binder_type, ctx, env, metas):
                raise IllTyped(
                    f"argument type mismatch: expected {fn_ty.binder_type}, got {arg_ty}"
                )
            return instantiate_bvar(fn_ty.body, arg)
        case Lam(name, ty, body):
            _ensure_type(ty, ctx, env, metas)
            f = fresh_id()
            ctx2 = ctx.extend(ContextEntry(f, name, ty))
            body_ty = infer_type(instantiate_bvar(body, FVar(f)), ctx2, env, metas)
            return Pi(name, ty, abstract_fvar(body_ty, f))
        case Pi(name, ty, body, _):
            _ensure_type(ty, ctx, env, metas)
            f = fresh_id()
            ctx2 = ctx.extend(ContextEntry(f, name, ty))
            body_sort = _ensure_type(instantiate_bvar(body, FVar(f)), ctx2, env, metas)
            if body_sort is not None and body_sort.level is Level.PROP:
                return Sort(Level.PROP)  # impredicative Prop
            return TYPE
        case Let(name, ty, value, body):
            _ensure_type(ty, ctx, env, metas)
            value_ty = infer_type(value, ctx, env, metas)
            if not is_def_eq(value_ty, ty, ctx, env, metas):
                raise IllTyped(f"let value has type {value_ty}, expected {ty}")
            f = fresh_id()
            ctx2 = ctx.extend(ContextEntry(f, name, ty, value))
            body_ty = infer_type(instantiate_bvar(body, FVar(f)), ctx2, env, metas)
            if has_fvar(body_ty, f):
                return Let(name, ty, value, abstract_fvar(body_ty, f))
            return body_ty
        case _:
            raise IllTyped(f"cannot infer type of {t!r}")


def _ensure_type(ty: Term, ctx: LocalContext, env: Environment, metas: MetaState) -> Sort | None:
    """Check that ``ty`` is a type.  Returns its sort, or None when the sort
    is still a metavariable (settled by the final from-scratch check)."""
    s = whnf(infer_type(ty, ctx, env, metas), env, metas)
    if isinstance(s, Sort):
        return s
    head, _ = app_spine(s)
    if isinstance(head, MVar):
        return None
    raise IllTyped(f"expected a type, but its type is {s}")
