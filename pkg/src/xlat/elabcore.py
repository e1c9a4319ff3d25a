"""Elaboration of core surface syntax into kernel terms.

Used in three places: loading environment files, partially elaborating the
term side of translation rules, and reading terms off the command line.
In rule mode, identifiers that are neither binders nor environment
constants become nonterminal metavariables, and the elaborator records the
binder scopes needed later for transport and matching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .coresyntax import (
    SrcApp,
    SrcAscribe,
    SrcFun,
    SrcHole,
    SrcIdent,
    SrcLet,
    SrcNum,
    SrcPi,
    SrcSort,
    SrcTerm,
    parse_core_term,
    print_term,
)
from .errors import IllTyped, Span, TypeMismatch, UnknownConst, UnknownIdent, UnsolvedMeta, UnscopedVar
from .metas import MetaState
from .terms import (
    App,
    Const,
    ContextEntry,
    Environment,
    FVar,
    Lam,
    Let,
    LocalContext,
    MVar,
    NatLit,
    Pi,
    Sort,
    TYPE,
    Term,
    abstract_fvar,
    collect_mvars,
    fresh_id,
    instantiate_bvar,
)
from .typecheck import infer_type, is_def_eq, whnf


@dataclass
class RuleBinder:
    """A binder introduced while elaborating a rule's term side."""

    fvar_id: int
    name: str
    type: Term  # may mention pattern metas
    value: Optional[Term] = None  # for let binders
    is_let: bool = False


@dataclass
class MetaInfo:
    id: int
    name: Optional[str]  # nonterminal name, None for hidden metas
    kind: str  # "nonterminal" | "implicit" | "hole"
    under: tuple[int, ...]  # rule-binder fvar ids in scope at creation
    span: Optional[Span] = None


class CoreElaborator:
    def __init__(
        self,
        env: Environment,
        metas: MetaState,
        ctx: LocalContext = LocalContext(),
        nonterminals: frozenset[str] = frozenset(),
        allow_new_nonterminals: bool = False,
    ):
        self.env = env
        self.metas = metas
        self.ctx = ctx
        self.scope: list[tuple[str, int]] = []  # innermost last
        self.nonterminals = nonterminals
        self.allow_new_nonterminals = allow_new_nonterminals
        self.rule_mode = bool(nonterminals) or allow_new_nonterminals
        self.nonterminal_mvars: dict[str, int] = {}
        self.binders: list[RuleBinder] = []  # in introduction (pre)order
        self.metas_created: list[MetaInfo] = []
        self._open_rule_binders: list[int] = []

    # -- metavariable helpers ----------------------------------------------

    def _record(self, mid: int, name: Optional[str], kind: str, span: Span | None) -> None:
        self.metas_created.append(
            MetaInfo(mid, name, kind, tuple(self._open_rule_binders), span)
        )

    def fresh_type_mvar(self, span: Span | None = None) -> Term:
        sort = self.metas.fresh(self.ctx, TYPE, span, kind="sort-hole")
        self._record(sort, None, "hole", span)
        ty = self.metas.fresh(self.ctx, MVar(sort), span, kind="type-hole")
        self._record(ty, None, "hole", span)
        return MVar(ty)

    def fresh_hole(self, span: Span | None = None) -> Term:
        ty = self.fresh_type_mvar(span)
        mid = self.metas.fresh(self.ctx, ty, span, kind="hole")
        self._record(mid, None, "hole", span)
        return MVar(mid)

    # -- identifier resolution ----------------------------------------------

    def _resolve(self, name: str, span: Span) -> Term:
        for bname, fid in reversed(self.scope):
            if bname == name:
                return FVar(fid)
        if name in self.nonterminal_mvars:
            return MVar(self.nonterminal_mvars[name])
        if name in self.nonterminals:
            return self._new_nonterminal(name, span)
        decl = self.env.lookup(name)
        if decl is not None:
            return Const(name)
        if self.allow_new_nonterminals:
            return self._new_nonterminal(name, span)
        raise UnknownIdent(f"unknown identifier '{name}'", span)

    def _new_nonterminal(self, name: str, span: Span) -> Term:
        ty = self.fresh_type_mvar(span)
        mid = self.metas.fresh(self.ctx, ty, span, kind="nonterminal")
        self._record(mid, name, "nonterminal", span)
        self.nonterminal_mvars[name] = mid
        return MVar(mid)

    # -- binders -------------------------------------------------------------

    def _open_binder(
        self, name: str, ty: Term, value: Term | None = None, is_let: bool = False
    ) -> int:
        fid = fresh_id()
        self.ctx = self.ctx.extend(ContextEntry(fid, name, ty, value))
        self.scope.append((name, fid))
        if self.rule_mode:
            self.binders.append(RuleBinder(fid, name, ty, value, is_let))
            self._open_rule_binders.append(fid)
        return fid

    def _close_binder(self, fid: int) -> None:
        self.scope.pop()
        entries = tuple(e for e in self.ctx.entries if e.fvar_id != fid)
        self.ctx = LocalContext(entries)
        if self.rule_mode:
            self._open_rule_binders.pop()

    # -- elaboration ----------------------------------------------------------

    def elab(self, src: SrcTerm) -> Term:
        match src:
            case SrcApp():
                return self._elab_spine(src)
            case _:
                return self._insert_implicits(self._elab_head(src))

    def _elab_spine(self, src: SrcTerm) -> Term:
        args: list[SrcTerm] = []
        while isinstance(src, SrcApp):
            args.append(src.arg)
            src = src.fn
        args.reverse()
        term = self._elab_head(src)
        for arg in args:
            term = self._apply(term, arg)
        return self._insert_implicits(term)

    def _insert_implicits(self, term: Term) -> Term:
        ty = whnf(self._type_of(term, None), self.env, self.metas)
        while isinstance(ty, Pi) and ty.implicit:
            hole = self.metas.fresh(self.ctx, ty.binder_type, kind="implicit")
            self._record(hole, None, "implicit", None)
            term = App(term, MVar(hole))
            ty = whnf(instantiate_bvar(ty.body, MVar(hole)), self.env, self.metas)
        return term

    def _apply(self, fn: Term, arg_src: SrcTerm) -> Term:
        fn = self._insert_implicits(fn)
        ty = whnf(self._type_of(fn, arg_src.span), self.env, self.metas)
        if isinstance(ty, MVar) and not self.metas.is_assigned(ty.id):
            # unknown head type: force a non-dependent function type
            dom = self.fresh_type_mvar(arg_src.span)
            cod = self.fresh_type_mvar(arg_src.span)
            if not is_def_eq(ty, Pi("_", dom, cod), self.ctx, self.env, self.metas):
                raise TypeMismatch("cannot apply a term of unknown type", arg_src.span)
            ty = Pi("_", dom, cod)
        if not isinstance(ty, Pi):
            raise TypeMismatch(f"not a function: it has type {ty}", arg_src.span)
        arg = self.elab(arg_src)
        arg_ty = self._type_of(arg, arg_src.span)
        if not is_def_eq(arg_ty, ty.binder_type, self.ctx, self.env, self.metas):
            raise TypeMismatch(
                f"argument type mismatch: expected {print_term(ty.binder_type)},"
                f" got {print_term(arg_ty)}",
                arg_src.span,
            )
        return App(fn, arg)

    def _type_of(self, term: Term, span: Span | None) -> Term:
        try:
            return infer_type(term, self.ctx, self.env, self.metas)
        except (IllTyped, UnknownConst, UnscopedVar) as exc:
            raise TypeMismatch(str(exc), span) from exc

    def _elab_head(self, src: SrcTerm) -> Term:
        match src:
            case SrcIdent(name, span):
                return self._resolve(name, span)
            case SrcNum(value, _):
                return NatLit(value)
            case SrcSort(level, _):
                return Sort(level)
            case SrcHole(span):
                return self.fresh_hole(span)
            case SrcAscribe(expr, ty_src, span):
                ty = self.elab(ty_src)
                term = self.elab(expr)
                term_ty = self._type_of(term, span)
                if not is_def_eq(term_ty, ty, self.ctx, self.env, self.metas):
                    raise TypeMismatch(f"ascription mismatch: {term_ty} is not {ty}", span)
                return term
            case SrcFun(name, ty_src, body_src, span):
                ty = self.elab(ty_src) if ty_src is not None else self.fresh_type_mvar(span)
                fid = self._open_binder(name, ty)
                try:
                    body = self.elab(body_src)
                finally:
                    self._close_binder(fid)
                return Lam(name, ty, abstract_fvar(body, fid))
            case SrcPi(name, ty_src, body_src, implicit, _):
                ty = self.elab(ty_src)
                fid = self._open_binder(name, ty)
                try:
                    body = self.elab(body_src)
                finally:
                    self._close_binder(fid)
                return Pi(name, ty, abstract_fvar(body, fid), implicit)
            case SrcLet(name, ty_src, value_src, body_src, span):
                ty = self.elab(ty_src) if ty_src is not None else self.fresh_type_mvar(span)
                value = self.elab(value_src)
                value_ty = self._type_of(value, span)
                if not is_def_eq(value_ty, ty, self.ctx, self.env, self.metas):
                    raise TypeMismatch(
                        f"let value has type {value_ty}, expected {ty}", span
                    )
                fid = self._open_binder(name, ty, value, is_let=True)
                try:
                    body = self.elab(body_src)
                finally:
                    self._close_binder(fid)
                return Let(name, ty, value, abstract_fvar(body, fid))
            case SrcApp():
                return self._elab_spine(src)
        raise TypeMismatch(f"cannot elaborate {src!r}")


def elaborate_term(
    text: str,
    env: Environment,
    ctx: LocalContext = LocalContext(),
    expected: Term | None = None,
    metas: MetaState | None = None,
) -> tuple[Term, Term]:
    """Parse and elaborate a closed core term; returns ``(term, type)``.

    All metavariables must be solved: this is the strict entry point used by
    environment files and the CLI.
    """
    own_metas = metas if metas is not None else MetaState()
    src = parse_core_term(text)
    elab = CoreElaborator(env, own_metas, ctx)
    term = elab.elab(src)
    ty = infer_type(term, ctx, env, own_metas)
    if expected is not None and not is_def_eq(ty, expected, ctx, env, own_metas):
        raise TypeMismatch(
            f"term has type {print_term(ty)}, expected {print_term(expected)}"
        )
    term = own_metas.instantiate(term)
    ty = own_metas.instantiate(ty)
    residual = collect_mvars(term)
    if residual:
        raise UnsolvedMeta(f"unsolved hole ?m{residual[0]} in term")
    return term, ty
