"""Built-in environment and loading of user environment files."""

from __future__ import annotations

from .coresyntax import parse_type_and_value, print_term
from .elabcore import CoreElaborator
from .errors import (
    CoreSyntaxError,
    DuplicateDecl,
    EnvIllTyped,
    EnvSyntaxError,
    XlatError,
)
from .metas import MetaState
from .terms import (
    App,
    BVar,
    Const,
    Decl,
    Environment,
    Lam,
    LocalContext,
    Pi,
    PROP,
    Sort,
    TYPE,
    Term,
    collect_mvars,
)
from .typecheck import NAT_REP, infer_type, is_def_eq, whnf

_NATREP = Const(NAT_REP)


def _fn(*tys: Term) -> Term:
    """Right-nested non-dependent function type."""
    out = tys[-1]
    for ty in reversed(tys[:-1]):
        out = Pi("_", ty, out)
    return out


def prelude() -> Environment:
    """The fixed built-in environment.

    ``numCast`` is the distinguished numeral coercion; ``intLit`` and
    ``floatLit`` are reducible wrappers pinning its type argument, so that
    translated numerals compare definitionally against either spelling.
    """
    poly_binop = Pi("A", TYPE, _fn(BVar(0), BVar(1), BVar(2)), implicit=True)
    decls = [
        Decl("True", PROP),
        Decl("False", PROP),
        Decl("Not", _fn(PROP, PROP)),
        Decl("And", _fn(PROP, PROP, PROP)),
        Decl("Or", _fn(PROP, PROP, PROP)),
        Decl("Nat", TYPE),
        Decl("Int", TYPE),
        Decl("Float", TYPE),
        Decl(NAT_REP, TYPE),
        Decl("numCast", Pi("A", TYPE, _fn(_NATREP, BVar(1)), implicit=True)),
        Decl("add", poly_binop),
        Decl(
            "intLit",
            _fn(_NATREP, Const("Int")),
            definition=Lam("n", _NATREP, App(App(Const("numCast"), Const("Int")), BVar(0))),
            reducible=True,
        ),
        Decl(
            "floatLit",
            _fn(_NATREP, Const("Float")),
            definition=Lam("n", _NATREP, App(App(Const("numCast"), Const("Float")), BVar(0))),
            reducible=True,
        ),
    ]
    return Environment({d.name: d for d in decls})


def describe_environment(env: Environment) -> str:
    """Canonical one-line-per-declaration rendering (declaration order)."""
    lines = []
    for name in env.names():
        decl = env.decls[name]
        if decl.definition is None:
            lines.append(f"constant {name} : {print_term(decl.type)}")
        else:
            lines.append(
                f"def {name} : {print_term(decl.type)} := {print_term(decl.definition)}"
            )
    return "\n".join(lines) + "\n"


def _strip_comment(line: str) -> str:
    idx = line.find("--")
    return line[:idx] if idx >= 0 else line


def load_env_file(text: str, base: Environment | None = None) -> Environment:
    """Parse and type-check an environment file on top of ``base`` (the
    prelude by default), returning the merged environment."""
    env = base if base is not None else prelude()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        words = line.split(None, 1)
        keyword = words[0]
        if keyword not in ("constant", "def") or len(words) < 2:
            raise EnvSyntaxError(f"line {lineno}: expected 'constant' or 'def' declaration")
        rest = words[1].split(":", 1)
        if len(rest) < 2:
            raise EnvSyntaxError(f"line {lineno}: missing ':' in declaration")
        name = rest[0].strip()
        if not name or " " in name:
            raise EnvSyntaxError(f"line {lineno}: bad declaration name {name!r}")
        if name in env:
            raise DuplicateDecl(f"line {lineno}: duplicate declaration '{name}'")
        try:
            ty_src, value_src = parse_type_and_value(rest[1])
        except CoreSyntaxError as exc:
            raise EnvSyntaxError(f"line {lineno}: {exc.message}") from exc
        if keyword == "constant" and value_src is not None:
            raise EnvSyntaxError(f"line {lineno}: 'constant' takes no definition")
        if keyword == "def" and value_src is None:
            raise EnvSyntaxError(f"line {lineno}: 'def' requires ':= <definition>'")
        try:
            env = env.add(_elab_decl(env, name, ty_src, value_src))
        except (EnvIllTyped, DuplicateDecl):
            raise
        except XlatError as exc:
            raise EnvIllTyped(f"line {lineno}: declaration '{name}': {exc.message}") from exc
    return env


def _elab_decl(env: Environment, name: str, ty_src, value_src) -> Decl:
    metas = MetaState()
    ctx = LocalContext()
    elab = CoreElaborator(env, metas)
    ty = elab.elab(ty_src)
    sort = whnf(infer_type(ty, ctx, env, metas), env, metas)
    if not isinstance(sort, Sort):
        raise EnvIllTyped(f"declared type of '{name}' is not a type")
    definition = None
    if value_src is not None:
        body = elab.elab(value_src)
        body_ty = infer_type(body, ctx, env, metas)
        if not is_def_eq(body_ty, ty, ctx, env, metas):
            raise EnvIllTyped(
                f"definition of '{name}' has type {print_term(metas.instantiate(body_ty))},"
                f" expected {print_term(metas.instantiate(ty))}"
            )
        definition = metas.instantiate(body)
        if collect_mvars(definition):
            raise EnvIllTyped(f"definition of '{name}' has unsolved holes")
    ty = metas.instantiate(ty)
    if collect_mvars(ty):
        raise EnvIllTyped(f"declared type of '{name}' has unsolved holes")
    return Decl(name, ty, definition, reducible=definition is not None)
