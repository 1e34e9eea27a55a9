"""Static and dynamic semantics of the source calculus, plus the
monomorphisation pass that eliminates location polymorphism.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import BudgetExceeded, EvalError, InternalError, TypeCheckError
from . import surface
from .syntax import (
    App,
    BaseTy,
    CLIENT,
    Client,
    ForallLoc,
    ForallTy,
    FunTy,
    IntLit,
    LAbs,
    LApp,
    Lam,
    LocVar,
    Location,
    NameSupply,
    Pair,
    PairTy,
    Proj,
    RpcTerm,
    RpcType,
    SERVER,
    Server,
    SourceProgram,
    TAbs,
    TApp,
    TyVar,
    UnitLit,
    Var,
    desugar,
    free_loc_vars_ty,
    free_ty_vars_ty,
    is_constant,
    is_value,
    subst_loc_in_term,
    subst_loc_in_ty,
    subst_term,
    subst_ty_in_term,
    subst_ty_in_ty,
)

DEFAULT_DEPTH_CAP = 10**5


# ---------------------------------------------------------------------------
# Typing environments


class TypeEnv:
    """Ordered environment of location variables, type variables, and
    term-variable bindings; lookup respects innermost shadowing."""

    __slots__ = ("entries",)

    def __init__(self, entries: tuple = ()):
        self.entries = entries

    def bind_loc(self, name: str) -> "TypeEnv":
        return TypeEnv(self.entries + (("loc", name),))

    def bind_ty(self, name: str) -> "TypeEnv":
        return TypeEnv(self.entries + (("ty", name),))

    def bind_var(self, name: str, ty: RpcType) -> "TypeEnv":
        self._check_type(ty)
        return TypeEnv(self.entries + (("var", name, ty),))

    def lookup(self, name: str) -> Optional[RpcType]:
        for entry in reversed(self.entries):
            if entry[0] == "var" and entry[1] == name:
                return entry[2]
        return None

    def has_loc(self, name: str) -> bool:
        return any(e[0] == "loc" and e[1] == name for e in self.entries)

    def has_ty(self, name: str) -> bool:
        return any(e[0] == "ty" and e[1] == name for e in self.entries)

    def loc_vars(self) -> list[str]:
        return [e[1] for e in self.entries if e[0] == "loc"]

    def _check_type(self, ty: RpcType) -> None:
        for name in sorted(free_ty_vars_ty(ty)):
            if not self.has_ty(name):
                raise TypeCheckError(f"unbound type variable {name!r}")
        for name in sorted(free_loc_vars_ty(ty)):
            if not self.has_loc(name):
                raise TypeCheckError(f"unbound location variable {name!r}")

    def check_loc(self, loc: Location, span=None) -> None:
        if isinstance(loc, LocVar) and not self.has_loc(loc.name):
            raise TypeCheckError(f"unbound location variable {loc.name!r}", span)


EMPTY_ENV = TypeEnv()


# ---------------------------------------------------------------------------
# Alpha-aware type equality


def types_equal(a: RpcType, b: RpcType, left: dict | None = None, right: dict | None = None) -> bool:
    left = left or {}
    right = right or {}
    match (a, b):
        case (BaseTy(x), BaseTy(y)):
            return x == y
        case (TyVar(x), TyVar(y)):
            return left.get(x, x) == right.get(y, y)
        case (FunTy(a1, l1, r1), FunTy(a2, l2, r2)):
            return (
                locations_equal(l1, l2, left, right)
                and types_equal(a1, a2, left, right)
                and types_equal(r1, r2, left, right)
            )
        case (PairTy(a1, b1), PairTy(a2, b2)):
            return types_equal(a1, a2, left, right) and types_equal(b1, b2, left, right)
        case (ForallTy(v1, t1), ForallTy(v2, t2)):
            mark = object()
            return types_equal(t1, t2, {**left, v1: mark}, {**right, v2: mark})
        case (ForallLoc(v1, t1), ForallLoc(v2, t2)):
            mark = object()
            return types_equal(t1, t2, {**left, v1: mark}, {**right, v2: mark})
    return False


def locations_equal(a: Location, b: Location, left: dict, right: dict) -> bool:
    if isinstance(a, LocVar) and isinstance(b, LocVar):
        return left.get(a.name, a.name) == right.get(b.name, b.name)
    return a == b


# ---------------------------------------------------------------------------
# Type checker


def typecheck_rpc(env: TypeEnv, at: Location, term: RpcTerm) -> RpcType:
    """Synthesize the type of `term` at location `at` (syntax-directed)."""
    env.check_loc(at)
    match term:
        case Var(name):
            ty = env.lookup(name)
            if ty is None:
                raise TypeCheckError(f"unbound variable {name!r}", term.span)
            return ty
        case IntLit(_):
            return BaseTy("Int")
        case UnitLit():
            return BaseTy("Unit")
        case Lam(loc, param, annot, body):
            env.check_loc(loc, term.span)
            env._check_type(annot)
            body_ty = typecheck_rpc(env.bind_var(param, annot), loc, body)
            return FunTy(annot, loc, body_ty)
        case TAbs(var, body):
            if not is_value(body):
                raise TypeCheckError("type abstraction over a non-value body", term.span)
            body_ty = typecheck_rpc(env.bind_ty(var), at, body)
            return ForallTy(var, body_ty)
        case LAbs(var, body):
            if not is_value(body):
                raise TypeCheckError("location abstraction over a non-value body", term.span)
            body_ty = typecheck_rpc(env.bind_loc(var), at, body)
            return ForallLoc(var, body_ty)
        case App(fun, arg):
            fun_ty = typecheck_rpc(env, at, fun)
            if not isinstance(fun_ty, FunTy):
                raise TypeCheckError(
                    f"applying a non-function of type {surface.pretty_type(fun_ty)}",
                    term.span,
                )
            arg_ty = typecheck_rpc(env, at, arg)
            if not types_equal(fun_ty.arg, arg_ty):
                raise TypeCheckError(
                    "argument type mismatch: expected "
                    f"{surface.pretty_type(fun_ty.arg)}, got {surface.pretty_type(arg_ty)}",
                    term.span,
                )
            return fun_ty.res
        case TApp(fun, ty):
            env._check_type(ty)
            fun_ty = typecheck_rpc(env, at, fun)
            if not isinstance(fun_ty, ForallTy):
                raise TypeCheckError(
                    f"type application of a non-quantified type {surface.pretty_type(fun_ty)}",
                    term.span,
                )
            return subst_ty_in_ty(fun_ty.body, fun_ty.var, ty)
        case LApp(fun, loc):
            env.check_loc(loc, term.span)
            fun_ty = typecheck_rpc(env, at, fun)
            if not isinstance(fun_ty, ForallLoc):
                raise TypeCheckError(
                    f"location application of a non-quantified type {surface.pretty_type(fun_ty)}",
                    term.span,
                )
            return subst_loc_in_ty(fun_ty.body, fun_ty.var, loc)
        case Pair(left, right):
            return PairTy(typecheck_rpc(env, at, left), typecheck_rpc(env, at, right))
        case Proj(index, arg):
            arg_ty = typecheck_rpc(env, at, arg)
            if not isinstance(arg_ty, PairTy):
                raise TypeCheckError(
                    f"projection of a non-pair type {surface.pretty_type(arg_ty)}",
                    term.span,
                )
            return arg_ty.left if index == 1 else arg_ty.right
    raise InternalError(f"typecheck_rpc: unknown term {term!r}")


def typecheck_program(program: SourceProgram, at: Location = CLIENT) -> RpcType:
    """Check each definition against its declared type, then synthesize
    main's type with the definitions in scope.

    Source typability is independent of the ambient location (the rules
    only thread it), so definitions are checked at `at` as well.
    """
    env = EMPTY_ENV
    for d in program.defs:
        env._check_type(d.declared_type)
        body_ty = typecheck_rpc(env, at, d.body)
        if not types_equal(body_ty, d.declared_type):
            raise TypeCheckError(
                f"definition {d.name!r} declares {surface.pretty_type(d.declared_type)} "
                f"but its body has type {surface.pretty_type(body_ty)}",
                d.span,
            )
        env = env.bind_var(d.name, d.declared_type)
    return typecheck_rpc(env, at, program.main)


# ---------------------------------------------------------------------------
# Big-step evaluator (explicit-stack machine)


@dataclass
class RpcCounters:
    beta_apps: int = 0


class _Frame:
    __slots__ = ("kind", "payload", "loc")

    def __init__(self, kind: str, payload, loc: Location):
        self.kind = kind
        self.payload = payload
        self.loc = loc


def eval_rpc(
    term: RpcTerm,
    at: Location = CLIENT,
    counters: Optional[RpcCounters] = None,
    depth_cap: int = DEFAULT_DEPTH_CAP,
) -> RpcTerm:
    """Evaluate a closed, well-typed term to a value.

    Implemented as an explicit-stack machine so the configurable depth
    cap fails cleanly rather than exhausting the host stack. The stack
    holds the pending premises of the big-step rules.
    """
    if not is_constant(at):
        raise EvalError(f"cannot evaluate at location variable {at}")
    counters = counters if counters is not None else RpcCounters()
    supply = NameSupply("_v")
    stack: list[_Frame] = []
    mode, current, loc = "eval", term, at

    while True:
        if len(stack) > depth_cap:
            raise BudgetExceeded(f"evaluation depth cap of {depth_cap} exceeded")
        if mode == "eval":
            t = current
            if isinstance(t, (Var,)):
                raise InternalError(f"evaluation reached an unbound variable {t.name!r}")
            if is_value(t):
                mode, current = "ret", t
                continue
            match t:
                case App(fun, arg):
                    stack.append(_Frame("app_fun", arg, loc))
                    current = fun
                case TApp(fun, ty):
                    stack.append(_Frame("tapp", ty, loc))
                    current = fun
                case LApp(fun, l):
                    stack.append(_Frame("lapp", l, loc))
                    current = fun
                case Pair(left, right):
                    stack.append(_Frame("pair_left", right, loc))
                    current = left
                case Proj(index, arg):
                    stack.append(_Frame("proj", index, loc))
                    current = arg
                case _:
                    raise InternalError(f"eval_rpc: no rule for {t!r}")
        else:  # mode == "ret": current is a value handed to the top frame
            if not stack:
                return current
            frame = stack.pop()
            loc = frame.loc
            match frame.kind:
                case "app_fun":
                    stack.append(_Frame("app_arg", current, loc))
                    mode, current = "eval", frame.payload
                case "app_arg":
                    lam = frame.payload
                    if not isinstance(lam, Lam):
                        raise InternalError("application of a non-lambda value")
                    counters.beta_apps += 1
                    if not is_constant(lam.loc):
                        raise InternalError(
                            f"beta-reduction at unresolved location variable {lam.loc}"
                        )
                    # (App): continue with the redex body at the lambda's
                    # location; a remote hop when it differs from `loc`.
                    body = subst_term(lam.body, lam.param, current, supply)
                    mode, current, loc = "eval", body, lam.loc
                case "tapp":
                    if not isinstance(current, TAbs):
                        raise InternalError("type application of a non-type-abstraction")
                    mode = "ret"
                    current = subst_ty_in_term(current.body, current.var, frame.payload, supply)
                case "lapp":
                    if not isinstance(current, LAbs):
                        raise InternalError("location application of a non-location-abstraction")
                    mode = "ret"
                    current = subst_loc_in_term(current.body, current.var, frame.payload, supply)
                case "pair_left":
                    stack.append(_Frame("pair_right", current, loc))
                    mode, current = "eval", frame.payload
                case "pair_right":
                    mode, current = "ret", Pair(frame.payload, current)
                case "proj":
                    if not isinstance(current, Pair):
                        raise InternalError("projection of a non-pair value")
                    mode = "ret"
                    current = current.left if frame.payload == 1 else current.right
                case _:
                    raise InternalError(f"eval_rpc: unknown frame {frame.kind}")


# ---------------------------------------------------------------------------
# Monomorphisation


def monomorphise(program: SourceProgram) -> SourceProgram:
    """Eliminate location polymorphism.

    Outside-in: every location abstraction becomes a pair of its client
    and server specializations, every location application a projection,
    and location quantifiers in types become pair types. The output has
    no location abstractions, applications, or variables anywhere.
    """
    main = desugar(program)
    return SourceProgram((), _mono_term(main))


def _mono_term(term: RpcTerm) -> RpcTerm:
    match term:
        case Var(_) | IntLit() | UnitLit():
            return term
        case Lam(loc, param, annot, body):
            if not is_constant(loc):
                raise InternalError(
                    f"monomorphise reached a lambda at unresolved location {loc}"
                )
            return Lam(loc, param, _mono_type(annot), _mono_term(body), term.span)
        case TAbs(var, body):
            return TAbs(var, _mono_term(body), term.span)
        case LAbs(var, body):
            client_half = _mono_term(subst_loc_in_term(body, var, CLIENT))
            server_half = _mono_term(subst_loc_in_term(body, var, SERVER))
            return Pair(client_half, server_half, term.span)
        case App(fun, arg):
            return App(_mono_term(fun), _mono_term(arg), term.span)
        case TApp(fun, ty):
            return TApp(_mono_term(fun), _mono_type(ty), term.span)
        case LApp(fun, loc):
            if isinstance(loc, Client):
                return Proj(1, _mono_term(fun), term.span)
            if isinstance(loc, Server):
                return Proj(2, _mono_term(fun), term.span)
            raise InternalError(
                f"monomorphise reached a location application at variable {loc}"
            )
        case Pair(left, right):
            return Pair(_mono_term(left), _mono_term(right), term.span)
        case Proj(index, arg):
            return Proj(index, _mono_term(arg), term.span)
    raise InternalError(f"_mono_term: unknown term {term!r}")


def _mono_type(ty: RpcType) -> RpcType:
    match ty:
        case BaseTy(_) | TyVar(_):
            return ty
        case FunTy(arg, loc, res):
            if not is_constant(loc):
                raise InternalError(
                    f"monomorphise reached a function type at unresolved location {loc}"
                )
            return FunTy(_mono_type(arg), loc, _mono_type(res))
        case PairTy(left, right):
            return PairTy(_mono_type(left), _mono_type(right))
        case ForallTy(var, body):
            return ForallTy(var, _mono_type(body))
        case ForallLoc(var, body):
            return PairTy(
                _mono_type(subst_loc_in_ty(body, var, CLIENT)),
                _mono_type(subst_loc_in_ty(body, var, SERVER)),
            )
    raise InternalError(f"_mono_type: unknown type {ty!r}")
