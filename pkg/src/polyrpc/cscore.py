"""Static semantics and small-step machine of the client-server calculus.

The relocatable predicate, term/code/program typing, stack and
configuration typing, and the configuration machine driven by the
communication rules.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .errors import (
    BudgetExceeded,
    InternalError,
    MissingCodeError,
    StuckError,
    TypeCheckError,
)
from .cs import (
    CApp,
    CBase,
    CClo,
    CForallLoc,
    CForallTy,
    CFun,
    CInt,
    CLApp,
    CMonad,
    CPair,
    CPairV,
    CProj,
    CTAbs,
    CTApp,
    CTyVar,
    CUnitLit,
    CVar,
    Call,
    Clo,
    Code,
    CodeRef,
    CsProgram,
    CsTerm,
    CsType,
    CsValue,
    Do,
    Gen,
    Let,
    OpenLAbs,
    OpenLam,
    Req,
    Unit,
    is_cs_value,
    pretty_cs_term,
    pretty_cs_type,
    subst_cs,
    subst_loc_in_cs,
    subst_loc_in_cs_ty,
    subst_ty_in_cs,
    subst_ty_in_cs_ty,
)
from .syntax import CLIENT, Client, LocVar, Location, SERVER, Server, is_constant

DEFAULT_STEP_BUDGET = 10**6


def step_budget(default: int = DEFAULT_STEP_BUDGET) -> int:
    env = os.environ.get("POLYRPC_BUDGET")
    if env:
        try:
            return int(env)
        except ValueError:
            raise InternalError(f"POLYRPC_BUDGET is not an integer: {env!r}")
    return default


# ---------------------------------------------------------------------------
# Relocatable predicate


def valty(ty: CsType) -> bool:
    """True for the types whose values may be shipped between locations."""
    match ty:
        case CTyVar(_) | CBase(_) | CClo(_) | CForallTy(_, _):
            return True
        case CPair(left, right):
            return valty(left) and valty(right)
        case _:
            return False  # monadic, bare function, and bare ∀l types


# ---------------------------------------------------------------------------
# Alpha-aware CS type equality


def cs_types_equal(a: CsType, b: CsType, left: dict | None = None, right: dict | None = None) -> bool:
    left = left or {}
    right = right or {}
    match (a, b):
        case (CBase(x), CBase(y)):
            return x == y
        case (CTyVar(x), CTyVar(y)):
            return left.get(x, x) == right.get(y, y)
        case (CFun(a1, l1, r1), CFun(a2, l2, r2)):
            return (
                _locs_equal(l1, l2, left, right)
                and cs_types_equal(a1, a2, left, right)
                and cs_types_equal(r1, r2, left, right)
            )
        case (CClo(x), CClo(y)) | (CMonad(x), CMonad(y)):
            return cs_types_equal(x, y, left, right)
        case (CPair(a1, b1), CPair(a2, b2)):
            return cs_types_equal(a1, a2, left, right) and cs_types_equal(b1, b2, left, right)
        case (CForallTy(v1, t1), CForallTy(v2, t2)) | (CForallLoc(v1, t1), CForallLoc(v2, t2)):
            mark = object()
            return cs_types_equal(t1, t2, {**left, v1: mark}, {**right, v2: mark})
    return False


def _locs_equal(a: Location, b: Location, left: dict, right: dict) -> bool:
    if isinstance(a, LocVar) and isinstance(b, LocVar):
        return left.get(a.name, a.name) == right.get(b.name, b.name)
    return a == b


def _same_loc(a: Location, b: Location) -> bool:
    return a == b


# ---------------------------------------------------------------------------
# Environments


class CsEnv:
    __slots__ = ("entries",)

    def __init__(self, entries: tuple = ()):
        self.entries = entries

    def bind_loc(self, name: str) -> "CsEnv":
        return CsEnv(self.entries + (("loc", name),))

    def bind_ty(self, name: str) -> "CsEnv":
        return CsEnv(self.entries + (("ty", name),))

    def bind_var(self, name: str, ty: CsType) -> "CsEnv":
        return CsEnv(self.entries + (("var", name, ty),))

    def lookup(self, name: str) -> Optional[CsType]:
        for entry in reversed(self.entries):
            if entry[0] == "var" and entry[1] == name:
                return entry[2]
        return None

    def has_loc(self, name: str) -> bool:
        return any(e[0] == "loc" and e[1] == name for e in self.entries)


CS_EMPTY = CsEnv()


# ---------------------------------------------------------------------------
# Code instantiation


def _instantiate_type(
    ty: CsType, loc_params, loc_args, ty_params, ty_args
) -> CsType:
    # Two-phase simultaneous substitution: params first move to reserved
    # names that cannot occur in user terms, then receive the arguments.
    for i, p in enumerate(loc_params):
        ty = subst_loc_in_cs_ty(ty, p, LocVar(f"%l{i}"))
    for i, p in enumerate(ty_params):
        ty = subst_ty_in_cs_ty(ty, p, CTyVar(f"%t{i}"))
    for i, arg in enumerate(loc_args):
        ty = subst_loc_in_cs_ty(ty, f"%l{i}", arg)
    for i, arg in enumerate(ty_args):
        ty = subst_ty_in_cs_ty(ty, f"%t{i}", arg)
    return ty


def _instantiate_term(
    term: CsTerm, loc_params, loc_args, ty_params, ty_args
) -> CsTerm:
    for i, p in enumerate(loc_params):
        term = subst_loc_in_cs(term, p, LocVar(f"%l{i}"))
    for i, p in enumerate(ty_params):
        term = subst_ty_in_cs(term, p, CTyVar(f"%t{i}"))
    for i, arg in enumerate(loc_args):
        term = subst_loc_in_cs(term, f"%l{i}", arg)
    for i, arg in enumerate(ty_args):
        term = subst_ty_in_cs(term, f"%t{i}", arg)
    return term


def code_function_location(code: Code) -> Optional[Location]:
    """The declared run location of a lambda code; None for ∀l codes."""
    if isinstance(code.open_code, OpenLam):
        if not isinstance(code.result_type, CFun):
            raise TypeCheckError(f"code {code.name} declares a non-function type for a lambda")
        return code.result_type.loc
    return None


def _lookup_ref(program: CsProgram, at: Location, ref: CodeRef) -> Code:
    code = program.code(ref.name)
    if code is None:
        raise TypeCheckError(f"reference to unknown code {ref.name!r}")
    if len(ref.loc_args) != len(code.loc_params) or len(ref.ty_args) != len(code.ty_params):
        raise TypeCheckError(f"code {ref.name!r} instantiated with a wrong-arity prefix")
    loc = code_function_location(code)
    if loc is not None and is_constant(loc):
        # Located code: must live exactly in its own side's map.
        if not program.in_map(loc, ref.name):
            raise TypeCheckError(
                f"code {ref.name!r} located at {loc} is missing from the {loc} map"
            )
    else:
        if ref.name not in program.client_names or ref.name not in program.server_names:
            raise TypeCheckError(
                f"common code {ref.name!r} must appear in both function maps"
            )
    return code


def funtype_of_ref(program: CsProgram, at: Location, ref: CodeRef) -> tuple[tuple[CsType, ...], CsType]:
    """T-F-Abs / T-F-LAbs: the instantiated captured types and code type."""
    code = _lookup_ref(program, at, ref)
    for ty in ref.ty_args:
        if not valty(ty):
            raise TypeCheckError(
                f"non-relocatable type argument {pretty_cs_type(ty)} for code {ref.name!r}"
            )
    for ty in code.env_types:
        if not valty(ty):
            raise TypeCheckError(
                f"non-relocatable captured type {pretty_cs_type(ty)} in code {ref.name!r}"
            )
    env_types = tuple(
        _instantiate_type(t, code.loc_params, ref.loc_args, code.ty_params, ref.ty_args)
        for t in code.env_types
    )
    result = _instantiate_type(
        code.result_type, code.loc_params, ref.loc_args, code.ty_params, ref.ty_args
    )
    return env_types, result


# ---------------------------------------------------------------------------
# Term typing


def typecheck_cs(env: CsEnv, at: Location, term: CsTerm, program: CsProgram) -> CsType:
    match term:
        case CVar(name):
            ty = env.lookup(name)
            if ty is None:
                raise TypeCheckError(f"unbound variable {name!r}")
            return ty
        case CInt(_):
            return CBase("Int")
        case CUnitLit():
            return CBase("Unit")
        case CPairV(left, right):
            return CPair(
                typecheck_cs(env, at, left, program), typecheck_cs(env, at, right, program)
            )
        case Clo(values, ref):
            env_types, result = funtype_of_ref(program, at, ref)
            if len(values) != len(env_types):
                raise TypeCheckError(f"closure of {ref.name!r} captures a wrong-arity environment")
            for value, expected in zip(values, env_types):
                actual = typecheck_cs(env, at, value, program)
                if not cs_types_equal(actual, expected):
                    raise TypeCheckError(
                        f"captured value of {ref.name!r} has type {pretty_cs_type(actual)}, "
                        f"expected {pretty_cs_type(expected)}"
                    )
            return CClo(result)
        case CTAbs(var, body):
            fresh = LocVar("%loc0")
            body_ty = typecheck_cs(env.bind_ty(var).bind_loc(fresh.name), fresh, body, program)
            return CForallTy(var, body_ty)
        case Unit(value):
            ty = typecheck_cs(env, at, value, program)
            if not valty(ty):
                raise TypeCheckError(f"non-relocatable payload under unit: {pretty_cs_type(ty)}")
            return CMonad(ty)
        case Do(var, bound, body):
            bound_ty = typecheck_cs(env, at, bound, program)
            if not isinstance(bound_ty, CMonad):
                raise TypeCheckError(
                    f"do-binding of a non-monadic term of type {pretty_cs_type(bound_ty)}"
                )
            body_ty = typecheck_cs(env.bind_var(var, bound_ty.body), at, body, program)
            if not isinstance(body_ty, CMonad):
                raise TypeCheckError("do body must be monadic")
            return body_ty
        case Req(fun, arg):
            if not isinstance(at, Client):
                raise TypeCheckError("req outside client")
            return _check_remote(env, at, fun, arg, SERVER, program, "req")
        case Call(fun, arg):
            if not isinstance(at, Server):
                raise TypeCheckError("call outside server")
            return _check_remote(env, at, fun, arg, CLIENT, program, "call")
        case Gen(loc, fun, arg):
            if isinstance(loc, LocVar) and not env.has_loc(loc.name):
                raise TypeCheckError(f"unbound location variable {loc.name!r} in gen")
            return _check_remote(env, at, fun, arg, loc, program, "gen")
        case Let(var, bound, body):
            bound_ty = typecheck_cs(env, at, bound, program)
            return typecheck_cs(env.bind_var(var, bound_ty), at, body, program)
        case CProj(index, arg):
            arg_ty = typecheck_cs(env, at, arg, program)
            if not isinstance(arg_ty, CPair):
                raise TypeCheckError(f"projection of a non-pair type {pretty_cs_type(arg_ty)}")
            return arg_ty.left if index == 1 else arg_ty.right
        case CApp(fun, arg):
            fun_ty = typecheck_cs(env, at, fun, program)
            if not (isinstance(fun_ty, CClo) and isinstance(fun_ty.body, CFun)):
                raise TypeCheckError(
                    f"local application of a non-closure type {pretty_cs_type(fun_ty)}"
                )
            if not _same_loc(fun_ty.body.loc, at):
                raise TypeCheckError(
                    f"code located at {fun_ty.body.loc} applied locally at {at}"
                )
            arg_ty = typecheck_cs(env, at, arg, program)
            if not cs_types_equal(arg_ty, fun_ty.body.arg):
                raise TypeCheckError(
                    f"argument type mismatch: expected {pretty_cs_type(fun_ty.body.arg)}, "
                    f"got {pretty_cs_type(arg_ty)}"
                )
            return fun_ty.body.res
        case CTApp(fun, ty):
            fun_ty = typecheck_cs(env, at, fun, program)
            if not isinstance(fun_ty, CForallTy):
                raise TypeCheckError(
                    f"type application of a non-quantified type {pretty_cs_type(fun_ty)}"
                )
            if not valty(ty):
                raise TypeCheckError(
                    f"type application with a non-relocatable argument {pretty_cs_type(ty)}"
                )
            return subst_ty_in_cs_ty(fun_ty.body, fun_ty.var, ty)
        case CLApp(fun, loc):
            fun_ty = typecheck_cs(env, at, fun, program)
            if not (isinstance(fun_ty, CClo) and isinstance(fun_ty.body, CForallLoc)):
                raise TypeCheckError(
                    f"location application of a non-closure type {pretty_cs_type(fun_ty)}"
                )
            return subst_loc_in_cs_ty(fun_ty.body.body, fun_ty.body.var, loc)
    raise InternalError(f"typecheck_cs: unknown term {term!r}")


def _check_remote(env, at, fun, arg, fun_loc: Location, program, what: str) -> CsType:
    fun_ty = typecheck_cs(env, at, fun, program)
    if not (isinstance(fun_ty, CClo) and isinstance(fun_ty.body, CFun)):
        raise TypeCheckError(f"{what} of a non-closure type {pretty_cs_type(fun_ty)}")
    if not _same_loc(fun_ty.body.loc, fun_loc):
        raise TypeCheckError(
            f"{what} expects a function located at {fun_loc}, got {fun_ty.body.loc}"
        )
    if not isinstance(fun_ty.body.res, CMonad):
        raise TypeCheckError(f"{what} of a function with non-monadic result")
    arg_ty = typecheck_cs(env, at, arg, program)
    if not cs_types_equal(arg_ty, fun_ty.body.arg):
        raise TypeCheckError(
            f"argument type mismatch in {what}: expected "
            f"{pretty_cs_type(fun_ty.body.arg)}, got {pretty_cs_type(arg_ty)}"
        )
    if not valty(arg_ty):
        raise TypeCheckError(f"non-relocatable payload in {what}: {pretty_cs_type(arg_ty)}")
    return fun_ty.body.res


# ---------------------------------------------------------------------------
# Program well-formedness (the §-decomposition, checked once per program)


def check_program(program: CsProgram) -> CsType:
    """Well-formedness of the maps plus main's type at the client."""
    seen: set[str] = set()
    for code in program.codes:
        if code.name in seen:
            raise TypeCheckError(f"duplicate code name {code.name!r}")
        seen.add(code.name)
        _check_code(program, code)
    main_ty = typecheck_cs(CS_EMPTY, CLIENT, program.main, program)
    if not isinstance(main_ty, CMonad):
        raise TypeCheckError(
            f"main must be a computation, got {pretty_cs_type(main_ty)}"
        )
    return main_ty


def _check_code(program: CsProgram, code: Code) -> None:
    if len(code.env_params) != len(code.env_types):
        raise TypeCheckError(f"code {code.name!r} prefix arity mismatch")
    env = CS_EMPTY
    for l in code.loc_params:
        env = env.bind_loc(l)
    for a in code.ty_params:
        env = env.bind_ty(a)
    for z, ty in zip(code.env_params, code.env_types):
        if not valty(ty):
            raise TypeCheckError(
                f"code {code.name!r} captures non-relocatable type {pretty_cs_type(ty)}"
            )
        env = env.bind_var(z, ty)
    in_client = code.name in program.client_names
    in_server = code.name in program.server_names
    if isinstance(code.open_code, OpenLam):
        if not isinstance(code.result_type, CFun):
            raise TypeCheckError(f"lambda code {code.name!r} declares a non-function type")
        fun_ty = code.result_type
        loc = fun_ty.loc
        if isinstance(loc, LocVar):
            if not env.has_loc(loc.name):
                raise TypeCheckError(
                    f"code {code.name!r} located at unbound variable {loc.name!r}"
                )
            if not (in_client and in_server):
                raise TypeCheckError(
                    f"variable-located code {code.name!r} must appear in both maps"
                )
        else:
            expect_client = isinstance(loc, Client)
            if in_client != expect_client or in_server == expect_client:
                raise TypeCheckError(
                    f"code {code.name!r} located at {loc} appears in the wrong map(s)"
                )
        body_env = env.bind_var(code.open_code.param, fun_ty.arg)
        body_ty = typecheck_cs(body_env, loc, code.open_code.body, program)
        if not cs_types_equal(body_ty, fun_ty.res):
            raise TypeCheckError(
                f"code {code.name!r} body has type {pretty_cs_type(body_ty)}, "
                f"declared {pretty_cs_type(fun_ty.res)}"
            )
    else:
        if not isinstance(code.result_type, CForallLoc):
            raise TypeCheckError(f"∀l code {code.name!r} declares a non-∀l type")
        if not (in_client and in_server):
            raise TypeCheckError(f"∀l code {code.name!r} must appear in both maps")
        binder = code.open_code.var
        declared = code.result_type
        # Align the two binders, then check the body at an arbitrary
        # (fresh) location, the finite reading of the for-all premise.
        probe = "%lq"
        body = subst_loc_in_cs(code.open_code.body, binder, LocVar(probe))
        expected = subst_loc_in_cs_ty(declared.body, declared.var, LocVar(probe))
        ambient = LocVar("%loc0")
        body_env = env.bind_loc(probe).bind_loc(ambient.name)
        body_ty = typecheck_cs(body_env, ambient, body, program)
        if not cs_types_equal(body_ty, expected):
            raise TypeCheckError(
                f"code {code.name!r} body has type {pretty_cs_type(body_ty)}, "
                f"declared {pretty_cs_type(expected)}"
            )


# ---------------------------------------------------------------------------
# Evaluation contexts, stacks, configurations


@dataclass(frozen=True)
class DoFrame:
    var: str
    rest: CsTerm


@dataclass(frozen=True)
class LetFrame:
    var: str
    rest: CsTerm


Frame = Union[DoFrame, LetFrame]
Context = tuple[Frame, ...]  # outermost frame first
Stack = tuple[Context, ...]  # last element is the top


@dataclass(frozen=True)
class Configuration:
    active: Location  # Client or Server
    term: CsTerm
    client_stack: Stack = ()
    server_stack: Stack = ()

    def pretty(self) -> str:
        c = len(self.client_stack)
        s = len(self.server_stack)
        body = pretty_cs_term(self.term)
        if isinstance(self.active, Client):
            return f"<{body} ; #{c} | #{s}>"
        return f"<#{c} | {body} ; #{s}>"


def plug(frames: Context, term: CsTerm) -> CsTerm:
    for frame in reversed(frames):
        if isinstance(frame, DoFrame):
            term = Do(frame.var, term, frame.rest)
        else:
            term = Let(frame.var, term, frame.rest)
    return term


def decompose(term: CsTerm) -> tuple[Context, CsTerm]:
    """Split into evaluation-context frames and the focused subterm.

    Do-frames force their bound computation; let-frames force their bound
    term only while it is not yet a value (do-blocks are values and get
    bound suspended, per the context grammar).
    """
    frames: list[Frame] = []
    cur = term
    while True:
        if isinstance(cur, Do):
            frames.append(DoFrame(cur.var, cur.body))
            cur = cur.bound
        elif isinstance(cur, Let) and not is_cs_value(cur.bound):
            frames.append(LetFrame(cur.var, cur.body))
            cur = cur.bound
        else:
            return tuple(frames), cur


@dataclass
class CsCounters:
    gen_checks: int = 0
    local_apps: int = 0
    remote_msgs: int = 0


@dataclass(frozen=True)
class StepResult:
    rule: str
    config: Optional[Configuration]  # None when done
    value: Optional[CsValue] = None


def step_cs(config: Configuration, program: CsProgram, counters: Optional[CsCounters] = None) -> StepResult:
    counters = counters if counters is not None else CsCounters()
    side = config.active
    frames, focus = decompose(config.term)

    def local(rule: str, result: CsTerm) -> StepResult:
        new_term = plug(frames, result)
        return StepResult(rule, Configuration(side, new_term, config.client_stack, config.server_stack))

    # Local reduction rules
    if isinstance(focus, Let) and is_cs_value(focus.bound):
        return local("E-Let", subst_cs(focus.body, focus.var, focus.bound))
    if isinstance(focus, Unit) and frames:
        top = frames[-1]
        if not isinstance(top, DoFrame):
            raise StuckError("no rule applies: unit under a let frame")
        result = subst_cs(top.rest, top.var, focus.value)
        new_term = plug(frames[:-1], result)
        return StepResult("E-Do", Configuration(side, new_term, config.client_stack, config.server_stack))
    if isinstance(focus, CProj):
        if not isinstance(focus.arg, CPairV):
            raise StuckError("no rule applies: projection of a non-pair")
        picked = focus.arg.left if focus.index == 1 else focus.arg.right
        return local(f"E-Proj-{focus.index}", picked)
    if isinstance(focus, CTApp):
        if not isinstance(focus.fun, CTAbs):
            raise StuckError("no rule applies: type application of a non-abstraction")
        return local("E-TApp", subst_ty_in_cs(focus.fun.body, focus.fun.var, focus.ty))
    if isinstance(focus, CApp):
        counters.local_apps += 1
        return local("E-App", _apply_closure(program, side, focus.fun, focus.arg))
    if isinstance(focus, CLApp):
        return local("E-LApp", _apply_labs(program, side, focus.fun, focus.loc))

    # Communication rules
    if isinstance(focus, Req):
        if not isinstance(side, Client):
            raise StuckError("no rule applies: req at the server")
        counters.remote_msgs += 1
        return StepResult(
            "E-Req",
            Configuration(
                SERVER,
                CApp(focus.fun, focus.arg),
                config.client_stack + (frames,),
                config.server_stack,
            ),
        )
    if isinstance(focus, Call):
        if not isinstance(side, Server):
            raise StuckError("no rule applies: call at the client")
        counters.remote_msgs += 1
        return StepResult(
            "E-Call",
            Configuration(
                CLIENT,
                CApp(focus.fun, focus.arg),
                config.client_stack,
                config.server_stack + (frames,),
            ),
        )
    if isinstance(focus, Gen):
        if not is_constant(focus.loc):
            raise StuckError(f"no rule applies: gen at unresolved location {focus.loc}")
        counters.gen_checks += 1
        loc_tag = "C" if isinstance(focus.loc, Client) else "S"
        side_tag = "C" if isinstance(side, Client) else "S"
        if focus.loc == side:
            replacement: CsTerm = CApp(focus.fun, focus.arg)
        elif isinstance(side, Client):
            replacement = Req(focus.fun, focus.arg)
        else:
            replacement = Call(focus.fun, focus.arg)
        return StepResult(
            f"E-Gen-{loc_tag}-{side_tag}",
            Configuration(side, plug(frames, replacement), config.client_stack, config.server_stack),
        )
    if isinstance(focus, Unit) and not frames:
        if isinstance(side, Client):
            if config.server_stack:
                top = config.server_stack[-1]
                counters.remote_msgs += 1
                return StepResult(
                    "E-Unit-C",
                    Configuration(
                        SERVER,
                        plug(top, focus),
                        config.client_stack,
                        config.server_stack[:-1],
                    ),
                )
            if config.client_stack:
                raise StuckError("unbalanced stacks: client returns with no server context")
            return StepResult("Done", None, focus.value)
        else:
            if config.client_stack:
                top = config.client_stack[-1]
                counters.remote_msgs += 1
                return StepResult(
                    "E-Unit-S",
                    Configuration(
                        CLIENT,
                        plug(top, focus),
                        config.client_stack[:-1],
                        config.server_stack,
                    ),
                )
            if config.server_stack:
                raise StuckError("unbalanced stacks: server returns with no client context")
            counters.remote_msgs += 1
            return StepResult("E-Unit-S-E", Configuration(CLIENT, focus, (), ()))

    raise StuckError(f"no rule applies to focus: {pretty_cs_term(focus)}")


def _apply_closure(program: CsProgram, side: Location, fun: CsValue, arg: CsValue) -> CsTerm:
    if not isinstance(fun, Clo):
        raise StuckError("no rule applies: local application of a non-closure")
    ref = fun.ref
    if not program.in_map(side, ref.name):
        raise MissingCodeError(f"stuck: missing code {ref.name!r} at location {side}")
    code = program.code(ref.name)
    if code is None or not isinstance(code.open_code, OpenLam):
        raise StuckError(f"no rule applies: code {ref.name!r} is not a lambda")
    body = _instantiate_term(
        code.open_code.body, code.loc_params, ref.loc_args, code.ty_params, ref.ty_args
    )
    if len(fun.env) != len(code.env_params):
        raise InternalError(f"closure of {ref.name!r} has a wrong-arity environment")
    for z, w in zip(code.env_params, fun.env):
        body = subst_cs(body, z, w)
    return subst_cs(body, code.open_code.param, arg)


def _apply_labs(program: CsProgram, side: Location, fun: CsValue, loc: Location) -> CsTerm:
    if not isinstance(fun, Clo):
        raise StuckError("no rule applies: location application of a non-closure")
    ref = fun.ref
    if not program.in_map(side, ref.name):
        raise MissingCodeError(f"stuck: missing code {ref.name!r} at location {side}")
    code = program.code(ref.name)
    if code is None or not isinstance(code.open_code, OpenLAbs):
        raise StuckError(f"no rule applies: code {ref.name!r} is not a location abstraction")
    body = _instantiate_term(
        code.open_code.body, code.loc_params, ref.loc_args, code.ty_params, ref.ty_args
    )
    if len(fun.env) != len(code.env_params):
        raise InternalError(f"closure of {ref.name!r} has a wrong-arity environment")
    for z, w in zip(code.env_params, fun.env):
        body = subst_cs(body, z, w)
    return subst_loc_in_cs(body, code.open_code.var, loc)


# ---------------------------------------------------------------------------
# Stack and configuration typing


HOLE = "%hole"


def typecheck_config(config: Configuration, program: CsProgram) -> CsType:
    """Type a configuration by the alternating stack-typing discipline."""
    side = config.active
    ty = typecheck_cs(CS_EMPTY, side, config.term, program)
    if not isinstance(ty, CMonad):
        raise TypeCheckError(f"active term is not a computation: {pretty_cs_type(ty)}")
    view = side
    cstack = list(config.client_stack)
    sstack = list(config.server_stack)
    current: CsType = ty
    while cstack or sstack:
        if isinstance(view, Client):
            if not sstack:
                raise TypeCheckError("unbalanced stacks")
            context = sstack.pop()
            view = SERVER
        else:
            if not cstack:
                raise TypeCheckError("unbalanced stacks")
            context = cstack.pop()
            view = CLIENT
        filled = plug(context, CVar(HOLE))
        current = typecheck_cs(CS_EMPTY.bind_var(HOLE, current), view, filled, program)
        if not isinstance(current, CMonad):
            raise TypeCheckError("stacked context does not produce a computation")
    return current


# ---------------------------------------------------------------------------
# Driver


def run_cs(
    program: CsProgram,
    verify: bool = False,
    counters: Optional[CsCounters] = None,
    budget: Optional[int] = None,
    trace: Optional[Callable[[str], None]] = None,
) -> CsValue:
    """Iterate the machine from <main; ε | ε> to <unit V; ε | ε>."""
    counters = counters if counters is not None else CsCounters()
    budget = budget if budget is not None else step_budget()
    config = Configuration(CLIENT, program.main)
    expected_ty: Optional[CsType] = None
    if verify:
        expected_ty = typecheck_config(config, program)
    for _ in range(budget):
        result = step_cs(config, program, counters)
        if result.rule == "Done":
            return result.value
        config = result.config
        if trace is not None:
            side = "client" if isinstance(config.active, Client) else "server"
            trace(
                f"{result.rule:<12} {side:<6} "
                f"c={len(config.client_stack)} s={len(config.server_stack)}  "
                f"{pretty_cs_term(config.term)}"
            )
        if verify:
            now = typecheck_config(config, program)
            if not cs_types_equal(now, expected_ty):
                raise InternalError(
                    "configuration type changed under evaluation: "
                    f"{pretty_cs_type(expected_ty)} -> {pretty_cs_type(now)}"
                )
    raise BudgetExceeded(f"step budget of {budget} exhausted (possible divergence)")
