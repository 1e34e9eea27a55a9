"""Abstract syntax of the polymorphic client-server calculus.

Programs are a main computation plus named codes shared between two
per-location maps. Codes abstract over location variables, type
variables, and captured values; closures name a code and instantiate
its location/type prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import InternalError
from .syntax import (
    CLIENT,
    Client,
    LocVar,
    Location,
    SERVER,
    Server,
    fresh_name,
    is_constant,
)


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class CBase:
    name: str  # "Int" | "Unit"


@dataclass(frozen=True)
class CTyVar:
    name: str


@dataclass(frozen=True)
class CFun:
    arg: "CsType"
    loc: Location
    res: "CsType"


@dataclass(frozen=True)
class CClo:
    body: "CsType"


@dataclass(frozen=True)
class CPair:
    left: "CsType"
    right: "CsType"


@dataclass(frozen=True)
class CForallTy:
    var: str
    body: "CsType"


@dataclass(frozen=True)
class CForallLoc:
    var: str
    body: "CsType"


@dataclass(frozen=True)
class CMonad:
    body: "CsType"


CsType = Union[CBase, CTyVar, CFun, CClo, CPair, CForallTy, CForallLoc, CMonad]

C_INT = CBase("Int")
C_UNIT = CBase("Unit")


# ---------------------------------------------------------------------------
# Terms and values


@dataclass(frozen=True)
class CVar:
    name: str


@dataclass(frozen=True)
class CInt:
    value: int


@dataclass(frozen=True)
class CUnitLit:
    pass


@dataclass(frozen=True)
class CPairV:
    left: "CsValue"
    right: "CsValue"


@dataclass(frozen=True)
class CodeRef:
    name: str
    loc_args: tuple[Location, ...] = ()
    ty_args: tuple[CsType, ...] = ()


@dataclass(frozen=True)
class Clo:
    env: tuple["CsValue", ...]
    ref: CodeRef


@dataclass(frozen=True)
class CTAbs:
    var: str
    body: "CsValue"


@dataclass(frozen=True)
class Unit:
    value: "CsValue"


@dataclass(frozen=True)
class Do:
    var: str
    bound: "CsTerm"
    body: "CsTerm"


@dataclass(frozen=True)
class Req:
    fun: "CsValue"
    arg: "CsValue"


@dataclass(frozen=True)
class Call:
    fun: "CsValue"
    arg: "CsValue"


@dataclass(frozen=True)
class Gen:
    loc: Location
    fun: "CsValue"
    arg: "CsValue"


CsValue = Union[CVar, CInt, CUnitLit, CPairV, Clo, CTAbs, Unit, Do, Req, Call, Gen]


@dataclass(frozen=True)
class Let:
    var: str
    bound: "CsTerm"
    body: "CsTerm"


@dataclass(frozen=True)
class CProj:
    index: int
    arg: "CsValue"


@dataclass(frozen=True)
class CApp:
    fun: "CsValue"
    arg: "CsValue"


@dataclass(frozen=True)
class CTApp:
    fun: "CsValue"
    ty: CsType


@dataclass(frozen=True)
class CLApp:
    fun: "CsValue"
    loc: Location


CsTerm = Union[CsValue, Let, CProj, CApp, CTApp, CLApp]


def is_cs_value(term: CsTerm) -> bool:
    return isinstance(
        term, (CVar, CInt, CUnitLit, CPairV, Clo, CTAbs, Unit, Do, Req, Call, Gen)
    )


def is_plain_value(term: CsTerm) -> bool:
    """Plain (non-monadic) values; the only ones that cross locations."""
    if isinstance(term, (CVar, CInt, CUnitLit, Clo, CTAbs)):
        return True
    if isinstance(term, CPairV):
        return is_plain_value(term.left) and is_plain_value(term.right)
    return False


# ---------------------------------------------------------------------------
# Codes and programs


@dataclass(frozen=True)
class OpenLam:
    param: str
    body: CsTerm


@dataclass(frozen=True)
class OpenLAbs:
    var: str
    body: CsValue


OpenCode = Union[OpenLam, OpenLAbs]


@dataclass(frozen=True)
class Code:
    """`l̄ ᾱ. z̄. OpenCode` plus its declared type prefix."""

    name: str
    loc_params: tuple[str, ...]
    ty_params: tuple[str, ...]
    env_params: tuple[str, ...]
    env_types: tuple[CsType, ...]
    result_type: CsType  # a function type for OpenLam, a ∀l type for OpenLAbs
    open_code: OpenCode


@dataclass(frozen=True)
class CsProgram:
    main: CsTerm
    codes: tuple[Code, ...]
    client_names: frozenset[str]
    server_names: frozenset[str]

    def code(self, name: str) -> Optional[Code]:
        for c in self.codes:
            if c.name == name:
                return c
        return None

    def in_map(self, side: Location, name: str) -> bool:
        if isinstance(side, Client):
            return name in self.client_names
        if isinstance(side, Server):
            return name in self.server_names
        raise InternalError(f"in_map: not a constant side: {side}")


# ---------------------------------------------------------------------------
# Free variables and substitution over CS terms


def cs_free_vars(term: CsTerm) -> set[str]:
    match term:
        case CVar(name):
            return {name}
        case CInt(_) | CUnitLit():
            return set()
        case CPairV(left, right):
            return cs_free_vars(left) | cs_free_vars(right)
        case Clo(env, _):
            out: set[str] = set()
            for v in env:
                out |= cs_free_vars(v)
            return out
        case CTAbs(_, body):
            return cs_free_vars(body)
        case Unit(value):
            return cs_free_vars(value)
        case Do(var, bound, body) | Let(var, bound, body):
            return cs_free_vars(bound) | (cs_free_vars(body) - {var})
        case Req(fun, arg) | Call(fun, arg) | CApp(fun, arg):
            return cs_free_vars(fun) | cs_free_vars(arg)
        case Gen(_, fun, arg):
            return cs_free_vars(fun) | cs_free_vars(arg)
        case CProj(_, arg):
            return cs_free_vars(arg)
        case CTApp(fun, _) | CLApp(fun, _):
            return cs_free_vars(fun)
    raise InternalError(f"cs_free_vars: unknown term {term!r}")


def subst_cs(term: CsTerm, var: str, repl: CsValue) -> CsTerm:
    """Capture-avoiding value substitution over CS terms."""
    match term:
        case CVar(name):
            return repl if name == var else term
        case CInt(_) | CUnitLit():
            return term
        case CPairV(left, right):
            return CPairV(subst_cs(left, var, repl), subst_cs(right, var, repl))
        case Clo(env, ref):
            return Clo(tuple(subst_cs(v, var, repl) for v in env), ref)
        case CTAbs(v, body):
            return CTAbs(v, subst_cs(body, var, repl))
        case Unit(value):
            return Unit(subst_cs(value, var, repl))
        case Do(v, bound, body):
            bound = subst_cs(bound, var, repl)
            if v == var:
                return Do(v, bound, body)
            if v in cs_free_vars(repl):
                fresh = fresh_name(v, cs_free_vars(body) | cs_free_vars(repl) | {var})
                body = subst_cs(body, v, CVar(fresh))
                return Do(fresh, bound, subst_cs(body, var, repl))
            return Do(v, bound, subst_cs(body, var, repl))
        case Let(v, bound, body):
            bound = subst_cs(bound, var, repl)
            if v == var:
                return Let(v, bound, body)
            if v in cs_free_vars(repl):
                fresh = fresh_name(v, cs_free_vars(body) | cs_free_vars(repl) | {var})
                body = subst_cs(body, v, CVar(fresh))
                return Let(fresh, bound, subst_cs(body, var, repl))
            return Let(v, bound, subst_cs(body, var, repl))
        case Req(fun, arg):
            return Req(subst_cs(fun, var, repl), subst_cs(arg, var, repl))
        case Call(fun, arg):
            return Call(subst_cs(fun, var, repl), subst_cs(arg, var, repl))
        case Gen(loc, fun, arg):
            return Gen(loc, subst_cs(fun, var, repl), subst_cs(arg, var, repl))
        case CProj(i, arg):
            return CProj(i, subst_cs(arg, var, repl))
        case CApp(fun, arg):
            return CApp(subst_cs(fun, var, repl), subst_cs(arg, var, repl))
        case CTApp(fun, ty):
            return CTApp(subst_cs(fun, var, repl), ty)
        case CLApp(fun, loc):
            return CLApp(subst_cs(fun, var, repl), loc)
    raise InternalError(f"subst_cs: unknown term {term!r}")


def subst_loc_in_cs_ty(ty: CsType, var: str, repl: Location) -> CsType:
    match ty:
        case CBase(_) | CTyVar(_):
            return ty
        case CFun(arg, loc, res):
            new_loc = repl if isinstance(loc, LocVar) and loc.name == var else loc
            return CFun(subst_loc_in_cs_ty(arg, var, repl), new_loc, subst_loc_in_cs_ty(res, var, repl))
        case CClo(body):
            return CClo(subst_loc_in_cs_ty(body, var, repl))
        case CPair(left, right):
            return CPair(subst_loc_in_cs_ty(left, var, repl), subst_loc_in_cs_ty(right, var, repl))
        case CForallTy(v, body):
            return CForallTy(v, subst_loc_in_cs_ty(body, var, repl))
        case CForallLoc(v, body):
            if v == var:
                return ty
            if isinstance(repl, LocVar) and v == repl.name:
                fresh = fresh_name(v, cs_ty_free_locs(body) | {var, repl.name})
                body = subst_loc_in_cs_ty(body, v, LocVar(fresh))
                return CForallLoc(fresh, subst_loc_in_cs_ty(body, var, repl))
            return CForallLoc(v, subst_loc_in_cs_ty(body, var, repl))
        case CMonad(body):
            return CMonad(subst_loc_in_cs_ty(body, var, repl))
    raise InternalError(f"subst_loc_in_cs_ty: unknown type {ty!r}")


def subst_ty_in_cs_ty(ty: CsType, var: str, repl: CsType) -> CsType:
    match ty:
        case CBase(_):
            return ty
        case CTyVar(name):
            return repl if name == var else ty
        case CFun(arg, loc, res):
            return CFun(subst_ty_in_cs_ty(arg, var, repl), loc, subst_ty_in_cs_ty(res, var, repl))
        case CClo(body):
            return CClo(subst_ty_in_cs_ty(body, var, repl))
        case CPair(left, right):
            return CPair(subst_ty_in_cs_ty(left, var, repl), subst_ty_in_cs_ty(right, var, repl))
        case CForallTy(v, body):
            if v == var:
                return ty
            if v in cs_ty_free_tyvars(repl):
                fresh = fresh_name(v, cs_ty_free_tyvars(body) | cs_ty_free_tyvars(repl) | {var})
                body = subst_ty_in_cs_ty(body, v, CTyVar(fresh))
                return CForallTy(fresh, subst_ty_in_cs_ty(body, var, repl))
            return CForallTy(v, subst_ty_in_cs_ty(body, var, repl))
        case CForallLoc(v, body):
            if v in cs_ty_free_locs(repl):
                fresh = fresh_name(v, cs_ty_free_locs(body) | cs_ty_free_locs(repl))
                body = subst_loc_in_cs_ty(body, v, LocVar(fresh))
                return CForallLoc(fresh, subst_ty_in_cs_ty(body, var, repl))
            return CForallLoc(v, subst_ty_in_cs_ty(body, var, repl))
        case CMonad(body):
            return CMonad(subst_ty_in_cs_ty(body, var, repl))
    raise InternalError(f"subst_ty_in_cs_ty: unknown type {ty!r}")


def cs_ty_free_tyvars(ty: CsType) -> set[str]:
    match ty:
        case CBase(_):
            return set()
        case CTyVar(name):
            return {name}
        case CFun(arg, _, res) | CPair(arg, res):
            return cs_ty_free_tyvars(arg) | cs_ty_free_tyvars(res)
        case CClo(body) | CMonad(body) | CForallLoc(_, body):
            return cs_ty_free_tyvars(body)
        case CForallTy(v, body):
            return cs_ty_free_tyvars(body) - {v}
    raise InternalError(f"cs_ty_free_tyvars: unknown type {ty!r}")


def cs_ty_free_locs(ty: CsType) -> set[str]:
    match ty:
        case CBase(_) | CTyVar(_):
            return set()
        case CFun(arg, loc, res):
            out = cs_ty_free_locs(arg) | cs_ty_free_locs(res)
            if isinstance(loc, LocVar):
                out |= {loc.name}
            return out
        case CPair(left, right):
            return cs_ty_free_locs(left) | cs_ty_free_locs(right)
        case CClo(body) | CMonad(body) | CForallTy(_, body):
            return cs_ty_free_locs(body)
        case CForallLoc(v, body):
            return cs_ty_free_locs(body) - {v}
    raise InternalError(f"cs_ty_free_locs: unknown type {ty!r}")


def subst_loc_in_cs(term: CsTerm, var: str, repl: Location) -> CsTerm:
    """Location substitution over CS terms (code instantiation)."""

    def on_loc(loc: Location) -> Location:
        if isinstance(loc, LocVar) and loc.name == var:
            return repl
        return loc

    match term:
        case CVar(_) | CInt(_) | CUnitLit():
            return term
        case CPairV(left, right):
            return CPairV(subst_loc_in_cs(left, var, repl), subst_loc_in_cs(right, var, repl))
        case Clo(env, ref):
            return Clo(
                tuple(subst_loc_in_cs(v, var, repl) for v in env),
                CodeRef(
                    ref.name,
                    tuple(on_loc(l) for l in ref.loc_args),
                    tuple(subst_loc_in_cs_ty(t, var, repl) for t in ref.ty_args),
                ),
            )
        case CTAbs(v, body):
            return CTAbs(v, subst_loc_in_cs(body, var, repl))
        case Unit(value):
            return Unit(subst_loc_in_cs(value, var, repl))
        case Do(v, bound, body):
            return Do(v, subst_loc_in_cs(bound, var, repl), subst_loc_in_cs(body, var, repl))
        case Let(v, bound, body):
            return Let(v, subst_loc_in_cs(bound, var, repl), subst_loc_in_cs(body, var, repl))
        case Req(fun, arg):
            return Req(subst_loc_in_cs(fun, var, repl), subst_loc_in_cs(arg, var, repl))
        case Call(fun, arg):
            return Call(subst_loc_in_cs(fun, var, repl), subst_loc_in_cs(arg, var, repl))
        case Gen(loc, fun, arg):
            return Gen(on_loc(loc), subst_loc_in_cs(fun, var, repl), subst_loc_in_cs(arg, var, repl))
        case CProj(i, arg):
            return CProj(i, subst_loc_in_cs(arg, var, repl))
        case CApp(fun, arg):
            return CApp(subst_loc_in_cs(fun, var, repl), subst_loc_in_cs(arg, var, repl))
        case CTApp(fun, ty):
            return CTApp(subst_loc_in_cs(fun, var, repl), subst_loc_in_cs_ty(ty, var, repl))
        case CLApp(fun, loc):
            return CLApp(subst_loc_in_cs(fun, var, repl), on_loc(loc))
    raise InternalError(f"subst_loc_in_cs: unknown term {term!r}")


def subst_ty_in_cs(term: CsTerm, var: str, repl: CsType) -> CsTerm:
    """Type substitution over CS terms (E-TApp and code instantiation)."""
    match term:
        case CVar(_) | CInt(_) | CUnitLit():
            return term
        case CPairV(left, right):
            return CPairV(subst_ty_in_cs(left, var, repl), subst_ty_in_cs(right, var, repl))
        case Clo(env, ref):
            return Clo(
                tuple(subst_ty_in_cs(v, var, repl) for v in env),
                CodeRef(
                    ref.name,
                    ref.loc_args,
                    tuple(subst_ty_in_cs_ty(t, var, repl) for t in ref.ty_args),
                ),
            )
        case CTAbs(v, body):
            if v == var:
                return term
            return CTAbs(v, subst_ty_in_cs(body, var, repl))
        case Unit(value):
            return Unit(subst_ty_in_cs(value, var, repl))
        case Do(v, bound, body):
            return Do(v, subst_ty_in_cs(bound, var, repl), subst_ty_in_cs(body, var, repl))
        case Let(v, bound, body):
            return Let(v, subst_ty_in_cs(bound, var, repl), subst_ty_in_cs(body, var, repl))
        case Req(fun, arg):
            return Req(subst_ty_in_cs(fun, var, repl), subst_ty_in_cs(arg, var, repl))
        case Call(fun, arg):
            return Call(subst_ty_in_cs(fun, var, repl), subst_ty_in_cs(arg, var, repl))
        case Gen(loc, fun, arg):
            return Gen(loc, subst_ty_in_cs(fun, var, repl), subst_ty_in_cs(arg, var, repl))
        case CProj(i, arg):
            return CProj(i, subst_ty_in_cs(arg, var, repl))
        case CApp(fun, arg):
            return CApp(subst_ty_in_cs(fun, var, repl), subst_ty_in_cs(arg, var, repl))
        case CTApp(fun, ty):
            return CTApp(subst_ty_in_cs(fun, var, repl), subst_ty_in_cs_ty(ty, var, repl))
        case CLApp(fun, loc):
            return CLApp(subst_ty_in_cs(fun, var, repl), loc)
    raise InternalError(f"subst_ty_in_cs: unknown term {term!r}")


# ---------------------------------------------------------------------------
# Node counting (for the linear-size-bound check) and pretty-printing


def cs_term_nodes(term: CsTerm) -> int:
    match term:
        case CVar(_) | CInt(_) | CUnitLit():
            return 1
        case CPairV(left, right):
            return 1 + cs_term_nodes(left) + cs_term_nodes(right)
        case Clo(env, _):
            return 1 + sum(cs_term_nodes(v) for v in env)
        case CTAbs(_, body) | Unit(body):
            return 1 + cs_term_nodes(body)
        case Do(_, bound, body) | Let(_, bound, body):
            return 1 + cs_term_nodes(bound) + cs_term_nodes(body)
        case Req(fun, arg) | Call(fun, arg) | CApp(fun, arg):
            return 1 + cs_term_nodes(fun) + cs_term_nodes(arg)
        case Gen(_, fun, arg):
            return 2 + cs_term_nodes(fun) + cs_term_nodes(arg)
        case CProj(_, arg):
            return 1 + cs_term_nodes(arg)
        case CTApp(fun, _):
            return 1 + cs_term_nodes(fun)
        case CLApp(fun, _):
            return 2 + cs_term_nodes(fun)
    raise InternalError(f"cs_term_nodes: unknown term {term!r}")


def cs_program_nodes(program: CsProgram) -> int:
    total = cs_term_nodes(program.main)
    for code in program.codes:
        body = code.open_code.body
        total += 1 + cs_term_nodes(body)
    return total


def count_gen_nodes(program: CsProgram) -> int:
    def in_term(term: CsTerm) -> int:
        match term:
            case Gen(_, fun, arg):
                return 1 + in_term(fun) + in_term(arg)
            case CVar(_) | CInt(_) | CUnitLit():
                return 0
            case CPairV(a, b) | Req(a, b) | Call(a, b) | CApp(a, b):
                return in_term(a) + in_term(b)
            case Clo(env, _):
                return sum(in_term(v) for v in env)
            case CTAbs(_, body) | Unit(body) | CProj(_, body) | CTApp(body, _) | CLApp(body, _):
                return in_term(body)
            case Do(_, bound, body) | Let(_, bound, body):
                return in_term(bound) + in_term(body)
        raise InternalError(f"count_gen_nodes: unknown term {term!r}")

    total = in_term(program.main)
    for code in program.codes:
        total += in_term(code.open_code.body)
    return total


def pretty_cs_type(ty: CsType, prec: int = 0) -> str:
    match ty:
        case CBase(name):
            return name
        case CTyVar(name):
            return name
        case CFun(arg, loc, res):
            text = f"{pretty_cs_type(arg, 2)} -{loc}-> {pretty_cs_type(res, 1)}"
            return f"({text})" if prec > 1 else text
        case CClo(body):
            return f"Clo({pretty_cs_type(body)})"
        case CPair(left, right):
            return f"({pretty_cs_type(left)}, {pretty_cs_type(right)})"
        case CForallTy(var, body):
            text = f"[{var}]. {pretty_cs_type(body)}"
            return f"({text})" if prec > 0 else text
        case CForallLoc(var, body):
            text = f"{{{var}}}. {pretty_cs_type(body)}"
            return f"({text})" if prec > 0 else text
        case CMonad(body):
            text = f"T {pretty_cs_type(body, 2)}"
            return f"({text})" if prec > 1 else text
    raise InternalError(f"pretty_cs_type: unknown type {ty!r}")


def pretty_code_ref(ref: CodeRef) -> str:
    args = [str(l) for l in ref.loc_args] + [pretty_cs_type(t) for t in ref.ty_args]
    if not args:
        return ref.name
    return f"{ref.name}[{', '.join(args)}]"


def pretty_cs_term(term: CsTerm, prec: int = 0) -> str:
    # prec 0: do/let sequences; 1: operands.
    match term:
        case CVar(name):
            return name
        case CInt(value):
            return str(value)
        case CUnitLit():
            return "()"
        case CPairV(left, right):
            return f"({pretty_cs_term(left)}, {pretty_cs_term(right)})"
        case Clo(env, ref):
            inner = ", ".join(pretty_cs_term(v) for v in env)
            return f"clo([{inner}], {pretty_code_ref(ref)})"
        case CTAbs(var, body):
            text = f"[{var}]. {pretty_cs_term(body)}"
            return f"({text})" if prec > 0 else text
        case Unit(value):
            return f"unit {pretty_cs_term(value, 2)}"
        case Do(var, bound, body):
            text = f"do {var} <- {pretty_cs_term(bound, 1)}; {pretty_cs_term(body)}"
            return f"({text})" if prec > 0 else text
        case Let(var, bound, body):
            text = f"let {var} = {pretty_cs_term(bound, 1)}; {pretty_cs_term(body)}"
            return f"({text})" if prec > 0 else text
        case Req(fun, arg):
            return f"req({pretty_cs_term(fun)}, {pretty_cs_term(arg)})"
        case Call(fun, arg):
            return f"call({pretty_cs_term(fun)}, {pretty_cs_term(arg)})"
        case Gen(loc, fun, arg):
            return f"gen({loc}, {pretty_cs_term(fun)}, {pretty_cs_term(arg)})"
        case CProj(index, arg):
            word = "fst" if index == 1 else "snd"
            return f"{word} {pretty_cs_term(arg, 2)}"
        case CApp(fun, arg):
            return f"{pretty_cs_term(fun, 2)}({pretty_cs_term(arg)})"
        case CTApp(fun, ty):
            return f"{pretty_cs_term(fun, 2)} [{pretty_cs_type(ty)}]"
        case CLApp(fun, loc):
            return f"{pretty_cs_term(fun, 2)} {{{loc}}}"
    raise InternalError(f"pretty_cs_term: unknown term {term!r}")


def pretty_open_code(code: Code) -> str:
    locs = " ".join(code.loc_params) or "."
    tys = " ".join(code.ty_params) or "."
    envs = " ".join(code.env_params) or "."
    if isinstance(code.open_code, OpenLam):
        inner = f"\\{code.open_code.param}. {pretty_cs_term(code.open_code.body)}"
    else:
        inner = f"{{{code.open_code.var}}}. {pretty_cs_term(code.open_code.body)}"
    return f"{locs} {tys} {envs} {inner}"


def pretty_cs_program(program: CsProgram) -> str:
    lines = [f"main = {pretty_cs_term(program.main)}", ""]
    for code in program.codes:
        sides = []
        if code.name in program.client_names:
            sides.append("client")
        if code.name in program.server_names:
            sides.append("server")
        prefix = " ".join(code.loc_params) or "."
        typrefix = " ".join(code.ty_params) or "."
        envtys = ", ".join(pretty_cs_type(t) for t in code.env_types) or "."
        lines.append(
            f"{code.name} @ {','.join(sides)} : {prefix} {typrefix} [{envtys}] {pretty_cs_type(code.result_type)}"
        )
        lines.append(f"  = {pretty_open_code(code)}")
    return "\n".join(lines) + "\n"
