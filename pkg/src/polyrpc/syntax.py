"""Abstract syntax of the source calculus.

Terms, types and locations, capture-avoiding substitution, free-variable
sets, top-level definition desugaring, and the frozen node-count
convention. The concrete syntax lives in `surface`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import InternalError


@dataclass(frozen=True)
class Span:
    """Source range for diagnostics. Term equality ignores spans (the
    span fields below are declared with compare=False)."""

    file: str
    line: int
    col: int
    end_line: int
    end_col: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col}"


def _span_field():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Locations


@dataclass(frozen=True)
class Client:
    def __str__(self) -> str:
        return "client"


@dataclass(frozen=True)
class Server:
    def __str__(self) -> str:
        return "server"


@dataclass(frozen=True)
class LocVar:
    name: str

    def __str__(self) -> str:
        return self.name


Location = Union[Client, Server, LocVar]

CLIENT = Client()
SERVER = Server()


def is_constant(loc: Location) -> bool:
    return isinstance(loc, (Client, Server))


def other_side(loc: Location) -> Location:
    if isinstance(loc, Client):
        return SERVER
    if isinstance(loc, Server):
        return CLIENT
    raise InternalError(f"no opposite side for location variable {loc}")


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class BaseTy:
    name: str  # "Int" | "Unit"

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class TyVar:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class FunTy:
    arg: "RpcType"
    loc: Location
    res: "RpcType"


@dataclass(frozen=True)
class PairTy:
    left: "RpcType"
    right: "RpcType"


@dataclass(frozen=True)
class ForallTy:
    var: str
    body: "RpcType"


@dataclass(frozen=True)
class ForallLoc:
    var: str
    body: "RpcType"


RpcType = Union[BaseTy, TyVar, FunTy, PairTy, ForallTy, ForallLoc]

INT = BaseTy("Int")
UNIT = BaseTy("Unit")


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class Var:
    name: str
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class IntLit:
    value: int
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class UnitLit:
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class Lam:
    loc: Location
    param: str
    annot: RpcType
    body: "RpcTerm"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class TAbs:
    var: str
    body: "RpcTerm"  # must be a syntactic value; checked by the type checker
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class LAbs:
    var: str
    body: "RpcTerm"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class App:
    fun: "RpcTerm"
    arg: "RpcTerm"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class TApp:
    fun: "RpcTerm"
    ty: RpcType
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class LApp:
    fun: "RpcTerm"
    loc: Location
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class Pair:
    left: "RpcTerm"
    right: "RpcTerm"
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class Proj:
    index: int  # 1 or 2
    arg: "RpcTerm"
    span: Optional[Span] = _span_field()


RpcTerm = Union[
    Var, IntLit, UnitLit, Lam, TAbs, LAbs, App, TApp, LApp, Pair, Proj
]


@dataclass(frozen=True)
class Def:
    name: str
    declared_type: RpcType
    body: RpcTerm
    span: Optional[Span] = _span_field()


@dataclass(frozen=True)
class SourceProgram:
    defs: tuple[Def, ...]
    main: RpcTerm


def is_value(term: RpcTerm) -> bool:
    """Syntactic values per the source grammar (literals included)."""
    if isinstance(term, (Var, IntLit, UnitLit, Lam, TAbs, LAbs)):
        return True
    if isinstance(term, Pair):
        return is_value(term.left) and is_value(term.right)
    return False


# ---------------------------------------------------------------------------
# Free variables


def free_vars(term: RpcTerm) -> set[str]:
    match term:
        case Var(name):
            return {name}
        case IntLit() | UnitLit():
            return set()
        case Lam(_, param, _, body):
            return free_vars(body) - {param}
        case TAbs(_, body) | LAbs(_, body):
            return free_vars(body)
        case App(fun, arg) | Pair(fun, arg):
            return free_vars(fun) | free_vars(arg)
        case TApp(fun, _) | LApp(fun, _):
            return free_vars(fun)
        case Proj(_, arg):
            return free_vars(arg)
    raise InternalError(f"free_vars: unknown term {term!r}")


def free_ty_vars_ty(ty: RpcType) -> set[str]:
    match ty:
        case BaseTy(_):
            return set()
        case TyVar(name):
            return {name}
        case FunTy(arg, _, res) | PairTy(arg, res):
            return free_ty_vars_ty(arg) | free_ty_vars_ty(res)
        case ForallTy(var, body):
            return free_ty_vars_ty(body) - {var}
        case ForallLoc(_, body):
            return free_ty_vars_ty(body)
    raise InternalError(f"free_ty_vars_ty: unknown type {ty!r}")


def free_loc_vars_ty(ty: RpcType) -> set[str]:
    match ty:
        case BaseTy(_) | TyVar(_):
            return set()
        case FunTy(arg, loc, res):
            out = free_loc_vars_ty(arg) | free_loc_vars_ty(res)
            if isinstance(loc, LocVar):
                out |= {loc.name}
            return out
        case PairTy(left, right):
            return free_loc_vars_ty(left) | free_loc_vars_ty(right)
        case ForallTy(_, body):
            return free_loc_vars_ty(body)
        case ForallLoc(var, body):
            return free_loc_vars_ty(body) - {var}
    raise InternalError(f"free_loc_vars_ty: unknown type {ty!r}")


def free_ty_vars(term: RpcTerm) -> set[str]:
    match term:
        case Var(_) | IntLit() | UnitLit():
            return set()
        case Lam(_, _, annot, body):
            return free_ty_vars_ty(annot) | free_ty_vars(body)
        case TAbs(var, body):
            return free_ty_vars(body) - {var}
        case LAbs(_, body):
            return free_ty_vars(body)
        case App(fun, arg) | Pair(fun, arg):
            return free_ty_vars(fun) | free_ty_vars(arg)
        case TApp(fun, ty):
            return free_ty_vars(fun) | free_ty_vars_ty(ty)
        case LApp(fun, _):
            return free_ty_vars(fun)
        case Proj(_, arg):
            return free_ty_vars(arg)
    raise InternalError(f"free_ty_vars: unknown term {term!r}")


def free_loc_vars(term: RpcTerm) -> set[str]:
    match term:
        case Var(_) | IntLit() | UnitLit():
            return set()
        case Lam(loc, _, annot, body):
            out = free_loc_vars_ty(annot) | free_loc_vars(body)
            if isinstance(loc, LocVar):
                out |= {loc.name}
            return out
        case TAbs(_, body):
            return free_loc_vars(body)
        case LAbs(var, body):
            return free_loc_vars(body) - {var}
        case App(fun, arg) | Pair(fun, arg):
            return free_loc_vars(fun) | free_loc_vars(arg)
        case TApp(fun, ty):
            return free_loc_vars(fun) | free_loc_vars_ty(ty)
        case LApp(fun, loc):
            out = free_loc_vars(fun)
            if isinstance(loc, LocVar):
                out |= {loc.name}
            return out
        case Proj(_, arg):
            return free_loc_vars(arg)
    raise InternalError(f"free_loc_vars: unknown term {term!r}")


# ---------------------------------------------------------------------------
# Fresh names and substitution


class NameSupply:
    """Deterministic fresh-name source; one per pass."""

    def __init__(self, prefix: str = "_g"):
        self.prefix = prefix
        self.counter = 0

    def fresh(self, hint: str = "") -> str:
        self.counter += 1
        return f"{self.prefix}{self.counter}"


def fresh_name(base: str, taken: set[str]) -> str:
    """Smallest primed variant of `base` not in `taken`."""
    name = base
    while name in taken:
        name += "'"
    return name


def subst_loc_in_loc(loc: Location, var: str, repl: Location) -> Location:
    if isinstance(loc, LocVar) and loc.name == var:
        return repl
    return loc


def subst_loc_in_ty(ty: RpcType, var: str, repl: Location) -> RpcType:
    match ty:
        case BaseTy(_) | TyVar(_):
            return ty
        case FunTy(arg, loc, res):
            return FunTy(
                subst_loc_in_ty(arg, var, repl),
                subst_loc_in_loc(loc, var, repl),
                subst_loc_in_ty(res, var, repl),
            )
        case PairTy(left, right):
            return PairTy(
                subst_loc_in_ty(left, var, repl), subst_loc_in_ty(right, var, repl)
            )
        case ForallTy(v, body):
            return ForallTy(v, subst_loc_in_ty(body, var, repl))
        case ForallLoc(v, body):
            if v == var:
                return ty
            if isinstance(repl, LocVar) and v == repl.name:
                taken = free_loc_vars_ty(body) | {var, repl.name}
                fresh = v
                while fresh in taken:
                    fresh += "'"
                body = subst_loc_in_ty(body, v, LocVar(fresh))
                return ForallLoc(fresh, subst_loc_in_ty(body, var, repl))
            return ForallLoc(v, subst_loc_in_ty(body, var, repl))
    raise InternalError(f"subst_loc_in_ty: unknown type {ty!r}")


def subst_ty_in_ty(ty: RpcType, var: str, repl: RpcType, supply: Optional[NameSupply] = None) -> RpcType:
    match ty:
        case BaseTy(_):
            return ty
        case TyVar(name):
            return repl if name == var else ty
        case FunTy(arg, loc, res):
            return FunTy(
                subst_ty_in_ty(arg, var, repl, supply),
                loc,
                subst_ty_in_ty(res, var, repl, supply),
            )
        case PairTy(left, right):
            return PairTy(
                subst_ty_in_ty(left, var, repl, supply),
                subst_ty_in_ty(right, var, repl, supply),
            )
        case ForallTy(v, body):
            if v == var:
                return ty
            if v in free_ty_vars_ty(repl):
                fresh = fresh_name(v, free_ty_vars_ty(body) | free_ty_vars_ty(repl) | {var})
                body = subst_ty_in_ty(body, v, TyVar(fresh), supply)
                return ForallTy(fresh, subst_ty_in_ty(body, var, repl, supply))
            return ForallTy(v, subst_ty_in_ty(body, var, repl, supply))
        case ForallLoc(v, body):
            if v in free_loc_vars_ty(repl):
                fresh = fresh_name(v, free_loc_vars_ty(body) | free_loc_vars_ty(repl))
                body = subst_loc_in_ty(body, v, LocVar(fresh))
                return ForallLoc(fresh, subst_ty_in_ty(body, var, repl, supply))
            return ForallLoc(v, subst_ty_in_ty(body, var, repl, supply))
    raise InternalError(f"subst_ty_in_ty: unknown type {ty!r}")


def subst_term(term: RpcTerm, var: str, repl: RpcTerm, supply: Optional[NameSupply] = None) -> RpcTerm:
    """Capture-avoiding `term[repl/var]` over term variables."""
    supply = supply or NameSupply()

    def go(t: RpcTerm) -> RpcTerm:
        match t:
            case Var(name):
                return repl if name == var else t
            case IntLit() | UnitLit():
                return t
            case Lam(loc, param, annot, body):
                if param == var:
                    return t
                if param in free_vars(repl):
                    fresh = fresh_name(param, free_vars(body) | free_vars(repl) | {var})
                    body = subst_term(body, param, Var(fresh), supply)
                    return Lam(loc, fresh, annot, go(body), t.span)
                return Lam(loc, param, annot, go(body), t.span)
            case TAbs(v, body):
                return TAbs(v, go(body), t.span)
            case LAbs(v, body):
                return LAbs(v, go(body), t.span)
            case App(fun, arg):
                return App(go(fun), go(arg), t.span)
            case TApp(fun, ty):
                return TApp(go(fun), ty, t.span)
            case LApp(fun, loc):
                return LApp(go(fun), loc, t.span)
            case Pair(left, right):
                return Pair(go(left), go(right), t.span)
            case Proj(i, arg):
                return Proj(i, go(arg), t.span)
        raise InternalError(f"subst_term: unknown term {t!r}")

    return go(term)


def subst_ty_in_term(term: RpcTerm, var: str, repl: RpcType, supply: Optional[NameSupply] = None) -> RpcTerm:
    supply = supply or NameSupply()

    def go(t: RpcTerm) -> RpcTerm:
        match t:
            case Var(_) | IntLit() | UnitLit():
                return t
            case Lam(loc, param, annot, body):
                return Lam(loc, param, subst_ty_in_ty(annot, var, repl, supply), go(body), t.span)
            case TAbs(v, body):
                if v == var:
                    return t
                if v in free_ty_vars_ty(repl):
                    fresh = fresh_name(v, free_ty_vars(body) | free_ty_vars_ty(repl) | {var})
                    body = subst_ty_in_term(body, v, TyVar(fresh), supply)
                    return TAbs(fresh, go(body), t.span)
                return TAbs(v, go(body), t.span)
            case LAbs(v, body):
                if v in free_loc_vars_ty(repl):
                    fresh = fresh_name(v, free_loc_vars(body) | free_loc_vars_ty(repl))
                    body = subst_loc_in_term(body, v, LocVar(fresh), supply)
                    return LAbs(fresh, go(body), t.span)
                return LAbs(v, go(body), t.span)
            case App(fun, arg):
                return App(go(fun), go(arg), t.span)
            case TApp(fun, ty):
                return TApp(go(fun), subst_ty_in_ty(ty, var, repl, supply), t.span)
            case LApp(fun, loc):
                return LApp(go(fun), loc, t.span)
            case Pair(left, right):
                return Pair(go(left), go(right), t.span)
            case Proj(i, arg):
                return Proj(i, go(arg), t.span)
        raise InternalError(f"subst_ty_in_term: unknown term {t!r}")

    return go(term)


def subst_loc_in_term(term: RpcTerm, var: str, repl: Location, supply: Optional[NameSupply] = None) -> RpcTerm:
    supply = supply or NameSupply()

    def go(t: RpcTerm) -> RpcTerm:
        match t:
            case Var(_) | IntLit() | UnitLit():
                return t
            case Lam(loc, param, annot, body):
                return Lam(
                    subst_loc_in_loc(loc, var, repl),
                    param,
                    subst_loc_in_ty(annot, var, repl),
                    go(body),
                    t.span,
                )
            case TAbs(v, body):
                return TAbs(v, go(body), t.span)
            case LAbs(v, body):
                if v == var:
                    return t
                if isinstance(repl, LocVar) and v == repl.name:
                    fresh = fresh_name(v, free_loc_vars(body) | {var, repl.name})
                    body = subst_loc_in_term(body, v, LocVar(fresh), supply)
                    return LAbs(fresh, go(body), t.span)
                return LAbs(v, go(body), t.span)
            case App(fun, arg):
                return App(go(fun), go(arg), t.span)
            case TApp(fun, ty):
                return TApp(go(fun), subst_loc_in_ty(ty, var, repl), t.span)
            case LApp(fun, loc):
                return LApp(go(fun), subst_loc_in_loc(loc, var, repl), t.span)
            case Pair(left, right):
                return Pair(go(left), go(right), t.span)
            case Proj(i, arg):
                return Proj(i, go(arg), t.span)
        raise InternalError(f"subst_loc_in_term: unknown term {t!r}")

    return go(term)


# ---------------------------------------------------------------------------
# Definition desugaring


def desugar(program: SourceProgram) -> RpcTerm:
    """Substitute definitions into main, producing one closed term.

    Definitions are non-recursive and may reference earlier ones only;
    the parser enforces that, so a left-to-right fold suffices.
    """
    supply = NameSupply()
    resolved: list[tuple[str, RpcTerm]] = []
    for d in program.defs:
        body = d.body
        for name, repl in reversed(resolved):
            body = subst_term(body, name, repl, supply)
        resolved.append((d.name, body))
    main = program.main
    for name, repl in reversed(resolved):
        main = subst_term(main, name, repl, supply)
    return main


# ---------------------------------------------------------------------------
# Node counting (frozen convention)


def term_nodes(term: RpcTerm) -> int:
    """One node per term constructor plus one per location occurrence in
    a term position; type subtrees count zero."""
    match term:
        case Var(_) | IntLit() | UnitLit():
            return 1
        case Lam(_, _, _, body):
            return 2 + term_nodes(body)  # lambda + its location annotation
        case TAbs(_, body) | LAbs(_, body):
            return 1 + term_nodes(body)
        case App(fun, arg) | Pair(fun, arg):
            return 1 + term_nodes(fun) + term_nodes(arg)
        case TApp(fun, _):
            return 1 + term_nodes(fun)
        case LApp(fun, _):
            return 2 + term_nodes(fun)  # application + location occurrence
        case Proj(_, arg):
            return 1 + term_nodes(arg)
    raise InternalError(f"term_nodes: unknown term {term!r}")


def count_nodes(program: SourceProgram) -> int:
    """Size of the desugared program; definitions contribute through their
    substituted bodies, declared types contribute nothing."""
    return term_nodes(desugar(program))
