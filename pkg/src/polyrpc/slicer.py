"""Typed slicing compilation of the source calculus into the CS calculus,
plus the generic-application specialization pass.

Lambda and location abstractions become named codes referenced by
closures; applications become do-sequences ending in a local, req, call,
or gen application depending on the statically known locations. The
literal rule output is then normalized with the monad laws (left
identity and associativity), which collapses administrative binds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import InternalError
from . import rpccore
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
    cs_free_vars,
)
from .rpccore import TypeEnv, types_equal
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
    fresh_name,
    is_constant,
    is_value,
    subst_loc_in_ty,
    subst_ty_in_ty,
)


# ---------------------------------------------------------------------------
# Type compilation


def compile_type_value(ty: RpcType) -> CsType:
    """|A|: the value-type translation."""
    match ty:
        case BaseTy(name):
            return CBase(name)
        case TyVar(name):
            return CTyVar(name)
        case FunTy(arg, loc, res):
            return CClo(CFun(compile_type_value(arg), loc, compile_type_comp(res)))
        case PairTy(left, right):
            return CPair(compile_type_value(left), compile_type_value(right))
        case ForallTy(var, body):
            return CForallTy(var, compile_type_comp(body))
        case ForallLoc(var, body):
            return CClo(CForallLoc(var, compile_type_comp(body)))
    raise InternalError(f"compile_type_value: unknown type {ty!r}")


def compile_type_comp(ty: RpcType) -> CsType:
    """C[A] = T |A|: the computation-type translation."""
    return CMonad(compile_type_value(ty))


# ---------------------------------------------------------------------------
# Ordered free-variable scans (first occurrence in a pre-order walk)


def _scan(term: RpcTerm, bound_vars: frozenset, bound_tys: frozenset, bound_locs: frozenset, out_vars: list, out_tys: list, out_locs: list) -> None:
    def scan_loc(loc: Location):
        if isinstance(loc, LocVar) and loc.name not in bound_locs and loc.name not in out_locs:
            out_locs.append(loc.name)

    def scan_ty(ty: RpcType, btys: frozenset, blocs: frozenset):
        match ty:
            case BaseTy(_):
                pass
            case TyVar(name):
                if name not in btys and name not in out_tys:
                    out_tys.append(name)
            case FunTy(arg, loc, res):
                scan_ty(arg, btys, blocs)
                if isinstance(loc, LocVar) and loc.name not in blocs and loc.name not in out_locs:
                    out_locs.append(loc.name)
                scan_ty(res, btys, blocs)
            case PairTy(left, right):
                scan_ty(left, btys, blocs)
                scan_ty(right, btys, blocs)
            case ForallTy(v, body):
                scan_ty(body, btys | {v}, blocs)
            case ForallLoc(v, body):
                scan_ty(body, btys, blocs | {v})

    match term:
        case Var(name):
            if name not in bound_vars and name not in out_vars:
                out_vars.append(name)
        case IntLit(_) | UnitLit():
            pass
        case Lam(loc, param, annot, body):
            scan_loc(loc)
            scan_ty(annot, bound_tys, bound_locs)
            _scan(body, bound_vars | {param}, bound_tys, bound_locs, out_vars, out_tys, out_locs)
        case TAbs(var, body):
            _scan(body, bound_vars, bound_tys | {var}, bound_locs, out_vars, out_tys, out_locs)
        case LAbs(var, body):
            _scan(body, bound_vars, bound_tys, bound_locs | {var}, out_vars, out_tys, out_locs)
        case App(fun, arg) | Pair(fun, arg):
            _scan(fun, bound_vars, bound_tys, bound_locs, out_vars, out_tys, out_locs)
            _scan(arg, bound_vars, bound_tys, bound_locs, out_vars, out_tys, out_locs)
        case TApp(fun, ty):
            _scan(fun, bound_vars, bound_tys, bound_locs, out_vars, out_tys, out_locs)
            scan_ty(ty, bound_tys, bound_locs)
        case LApp(fun, loc):
            _scan(fun, bound_vars, bound_tys, bound_locs, out_vars, out_tys, out_locs)
            scan_loc(loc)
        case Proj(_, arg):
            _scan(arg, bound_vars, bound_tys, bound_locs, out_vars, out_tys, out_locs)
        case _:
            raise InternalError(f"_scan: unknown term {term!r}")


def ordered_captures(term: RpcTerm) -> tuple[list[str], list[str], list[str]]:
    """(term vars, type vars, location vars) free in `term`, each in
    first-occurrence order."""
    out_vars: list[str] = []
    out_tys: list[str] = []
    out_locs: list[str] = []
    _scan(term, frozenset(), frozenset(), frozenset(), out_vars, out_tys, out_locs)
    return out_vars, out_tys, out_locs


# ---------------------------------------------------------------------------
# Term compilation


@dataclass
class _Builder:
    specialize: bool = True
    codes: list[Code] = field(default_factory=list)
    client_names: set[str] = field(default_factory=set)
    server_names: set[str] = field(default_factory=set)
    code_counter: int = 0
    var_counter: int = 0

    def fresh_code(self) -> str:
        self.code_counter += 1
        return f"f{self.code_counter}"

    def fresh_var(self, letter: str) -> str:
        self.var_counter += 1
        return f"{letter}_{self.var_counter}"

    def register(self, code: Code, loc: Optional[Location]) -> None:
        if loc is None or isinstance(loc, LocVar):
            self.client_names.add(code.name)
            self.server_names.add(code.name)
        elif isinstance(loc, Client):
            self.client_names.add(code.name)
        else:
            self.server_names.add(code.name)
        self.codes.append(code)


def compile(program: SourceProgram, specialize: bool = True) -> CsProgram:
    """Slice a type-checked source program into a CS program.

    With specialize=False every application compiles to a generic gen
    call, leaving all specialization to the optimize() pass.
    """
    rpccore.typecheck_program(program)
    main = desugar(program)
    builder = _Builder(specialize=specialize)
    cs_main, _ = _compile_comp(main, TypeEnv(), CLIENT, builder)
    codes = tuple(sorted(builder.codes, key=lambda c: int(c.name[1:])))
    result = CsProgram(
        main=normalize(cs_main),
        codes=tuple(
            Code(
                c.name,
                c.loc_params,
                c.ty_params,
                c.env_params,
                c.env_types,
                c.result_type,
                _normalize_open_code(c.open_code),
            )
            for c in codes
        ),
        client_names=frozenset(builder.client_names),
        server_names=frozenset(builder.server_names),
    )
    return result


def _compile_comp(term: RpcTerm, env: TypeEnv, loc: Location, b: _Builder) -> tuple[CsTerm, RpcType]:
    """C[M]: compile to a computation, synthesizing the source type."""
    if is_value(term):
        value, ty = _compile_value(term, env, loc, b)
        return Unit(value), ty
    match term:
        case App(fun, arg):
            cfun, fun_ty = _compile_comp(fun, env, loc, b)
            if not isinstance(fun_ty, FunTy):
                raise InternalError("compile: application of a non-function")
            carg, _ = _compile_comp(arg, env, loc, b)
            f = b.fresh_var("f")
            x = b.fresh_var("x")
            floc = fun_ty.loc
            if not b.specialize:
                tail: CsTerm = Gen(floc, CVar(f), CVar(x))
            elif floc == loc:
                tail = CApp(CVar(f), CVar(x))
            elif isinstance(loc, Client) and isinstance(floc, Server):
                tail = Req(CVar(f), CVar(x))
            elif isinstance(loc, Server) and isinstance(floc, Client):
                tail = Call(CVar(f), CVar(x))
            else:
                tail = Gen(floc, CVar(f), CVar(x))
            return Do(f, cfun, Do(x, carg, tail)), fun_ty.res
        case TApp(fun, ty):
            cfun, fun_ty = _compile_comp(fun, env, loc, b)
            if not isinstance(fun_ty, ForallTy):
                raise InternalError("compile: type application of a non-forall")
            f = b.fresh_var("f")
            return (
                Do(f, cfun, CTApp(CVar(f), compile_type_value(ty))),
                subst_ty_in_ty(fun_ty.body, fun_ty.var, ty),
            )
        case LApp(fun, lloc):
            cfun, fun_ty = _compile_comp(fun, env, loc, b)
            if not isinstance(fun_ty, ForallLoc):
                raise InternalError("compile: location application of a non-forall")
            f = b.fresh_var("f")
            return (
                Do(f, cfun, CLApp(CVar(f), lloc)),
                subst_loc_in_ty(fun_ty.body, fun_ty.var, lloc),
            )
        case Pair(left, right):
            cleft, lty = _compile_comp(left, env, loc, b)
            cright, rty = _compile_comp(right, env, loc, b)
            x = b.fresh_var("x")
            y = b.fresh_var("y")
            return (
                Do(x, cleft, Do(y, cright, Unit(CPairV(CVar(x), CVar(y))))),
                PairTy(lty, rty),
            )
        case Proj(index, arg):
            carg, arg_ty = _compile_comp(arg, env, loc, b)
            if not isinstance(arg_ty, PairTy):
                raise InternalError("compile: projection of a non-pair")
            p = b.fresh_var("p")
            x = b.fresh_var("x")
            term_out = Do(p, carg, Let(x, CProj(index, CVar(p)), Unit(CVar(x))))
            return term_out, arg_ty.left if index == 1 else arg_ty.right
    raise InternalError(f"_compile_comp: unknown term {term!r}")


def _capture_env(term: RpcTerm, env: TypeEnv) -> tuple[TypeEnv, list[str], list[str], list[str], list[RpcType]]:
    """Build the code prefix: captured vars, their source types, and the
    lifted location/type variables, all in first-occurrence order."""
    capt_vars, capt_tys, capt_locs = ordered_captures(term)
    types: list[RpcType] = []
    inner = TypeEnv()
    for l in capt_locs:
        inner = inner.bind_loc(l)
    for a in capt_tys:
        inner = inner.bind_ty(a)
    for z in capt_vars:
        ty = env.lookup(z)
        if ty is None:
            raise InternalError(f"compile: captured variable {z!r} missing from env")
        types.append(ty)
        inner = inner.bind_var(z, ty)
    return inner, capt_vars, capt_tys, capt_locs, types


def _compile_value(term: RpcTerm, env: TypeEnv, loc: Location, b: _Builder) -> tuple[CsValue, RpcType]:
    """|V|: compile a syntactic value."""
    match term:
        case Var(name):
            ty = env.lookup(name)
            if ty is None:
                raise InternalError(f"compile: unbound variable {name!r}")
            return CVar(name), ty
        case IntLit(value):
            return CInt(value), BaseTy("Int")
        case UnitLit():
            return CUnitLit(), BaseTy("Unit")
        case Pair(left, right):
            cl, lty = _compile_value(left, env, loc, b)
            cr, rty = _compile_value(right, env, loc, b)
            return CPairV(cl, cr), PairTy(lty, rty)
        case TAbs(var, body):
            cbody, bty = _compile_comp(body, env.bind_ty(var), loc, b)
            if not isinstance(cbody, Unit):
                # C[V] of a value is always unit |V|.
                raise InternalError("compile: type abstraction body did not compile to unit")
            return CTAbs(var, cbody), ForallTy(var, bty)
        case Lam(lloc, param, annot, body):
            name = b.fresh_code()
            inner, zs, tys, locs, ztypes = _capture_env(term, env)
            cbody, bty = _compile_comp(body, inner.bind_var(param, annot), lloc, b)
            result_type = CFun(compile_type_value(annot), lloc, CMonad(compile_type_value(bty)))
            code = Code(
                name,
                tuple(locs),
                tuple(tys),
                tuple(zs),
                tuple(compile_type_value(t) for t in ztypes),
                result_type,
                OpenLam(param, cbody),
            )
            b.register(code, lloc)
            ref = CodeRef(name, tuple(LocVar(l) for l in locs), tuple(CTyVar(a) for a in tys))
            return Clo(tuple(CVar(z) for z in zs), ref), FunTy(annot, lloc, bty)
        case LAbs(var, body):
            name = b.fresh_code()
            inner, zs, tys, locs, ztypes = _capture_env(term, env)
            cbody, bty = _compile_comp(body, inner.bind_loc(var), loc, b)
            if not isinstance(cbody, Unit):
                raise InternalError("compile: location abstraction body did not compile to unit")
            result_type = CForallLoc(var, CMonad(compile_type_value(bty)))
            code = Code(
                name,
                tuple(locs),
                tuple(tys),
                tuple(zs),
                tuple(compile_type_value(t) for t in ztypes),
                result_type,
                OpenLAbs(var, cbody),
            )
            b.register(code, None)
            ref = CodeRef(name, tuple(LocVar(l) for l in locs), tuple(CTyVar(a) for a in tys))
            return Clo(tuple(CVar(z) for z in zs), ref), ForallLoc(var, bty)
    raise InternalError(f"_compile_value: non-value {term!r}")


# ---------------------------------------------------------------------------
# Monad-law normalization (left identity + associativity)


def normalize(term: CsTerm) -> CsTerm:
    match term:
        case Do(var, bound, body):
            bound = normalize(bound)
            body = normalize(body)
            if isinstance(bound, Unit):
                from .cs import subst_cs

                return normalize(subst_cs(body, var, bound.value))
            if isinstance(bound, Do):
                from .cs import subst_cs

                inner_var, m1, m2 = bound.var, bound.bound, bound.body
                if inner_var in cs_free_vars(body):
                    fresh = fresh_name(inner_var, cs_free_vars(body) | cs_free_vars(m2) | {var})
                    m2 = subst_cs(m2, inner_var, CVar(fresh))
                    inner_var = fresh
                return normalize(Do(inner_var, m1, Do(var, m2, body)))
            return Do(var, bound, body)
        case Let(var, bound, body):
            return Let(var, normalize(bound), normalize(body))
        case Unit(value):
            return Unit(normalize(value))
        case CPairV(left, right):
            return CPairV(normalize(left), normalize(right))
        case Clo(env, ref):
            return Clo(tuple(normalize(v) for v in env), ref)
        case CTAbs(var, body):
            return CTAbs(var, normalize(body))
        case Req(fun, arg):
            return Req(normalize(fun), normalize(arg))
        case Call(fun, arg):
            return Call(normalize(fun), normalize(arg))
        case Gen(loc, fun, arg):
            return Gen(loc, normalize(fun), normalize(arg))
        case CProj(index, arg):
            return CProj(index, normalize(arg))
        case CApp(fun, arg):
            return CApp(normalize(fun), normalize(arg))
        case CTApp(fun, ty):
            return CTApp(normalize(fun), ty)
        case CLApp(fun, loc):
            return CLApp(normalize(fun), loc)
        case _:
            return term


def _normalize_open_code(open_code):
    if isinstance(open_code, OpenLam):
        return OpenLam(open_code.param, normalize(open_code.body))
    return OpenLAbs(open_code.var, normalize(open_code.body))


# ---------------------------------------------------------------------------
# Generic-application specialization (the standalone optimization pass)


def optimize(program: CsProgram) -> CsProgram:
    """Rewrite gen calls whose decision is statically known.

    A gen at its own ambient location becomes a local application; a gen
    between the two distinct constants becomes req or call; a gen stays
    generic only when the locations differ and one is a variable.
    """
    codes = []
    for code in program.codes:
        if isinstance(code.open_code, OpenLam):
            ambient = code.result_type.loc if isinstance(code.result_type, CFun) else LocVar("%opt")
            new_open = OpenLam(code.open_code.param, _opt(code.open_code.body, ambient))
        else:
            new_open = OpenLAbs(code.open_code.var, _opt(code.open_code.body, LocVar("%opt")))
        codes.append(
            Code(
                code.name,
                code.loc_params,
                code.ty_params,
                code.env_params,
                code.env_types,
                code.result_type,
                new_open,
            )
        )
    return CsProgram(
        main=_opt(program.main, CLIENT),
        codes=tuple(codes),
        client_names=program.client_names,
        server_names=program.server_names,
    )


def _opt(term: CsTerm, ambient: Location) -> CsTerm:
    match term:
        case Gen(loc, fun, arg):
            fun = _opt(fun, ambient)
            arg = _opt(arg, ambient)
            if loc == ambient:
                return CApp(fun, arg)
            if isinstance(ambient, Client) and isinstance(loc, Server):
                return Req(fun, arg)
            if isinstance(ambient, Server) and isinstance(loc, Client):
                return Call(fun, arg)
            return Gen(loc, fun, arg)
        case Do(var, bound, body):
            return Do(var, _opt(bound, ambient), _opt(body, ambient))
        case Let(var, bound, body):
            return Let(var, _opt(bound, ambient), _opt(body, ambient))
        case Unit(value):
            return Unit(_opt(value, ambient))
        case CPairV(left, right):
            return CPairV(_opt(left, ambient), _opt(right, ambient))
        case Clo(env, ref):
            return Clo(tuple(_opt(v, ambient) for v in env), ref)
        case CTAbs(var, body):
            return CTAbs(var, _opt(body, ambient))
        case Req(fun, arg):
            return Req(_opt(fun, ambient), _opt(arg, ambient))
        case Call(fun, arg):
            return Call(_opt(fun, ambient), _opt(arg, ambient))
        case CProj(index, arg):
            return CProj(index, _opt(arg, ambient))
        case CApp(fun, arg):
            return CApp(_opt(fun, ambient), _opt(arg, ambient))
        case CTApp(fun, ty):
            return CTApp(_opt(fun, ambient), ty)
        case CLApp(fun, loc):
            return CLApp(_opt(fun, ambient), loc)
        case _:
            return term
