"""Concrete syntax: lexer, parser, and pretty-printers.

Grammar (normative; `--` comments run to end of line):

    program  ::= def* term? | def*            (exactly one entry point:
                                               a trailing bare term, or a
                                               definition named `main`)
    def      ::= ident ':' type '=' term ';'
    term     ::= app
    app      ::= unary unary*                 (left associative)
    unary    ::= 'fst' unary | 'snd' unary | postfix
    postfix  ::= atom ( '[' type ']' | '{' loc+ '}' )*
    atom     ::= ident | int | '(' ')' | '(' term (',' term)? ')'
               | '\\' params '.' term
               | '{' ident+ '}' '.' term
               | '[' ident+ ']' '.' term
    params   ::= ( '(' ident ':' type ')' '@' loc )+
    type     ::= '{' ident+ '}' '.' type
               | '[' ident+ ']' '.' type
               | tyfun
    tyfun    ::= tyatom ( '-' loc '->' tyfun )?     (right associative)
    tyatom   ::= 'Int' | 'Unit' | ident | '(' type (',' type)? ')'
    loc      ::= 'client' | 'server' | ident

Multi-name braces/brackets are sugar for nested single abstractions and
applications; the printer always emits the single-name form, so
parse(pretty(t)) == t holds structurally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .errors import InternalError, ParseError
from .syntax import (
    App,
    BaseTy,
    CLIENT,
    Client,
    Def,
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
    Span,
    TAbs,
    TApp,
    TyVar,
    UnitLit,
    Var,
    free_vars,
)

KEYWORDS = {"client", "server", "fst", "snd", "Int", "Unit"}

_PUNCT = ["->", "--", "(", ")", "{", "}", "[", "]", ":", ";", ".", ",", "@", "=", "\\", "-"]


@dataclass
class Token:
    kind: str  # 'ident' | 'int' | punctuation or keyword itself | 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str, filename: str = "<input>") -> list[Token]:
    toks: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("--", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch.isdigit():
            start = i
            while i < n and text[i].isdigit():
                i += 1
            toks.append(Token("int", text[start:i], line, col))
            col += i - start
            continue
        if ch.isalpha() or ch == "_":
            start = i
            while i < n and (text[i].isalnum() or text[i] in "_'"):
                i += 1
            word = text[start:i]
            kind = word if word in KEYWORDS else "ident"
            toks.append(Token(kind, word, line, col))
            col += i - start
            continue
        for p in _PUNCT:
            if text.startswith(p, i):
                if p == "--":
                    break  # handled above; unreachable
                toks.append(Token(p, p, line, col))
                i += len(p)
                col += len(p)
                break
        else:
            raise ParseError(
                f"unexpected character {ch!r}", Span(filename, line, col, line, col + 1)
            )
    toks.append(Token("eof", "", line, col))
    return toks


class Parser:
    def __init__(self, text: str, filename: str = "<input>"):
        self.filename = filename
        self.toks = tokenize(text, filename)
        self.pos = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.toks[min(self.pos + offset, len(self.toks) - 1)]

    def next(self) -> Token:
        tok = self.toks[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            raise ParseError(
                f"expected {kind!r} but found {tok.text or 'end of input'!r}",
                self.span_at(tok),
            )
        return self.next()

    def span_at(self, tok: Token) -> Span:
        return Span(self.filename, tok.line, tok.col, tok.line, tok.col + max(1, len(tok.text)))

    def span_from(self, start: Token) -> Span:
        prev = self.toks[max(0, self.pos - 1)]
        return Span(self.filename, start.line, start.col, prev.line, prev.col + len(prev.text))

    # -- locations and types -----------------------------------------------

    def parse_loc(self) -> Location:
        tok = self.peek()
        if tok.kind == "client":
            self.next()
            return CLIENT
        if tok.kind == "server":
            self.next()
            return SERVER
        if tok.kind == "ident":
            self.next()
            return LocVar(tok.text)
        raise ParseError(f"expected a location, found {tok.text!r}", self.span_at(tok))

    def parse_type(self) -> RpcType:
        tok = self.peek()
        if tok.kind in ("{", "[") and self._brace_is_binder():
            close = "}" if tok.kind == "{" else "]"
            self.next()
            names = [self.expect("ident").text]
            while self.peek().kind == "ident":
                names.append(self.next().text)
            self.expect(close)
            self.expect(".")
            body = self.parse_type()
            ctor = ForallLoc if close == "}" else ForallTy
            for name in reversed(names):
                body = ctor(name, body)
            return body
        return self.parse_fun_type()

    def _brace_is_binder(self) -> bool:
        # '{a b} .' or '[a b] .' introduces a quantifier; anything else is
        # a location/type application (only valid in postfix position).
        depth = 0
        j = 0
        while True:
            tok = self.peek(j)
            if tok.kind == "eof":
                return False
            if tok.kind in ("{", "["):
                depth += 1
            elif tok.kind in ("}", "]"):
                depth -= 1
                if depth == 0:
                    return self.peek(j + 1).kind == "."
            j += 1

    def parse_fun_type(self) -> RpcType:
        left = self.parse_atom_type()
        if self.peek().kind == "-":
            self.next()
            loc = self.parse_loc()
            self.expect("->")
            right = self.parse_fun_type()
            return FunTy(left, loc, right)
        return left

    def parse_atom_type(self) -> RpcType:
        tok = self.peek()
        if tok.kind == "Int":
            self.next()
            return BaseTy("Int")
        if tok.kind == "Unit":
            self.next()
            return BaseTy("Unit")
        if tok.kind == "ident":
            self.next()
            return TyVar(tok.text)
        if tok.kind == "(":
            self.next()
            first = self.parse_type()
            if self.peek().kind == ",":
                self.next()
                second = self.parse_type()
                self.expect(")")
                return PairTy(first, second)
            self.expect(")")
            return first
        raise ParseError(f"expected a type, found {tok.text!r}", self.span_at(tok))

    # -- terms ---------------------------------------------------------------

    def parse_term(self) -> RpcTerm:
        start = self.peek()
        term = self.parse_unary()
        while self._starts_unary():
            arg = self.parse_unary()
            term = App(term, arg, self.span_from(start))
        return term

    def _starts_unary(self) -> bool:
        kind = self.peek().kind
        if kind in ("ident", "int", "fst", "snd", "\\"):
            return True
        if kind == "(":
            return True
        if kind in ("{", "["):
            # Binder atoms start terms; application braces belong to postfix.
            return self._brace_is_binder()
        return False

    def parse_unary(self) -> RpcTerm:
        tok = self.peek()
        if tok.kind in ("fst", "snd"):
            self.next()
            arg = self.parse_unary()
            return Proj(1 if tok.kind == "fst" else 2, arg, self.span_from(tok))
        return self.parse_postfix()

    def parse_postfix(self) -> RpcTerm:
        start = self.peek()
        term = self.parse_atom()
        while True:
            tok = self.peek()
            if tok.kind == "[" and not self._brace_is_binder():
                self.next()
                ty = self.parse_type()
                self.expect("]")
                term = TApp(term, ty, self.span_from(start))
            elif tok.kind == "{" and not self._brace_is_binder():
                self.next()
                locs = [self.parse_loc()]
                while self.peek().kind != "}":
                    locs.append(self.parse_loc())
                self.expect("}")
                for loc in locs:
                    term = LApp(term, loc, self.span_from(start))
            else:
                return term

    def parse_atom(self) -> RpcTerm:
        tok = self.peek()
        if tok.kind == "ident":
            self.next()
            return Var(tok.text, self.span_at(tok))
        if tok.kind == "int":
            self.next()
            return IntLit(int(tok.text), self.span_at(tok))
        if tok.kind == "(":
            self.next()
            if self.peek().kind == ")":
                self.next()
                return UnitLit(self.span_from(tok))
            first = self.parse_term()
            if self.peek().kind == ",":
                self.next()
                second = self.parse_term()
                self.expect(")")
                return Pair(first, second, self.span_from(tok))
            self.expect(")")
            return first
        if tok.kind == "\\":
            self.next()
            params: list[tuple[str, RpcType, Location]] = []
            while self.peek().kind == "(":
                self.next()
                name = self.expect("ident").text
                self.expect(":")
                annot = self.parse_type()
                self.expect(")")
                self.expect("@")
                loc = self.parse_loc()
                params.append((name, annot, loc))
            if not params:
                raise ParseError("lambda needs at least one '(x : T) @ loc' parameter", self.span_at(self.peek()))
            self.expect(".")
            body = self.parse_term()
            span = self.span_from(tok)
            for name, annot, loc in reversed(params):
                body = Lam(loc, name, annot, body, span)
            return body
        if tok.kind in ("{", "["):
            close = "}" if tok.kind == "{" else "]"
            self.next()
            names = [self.expect("ident").text]
            while self.peek().kind == "ident":
                names.append(self.next().text)
            self.expect(close)
            self.expect(".")
            body = self.parse_term()
            span = self.span_from(tok)
            ctor = LAbs if close == "}" else TAbs
            for name in reversed(names):
                body = ctor(name, body, span)
            return body
        raise ParseError(f"expected a term, found {tok.text or 'end of input'!r}", self.span_at(tok))

    # -- programs ------------------------------------------------------------

    def parse_program(self) -> SourceProgram:
        defs: list[Def] = []
        trailing: Optional[RpcTerm] = None
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind == "ident" and self.peek(1).kind == ":":
                name_tok = self.next()
                self.expect(":")
                declared = self.parse_type()
                self.expect("=")
                body = self.parse_term()
                self.expect(";")
                defs.append(Def(name_tok.text, declared, body, self.span_at(name_tok)))
            else:
                trailing = self.parse_term()
                if self.peek().kind != "eof":
                    bad = self.peek()
                    raise ParseError(
                        f"unexpected {bad.text!r} after the final term", self.span_at(bad)
                    )
        seen: dict[str, Def] = {}
        for d in defs:
            if d.name in seen:
                raise ParseError(f"duplicate definition name {d.name!r}", d.span)
            seen[d.name] = d
        main: Optional[RpcTerm] = trailing
        kept = defs
        if main is None:
            if "main" not in seen:
                raise ParseError("program has no entry point: add a final term or a 'main' definition")
            kept = [d for d in defs if d.name != "main"]
            main_def = seen["main"]
            if any(d.name == "main" for d in kept):
                raise InternalError("duplicate main survived the check above")
            main = main_def.body
        elif "main" in seen:
            raise ParseError("both a 'main' definition and a trailing term are present")
        # Reference discipline: each body sees earlier definitions only.
        known: set[str] = set()
        for d in kept:
            for name in sorted(free_vars(d.body) - known):
                raise ParseError(f"reference to undefined name {name!r}", d.span)
            known.add(d.name)
        for name in sorted(free_vars(main) - known):
            raise ParseError(f"reference to undefined name {name!r}")
        return SourceProgram(tuple(kept), main)


def parse(text: str, filename: str = "<input>") -> SourceProgram:
    return Parser(text, filename).parse_program()


def parse_term(text: str, filename: str = "<input>") -> RpcTerm:
    parser = Parser(text, filename)
    term = parser.parse_term()
    parser.expect("eof")
    return term


def parse_type(text: str, filename: str = "<input>") -> RpcType:
    parser = Parser(text, filename)
    ty = parser.parse_type()
    parser.expect("eof")
    return ty


# ---------------------------------------------------------------------------
# Pretty-printing


def pretty_loc(loc: Location) -> str:
    return str(loc)


def pretty_type(ty: RpcType, prec: int = 0) -> str:
    # prec 0: quantifiers, 1: arrows, 2: atoms
    match ty:
        case BaseTy(name):
            return name
        case TyVar(name):
            return name
        case FunTy(arg, loc, res):
            body = f"{pretty_type(arg, 2)} -{pretty_loc(loc)}-> {pretty_type(res, 1)}"
            return f"({body})" if prec > 1 else body
        case PairTy(left, right):
            return f"({pretty_type(left)}, {pretty_type(right)})"
        case ForallTy(var, body):
            text = f"[{var}]. {pretty_type(body)}"
            return f"({text})" if prec > 0 else text
        case ForallLoc(var, body):
            text = f"{{{var}}}. {pretty_type(body)}"
            return f"({text})" if prec > 0 else text
    raise InternalError(f"pretty_type: unknown type {ty!r}")


def pretty_term(term: RpcTerm, prec: int = 0) -> str:
    # prec levels: 0 binders < 1 application/projection < 2 postfix < 3 atoms.
    # Postfix [T]/{Loc} binds tighter than application, matching the parser.
    match term:
        case Var(name):
            return name
        case IntLit(value):
            return str(value)
        case UnitLit():
            return "()"
        case Lam(loc, param, annot, body):
            text = f"\\({param} : {pretty_type(annot)}) @ {pretty_loc(loc)} . {pretty_term(body)}"
            return f"({text})" if prec > 0 else text
        case TAbs(var, body):
            text = f"[{var}]. {pretty_term(body)}"
            return f"({text})" if prec > 0 else text
        case LAbs(var, body):
            text = f"{{{var}}}. {pretty_term(body)}"
            return f"({text})" if prec > 0 else text
        case App(fun, arg):
            text = f"{pretty_term(fun, 1)} {pretty_term(arg, 2)}"
            return f"({text})" if prec > 1 else text
        case TApp(fun, ty):
            text = f"{pretty_term(fun, 2)} [{pretty_type(ty)}]"
            return f"({text})" if prec > 2 else text
        case LApp(fun, loc):
            text = f"{pretty_term(fun, 2)} {{{pretty_loc(loc)}}}"
            return f"({text})" if prec > 2 else text
        case Pair(left, right):
            return f"({pretty_term(left)}, {pretty_term(right)})"
        case Proj(index, arg):
            word = "fst" if index == 1 else "snd"
            text = f"{word} {pretty_term(arg, 2)}"
            return f"({text})" if prec > 1 else text
    raise InternalError(f"pretty_term: unknown term {term!r}")


def pretty_program(program: SourceProgram) -> str:
    lines = [
        f"{d.name} : {pretty_type(d.declared_type)} = {pretty_term(d.body)} ;"
        for d in program.defs
    ]
    lines.append(pretty_term(program.main))
    return "\n".join(lines)


def pretty(node) -> str:
    """Single entry point over source terms, types, and programs."""
    if isinstance(node, SourceProgram):
        return pretty_program(node)
    if isinstance(node, (Client, Server, LocVar)):
        return pretty_loc(node)
    if isinstance(node, (BaseTy, TyVar, FunTy, PairTy, ForallTy, ForallLoc)):
        return pretty_type(node)
    return pretty_term(node)
