"""Recursive-descent parser producing ModuleAst values."""

from __future__ import annotations

from typing import Optional

from ..errors import Diagnostic, ParseError
from ..values import Value
from .ast import (
    Assign, Binary, BuiltinCall, Call, Expr, ExprStmt, FieldAccess, FunctionDecl, If, Index,
    Let, ListLit, Lit, ModuleAst, Param, Pos, RecordLit, Return, Stmt, Throw, Try, Unary,
    Var, While,
)
from .lexer import Token, tokenize

TYPE_NAMES = ("int", "float", "bool", "str", "list", "record", "file")

_COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")


class _Parser:
    def __init__(self, tokens: list[Token], origin: str):
        self.tokens = tokens
        self.origin = origin
        self.i = 0

    # --- token helpers ---

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def at_symbol(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "symbol" and t.text == text

    def at_kw(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "kw" and t.text == text

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text if text is not None else kind
            got = t.text if t.kind != "eof" else "end of file"
            raise self.error(f"expected {want!r}, found {got!r}", t)
        return self.next()

    def error(self, msg: str, tok: Token) -> ParseError:
        return ParseError([Diagnostic(msg, self.origin, tok.line, tok.col)])

    def pos(self, tok: Token) -> Pos:
        return Pos(tok.line, tok.col)

    # --- grammar ---

    def module(self, name: str) -> ModuleAst:
        functions: list[FunctionDecl] = []
        seen: set[str] = set()
        while self.peek().kind != "eof":
            fn = self.function()
            if fn.name in seen:
                raise ParseError(
                    [Diagnostic(f"duplicate function name {fn.name!r}", self.origin,
                                fn.pos.line, fn.pos.col)]
                )
            seen.add(fn.name)
            functions.append(fn)
        return ModuleAst(name, functions)

    def function(self) -> FunctionDecl:
        start = self.peek()
        public = False
        if self.at_kw("pub"):
            self.next()
            public = True
        self.expect("kw", "fn")
        name = self.expect("ident").text
        self.expect("symbol", "(")
        params: list[Param] = []
        seen: set[str] = set()
        while not self.at_symbol(")"):
            if params:
                self.expect("symbol", ",")
            ptok = self.expect("ident")
            if ptok.text in seen:
                raise self.error(f"duplicate parameter {ptok.text!r}", ptok)
            seen.add(ptok.text)
            annotation = None
            if self.at_symbol(":"):
                self.next()
                atok = self.next()
                if atok.text not in TYPE_NAMES:
                    raise self.error(f"unknown type annotation {atok.text!r}", atok)
                annotation = atok.text
            params.append(Param(ptok.text, annotation))
        self.expect("symbol", ")")
        body = self.block()
        return FunctionDecl(name, public, params, body, self.pos(start))

    def block(self) -> list[Stmt]:
        self.expect("symbol", "{")
        stmts: list[Stmt] = []
        while not self.at_symbol("}"):
            if self.peek().kind == "eof":
                raise self.error("unterminated block", self.peek())
            stmts.append(self.statement())
        self.expect("symbol", "}")
        return stmts

    def statement(self) -> Stmt:
        tok = self.peek()
        if self.at_kw("let"):
            self.next()
            name = self.expect("ident").text
            self.expect("symbol", "=")
            expr = self.expression()
            self.expect("symbol", ";")
            return Let(name, expr, self.pos(tok))
        if self.at_kw("if"):
            return self.if_statement()
        if self.at_kw("while"):
            self.next()
            cond = self.expression()
            body = self.block()
            return While(cond, body, self.pos(tok))
        if self.at_kw("return"):
            self.next()
            expr = None
            if not self.at_symbol(";"):
                expr = self.expression()
            self.expect("symbol", ";")
            return Return(expr, self.pos(tok))
        if self.at_kw("throw"):
            self.next()
            expr = self.expression()
            self.expect("symbol", ";")
            return Throw(expr, self.pos(tok))
        if self.at_kw("try"):
            self.next()
            body = self.block()
            self.expect("kw", "catch")
            self.expect("symbol", "(")
            catch_name = self.expect("ident").text
            self.expect("symbol", ")")
            handler = self.block()
            return Try(body, catch_name, handler, self.pos(tok))
        expr = self.expression()
        if self.at_symbol("="):
            if not isinstance(expr, (Var, FieldAccess, Index)):
                raise self.error("assignment target must be a variable, field, or index", tok)
            self.next()
            value = self.expression()
            self.expect("symbol", ";")
            return Assign(expr, value, self.pos(tok))
        self.expect("symbol", ";")
        return ExprStmt(expr, self.pos(tok))

    def if_statement(self) -> Stmt:
        tok = self.expect("kw", "if")
        cond = self.expression()
        then = self.block()
        orelse: list[Stmt] = []
        if self.at_kw("else"):
            self.next()
            if self.at_kw("if"):
                orelse = [self.if_statement()]
            else:
                orelse = self.block()
        return If(cond, then, orelse, self.pos(tok))

    def expression(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        left = self.and_expr()
        while self.at_kw("or"):
            tok = self.next()
            left = Binary("or", left, self.and_expr(), self.pos(tok))
        return left

    def and_expr(self) -> Expr:
        left = self.comparison()
        while self.at_kw("and"):
            tok = self.next()
            left = Binary("and", left, self.comparison(), self.pos(tok))
        return left

    def comparison(self) -> Expr:
        left = self.additive()
        while self.peek().kind == "symbol" and self.peek().text in _COMPARISONS:
            tok = self.next()
            left = Binary(tok.text, left, self.additive(), self.pos(tok))
        return left

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.peek().kind == "symbol" and self.peek().text in ("+", "-"):
            tok = self.next()
            left = Binary(tok.text, left, self.multiplicative(), self.pos(tok))
        return left

    def multiplicative(self) -> Expr:
        left = self.unary()
        while self.peek().kind == "symbol" and self.peek().text in ("*", "/", "%"):
            tok = self.next()
            left = Binary(tok.text, left, self.unary(), self.pos(tok))
        return left

    def unary(self) -> Expr:
        if self.at_symbol("-"):
            tok = self.next()
            operand = self.unary()
            # fold a negated numeric literal into the literal itself
            if isinstance(operand, Lit) and isinstance(operand.value, (int, float)) \
                    and not isinstance(operand.value, bool):
                return Lit(-operand.value, self.pos(tok))
            return Unary("-", operand, self.pos(tok))
        if self.at_kw("not"):
            tok = self.next()
            return Unary("not", self.unary(), self.pos(tok))
        return self.postfix()

    def postfix(self) -> Expr:
        expr = self.primary()
        while True:
            if self.at_symbol("."):
                tok = self.next()
                name = self.expect("ident").text
                expr = FieldAccess(expr, name, self.pos(tok))
            elif self.at_symbol("["):
                tok = self.next()
                index = self.expression()
                self.expect("symbol", "]")
                expr = Index(expr, index, self.pos(tok))
            else:
                return expr

    def call_args(self) -> list[Expr]:
        self.expect("symbol", "(")
        args: list[Expr] = []
        while not self.at_symbol(")"):
            if args:
                self.expect("symbol", ",")
            args.append(self.expression())
        self.expect("symbol", ")")
        return args

    def primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "int":
            self.next()
            return Lit(int(tok.text), self.pos(tok))
        if tok.kind == "float":
            self.next()
            return Lit(float(tok.text), self.pos(tok))
        if tok.kind == "string":
            self.next()
            return Lit(tok.text, self.pos(tok))
        if self.at_kw("true") or self.at_kw("false"):
            self.next()
            return Lit(tok.text == "true", self.pos(tok))
        if self.at_kw("null"):
            self.next()
            return Lit(None, self.pos(tok))
        if self.at_symbol("("):
            self.next()
            expr = self.expression()
            self.expect("symbol", ")")
            return expr
        if self.at_symbol("["):
            self.next()
            items: list[Expr] = []
            while not self.at_symbol("]"):
                if items:
                    self.expect("symbol", ",")
                items.append(self.expression())
            self.expect("symbol", "]")
            return ListLit(items, self.pos(tok))
        if self.at_symbol("{"):
            self.next()
            fields: list[tuple[str, Expr]] = []
            seen: set[str] = set()
            while not self.at_symbol("}"):
                if fields:
                    self.expect("symbol", ",")
                ktok = self.expect("ident")
                if ktok.text in seen:
                    raise self.error(f"duplicate record field {ktok.text!r}", ktok)
                seen.add(ktok.text)
                self.expect("symbol", ":")
                fields.append((ktok.text, self.expression()))
            self.expect("symbol", "}")
            return RecordLit(fields, self.pos(tok))
        if self.at_symbol("@"):
            self.next()
            name = self.expect("ident").text
            args = self.call_args()
            return BuiltinCall(name, args, self.pos(tok))
        if tok.kind == "ident":
            self.next()
            if self.at_symbol("::"):
                self.next()
                fn_name = self.expect("ident").text
                args = self.call_args()
                return Call(tok.text, fn_name, args, self.pos(tok))
            if self.at_symbol("("):
                args = self.call_args()
                return Call(None, tok.text, args, self.pos(tok))
            return Var(tok.text, self.pos(tok))
        got = tok.text if tok.kind != "eof" else "end of file"
        raise self.error(f"expected an expression, found {got!r}", tok)


def parse_module(source: str, name: str = "main", origin: str = "<string>") -> ModuleAst:
    """Parse one Vex module. Raises ParseError carrying located diagnostics."""
    if not name.isidentifier():
        raise ParseError([Diagnostic(f"module name {name!r} is not a valid identifier", origin)])
    tokens = tokenize(source, origin)
    return _Parser(tokens, origin).module(name)


def const_eval(expr: Expr) -> Value:
    """Evaluate a literal-only expression tree to a Value; raise ValueError otherwise."""
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, ListLit):
        return [const_eval(e) for e in expr.items]
    if isinstance(expr, RecordLit):
        return {k: const_eval(e) for k, e in expr.fields}
    raise ValueError("not a constant literal expression")


def parse_literal(text: str, origin: str = "<literal>") -> Value:
    """Parse a Vex literal (int, float, bool, str, null, list, record) to a Value."""
    tokens = tokenize(text, origin)
    parser = _Parser(tokens, origin)
    expr = parser.expression()
    parser.expect("eof")
    try:
        return const_eval(expr)
    except ValueError:
        raise ParseError([Diagnostic("not a literal", origin, 1, 1)]) from None
