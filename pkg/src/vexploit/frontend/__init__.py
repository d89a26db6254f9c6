"""Vex language frontend: lexer, parser, resolver, and AST utilities."""

from .ast import (
    Assign, Binary, BuiltinCall, Call, Expr, ExprStmt, FieldAccess, FunctionDecl, If, Index,
    Let, ListLit, Lit, ModuleAst, Param, Pos, Program, QualifiedName, RecordLit, Return,
    Stmt, Throw, Try, Unary, Var, While, function_calls, render_expr, render_module,
    walk_exprs,
)
from .lexer import Token, tokenize
from .parser import const_eval, parse_literal, parse_module
from .resolver import BUILTIN_ARITY, resolve_program

__all__ = [
    "Assign", "Binary", "BuiltinCall", "Call", "Expr", "ExprStmt", "FieldAccess",
    "FunctionDecl", "If", "Index", "Let", "ListLit", "Lit", "ModuleAst", "Param", "Pos",
    "Program", "QualifiedName", "RecordLit", "Return", "Stmt", "Throw", "Try", "Unary",
    "Var", "While", "function_calls", "render_expr", "render_module", "walk_exprs",
    "Token", "tokenize", "const_eval", "parse_literal", "parse_module",
    "BUILTIN_ARITY", "resolve_program",
]
