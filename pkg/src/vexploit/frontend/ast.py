"""AST node types for the Vex mini-language.

Dataclass equality is structural: source positions carry compare=False so two
parses of the same text (or a parse of rendered output) compare equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from ..values import Value, quote_string, render_literal


@dataclass(frozen=True)
class Pos:
    line: int
    col: int


NO_POS = Pos(0, 0)


@dataclass(frozen=True, order=True)
class QualifiedName:
    module: str
    function: str

    def render(self) -> str:
        return f"{self.module}::{self.function}"

    @staticmethod
    def parse(text: str) -> "QualifiedName":
        mod, sep, fn = text.partition("::")
        if not sep or not mod or not fn:
            raise ValueError(f"not a qualified name: {text!r}")
        return QualifiedName(mod, fn)


# --- expressions ---


@dataclass
class Lit:
    value: Value
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Var:
    name: str
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class FieldAccess:
    obj: "Expr"
    name: str
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Index:
    obj: "Expr"
    index: "Expr"
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Unary:
    op: str  # "-" | "not"
    operand: "Expr"
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Binary:
    op: str  # + - * / % == != < <= > >= and or
    lhs: "Expr"
    rhs: "Expr"
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Call:
    module: Optional[str]  # None = same-module call
    name: str
    args: list["Expr"]
    pos: Pos = field(default=NO_POS, compare=False)
    resolved: Optional[QualifiedName] = field(default=None, compare=False)


@dataclass
class BuiltinCall:
    name: str
    args: list["Expr"]
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class ListLit:
    items: list["Expr"]
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class RecordLit:
    fields: list[tuple[str, "Expr"]]
    pos: Pos = field(default=NO_POS, compare=False)


Expr = Union[Lit, Var, FieldAccess, Index, Unary, Binary, Call, BuiltinCall, ListLit, RecordLit]


# --- statements ---


@dataclass
class Let:
    name: str
    expr: Expr
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Assign:
    target: Expr  # Var | FieldAccess | Index
    expr: Expr
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class If:
    cond: Expr
    then: list["Stmt"]
    orelse: list["Stmt"]
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class While:
    cond: Expr
    body: list["Stmt"]
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Return:
    expr: Optional[Expr]
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Throw:
    expr: Expr
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class Try:
    body: list["Stmt"]
    catch_name: str
    handler: list["Stmt"]
    pos: Pos = field(default=NO_POS, compare=False)


@dataclass
class ExprStmt:
    expr: Expr
    pos: Pos = field(default=NO_POS, compare=False)


Stmt = Union[Let, Assign, If, While, Return, Throw, Try, ExprStmt]


@dataclass
class Param:
    name: str
    annotation: Optional[str] = None  # int float bool str list record file


@dataclass
class FunctionDecl:
    name: str
    public: bool
    params: list[Param]
    body: list[Stmt]
    pos: Pos = field(default=NO_POS, compare=False)

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass
class ModuleAst:
    name: str
    functions: list[FunctionDecl]

    def function(self, name: str) -> Optional[FunctionDecl]:
        for fn in self.functions:
            if fn.name == name:
                return fn
        return None


@dataclass
class Program:
    """A resolved set of modules; every Call node carries its resolved target."""

    project_modules: dict[str, ModuleAst]
    library_modules: dict[str, ModuleAst]
    test_modules: dict[str, ModuleAst]

    def all_modules(self) -> dict[str, ModuleAst]:
        merged: dict[str, ModuleAst] = {}
        merged.update(self.library_modules)
        merged.update(self.project_modules)
        merged.update(self.test_modules)
        return merged

    def lookup(self, qname: QualifiedName) -> Optional[FunctionDecl]:
        mod = self.all_modules().get(qname.module)
        return mod.function(qname.function) if mod else None

    def project_scope(self) -> set[QualifiedName]:
        return {
            QualifiedName(m, fn.name)
            for m, mod in self.project_modules.items()
            for fn in mod.functions
        }


def walk_exprs(node: Union[Expr, Stmt]) -> Iterator[Expr]:
    """Yield every expression in the subtree rooted at node, node first."""
    if isinstance(node, (Let, Throw, ExprStmt)):
        yield from walk_exprs(node.expr)
        return
    if isinstance(node, Assign):
        yield from walk_exprs(node.target)
        yield from walk_exprs(node.expr)
        return
    if isinstance(node, If):
        yield from walk_exprs(node.cond)
        for s in node.then + node.orelse:
            yield from walk_exprs(s)
        return
    if isinstance(node, While):
        yield from walk_exprs(node.cond)
        for s in node.body:
            yield from walk_exprs(s)
        return
    if isinstance(node, Return):
        if node.expr is not None:
            yield from walk_exprs(node.expr)
        return
    if isinstance(node, Try):
        for s in node.body + node.handler:
            yield from walk_exprs(s)
        return
    # expression nodes
    yield node
    if isinstance(node, (FieldAccess,)):
        yield from walk_exprs(node.obj)
    elif isinstance(node, Index):
        yield from walk_exprs(node.obj)
        yield from walk_exprs(node.index)
    elif isinstance(node, Unary):
        yield from walk_exprs(node.operand)
    elif isinstance(node, Binary):
        yield from walk_exprs(node.lhs)
        yield from walk_exprs(node.rhs)
    elif isinstance(node, (Call, BuiltinCall)):
        for a in node.args:
            yield from walk_exprs(a)
    elif isinstance(node, ListLit):
        for a in node.items:
            yield from walk_exprs(a)
    elif isinstance(node, RecordLit):
        for _, a in node.fields:
            yield from walk_exprs(a)


def function_calls(fn: FunctionDecl) -> Iterator[Call]:
    for stmt in fn.body:
        for expr in walk_exprs(stmt):
            if isinstance(expr, Call):
                yield expr


# --- rendering (canonical pretty printer; parse(render(ast)) == ast) ---

_PRECEDENCE = {
    "or": 1,
    "and": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4,
    "*": 5, "/": 5, "%": 5,
}


def render_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, Lit):
        return render_literal(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, FieldAccess):
        return f"{render_expr(e.obj, 9)}.{e.name}"
    if isinstance(e, Index):
        return f"{render_expr(e.obj, 9)}[{render_expr(e.index)}]"
    if isinstance(e, Unary):
        inner = render_expr(e.operand, 8)
        text = f"-{inner}" if e.op == "-" else f"not {inner}"
        return f"({text})" if parent_prec > 7 else text
    if isinstance(e, Binary):
        prec = _PRECEDENCE[e.op]
        text = f"{render_expr(e.lhs, prec)} {e.op} {render_expr(e.rhs, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    if isinstance(e, Call):
        args = ", ".join(render_expr(a) for a in e.args)
        prefix = f"{e.module}::" if e.module else ""
        return f"{prefix}{e.name}({args})"
    if isinstance(e, BuiltinCall):
        args = ", ".join(render_expr(a) for a in e.args)
        return f"@{e.name}({args})"
    if isinstance(e, ListLit):
        return "[" + ", ".join(render_expr(a) for a in e.items) + "]"
    if isinstance(e, RecordLit):
        return "{" + ", ".join(f"{k}: {render_expr(v)}" for k, v in e.fields) + "}"
    raise TypeError(f"unknown expr {e!r}")


def _render_block(stmts: list[Stmt], indent: int) -> list[str]:
    lines = ["{"]
    for s in stmts:
        lines.extend(_render_stmt(s, indent + 1))
    lines.append("    " * indent + "}")
    return lines


def _render_stmt(s: Stmt, indent: int) -> list[str]:
    pad = "    " * indent
    if isinstance(s, Let):
        return [f"{pad}let {s.name} = {render_expr(s.expr)};"]
    if isinstance(s, Assign):
        return [f"{pad}{render_expr(s.target)} = {render_expr(s.expr)};"]
    if isinstance(s, If):
        block = _render_block(s.then, indent)
        lines = [f"{pad}if {render_expr(s.cond)} " + block[0]] + block[1:]
        if s.orelse:
            eblock = _render_block(s.orelse, indent)
            lines[-1] = lines[-1] + " else " + eblock[0]
            lines.extend(eblock[1:])
        return lines
    if isinstance(s, While):
        block = _render_block(s.body, indent)
        return [f"{pad}while {render_expr(s.cond)} " + block[0]] + block[1:]
    if isinstance(s, Return):
        if s.expr is None:
            return [f"{pad}return;"]
        return [f"{pad}return {render_expr(s.expr)};"]
    if isinstance(s, Throw):
        return [f"{pad}throw {render_expr(s.expr)};"]
    if isinstance(s, Try):
        tblock = _render_block(s.body, indent)
        hblock = _render_block(s.handler, indent)
        lines = [f"{pad}try " + tblock[0]] + tblock[1:]
        lines[-1] = lines[-1] + f" catch ({s.catch_name}) " + hblock[0]
        lines.extend(hblock[1:])
        return lines
    if isinstance(s, ExprStmt):
        return [f"{pad}{render_expr(s.expr)};"]
    raise TypeError(f"unknown stmt {s!r}")


def render_module(mod: ModuleAst) -> str:
    chunks: list[str] = []
    for fn in mod.functions:
        vis = "pub fn" if fn.public else "fn"
        params = ", ".join(
            p.name if p.annotation is None else f"{p.name}: {p.annotation}" for p in fn.params
        )
        block = _render_block(fn.body, 0)
        chunks.append("\n".join([f"{vis} {fn.name}({params}) " + block[0]] + block[1:]))
    return "\n\n".join(chunks) + "\n"
