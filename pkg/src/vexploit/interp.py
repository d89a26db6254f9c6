"""Tree-walking Vex interpreter with budgets, sink logging, and hook points.

One step = one statement or expression evaluation. Budget overruns abort the
run (they are not catchable by Vex try/catch); thrown Vex values are catchable.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .errors import VexploitError
from .frontend.ast import (
    Assign, Binary, BuiltinCall, Call, Expr, ExprStmt, FieldAccess, FunctionDecl, If, Index,
    Let, ListLit, Lit, Pos, Program, QualifiedName, RecordLit, Return, Stmt, Throw, Try,
    Unary, Var, While,
)
from .values import FileRef, Value, deep_copy_value, render_value, value_kind

_COMPARISON_OPS = ("==", "!=", "<", "<=", ">", ">=")

_INT_MASK = (1 << 64) - 1
_INT_SIGN = 1 << 63


def wrap_int(x: int) -> int:
    """Two's-complement 64-bit wrap."""
    x &= _INT_MASK
    return x - (1 << 64) if x >= _INT_SIGN else x


@dataclass
class Budgets:
    max_steps: int = 1_000_000
    max_call_depth: int = 512

    def __post_init__(self) -> None:
        if self.max_steps <= 0 or self.max_call_depth <= 0:
            raise ValueError("budgets must be positive")


@dataclass
class FileEvent:
    requested: str
    resolved: str
    allowed: bool


@dataclass
class NetEvent:
    url: str
    body: str


@dataclass
class SinkLog:
    net_events: list[NetEvent] = field(default_factory=list)
    sql_events: list[str] = field(default_factory=list)
    file_events: list[FileEvent] = field(default_factory=list)
    console: list[str] = field(default_factory=list)


@dataclass
class ExecutionOutcome:
    kind: str  # returned | uncaught_exception | step_budget_exceeded | depth_budget_exceeded
    value: Optional[Value]
    error: Optional[str]
    steps_used: int
    max_depth_seen: int
    sinks: SinkLog

    OUTCOMES = ("returned", "uncaught_exception", "step_budget_exceeded", "depth_budget_exceeded")


class Hooks(Protocol):
    """Instrumentation surface. All methods must be cheap; they run per event."""

    def transform_args(self, qname: QualifiedName, args: list[Value]) -> Optional[list[Value]]:
        """Return replacement args for this call, or None to keep them."""

    def on_call_enter(self, qname: QualifiedName, args: list[Value], depth: int) -> None: ...

    def on_call_exit(self, qname: QualifiedName, how: str, value: Optional[Value],
                     depth: int) -> None:
        """how is 'return', 'throw', or 'abort'."""

    def on_branch(self, fn: QualifiedName, pos: Pos, taken: bool, op: Optional[str],
                  lhs: Optional[Value], rhs: Optional[Value]) -> None: ...


class VexThrow(Exception):
    """A Vex-level thrown value; catchable by try/catch."""

    def __init__(self, value: Value):
        self.value = value
        super().__init__(render_value(value))


class _StepAbort(Exception):
    pass


class _DepthAbort(Exception):
    pass


def _vex_error(msg: str) -> VexThrow:
    return VexThrow(msg)


class Interpreter:
    def __init__(self, program: Program, budgets: Budgets,
                 sandbox_root: Optional[str] = None, hooks: Optional[Hooks] = None):
        self.program = program
        self.budgets = budgets
        self.hooks = hooks
        self.sandbox_root = os.path.abspath(sandbox_root) if sandbox_root else None
        self.sinks = SinkLog()
        self.steps = 0
        self.depth = 0
        self.max_depth_seen = 0
        self.current_fn = QualifiedName("<harness>", "<entry>")
        self.functions: dict[QualifiedName, FunctionDecl] = {}
        for mod_name, mod in program.all_modules().items():
            for fn in mod.functions:
                self.functions[QualifiedName(mod_name, fn.name)] = fn

    # --- driver ---

    def run(self, function: QualifiedName, args: list[Value]) -> ExecutionOutcome:
        if function not in self.functions:
            raise VexploitError(f"no such function: {function.render()}")
        kind, value, error = "returned", None, None
        try:
            value = self.call_function(function, [deep_copy_value(a) for a in args])
        except VexThrow as t:
            kind, error = "uncaught_exception", render_value(t.value)
        except _StepAbort:
            kind = "step_budget_exceeded"
        except (_DepthAbort, RecursionError):
            # RecursionError is the host stack giving out before the budget;
            # both mean the interpreted program recursed too deep
            kind = "depth_budget_exceeded"
        return ExecutionOutcome(kind, value, error, self.steps, self.max_depth_seen, self.sinks)

    def call_function(self, qname: QualifiedName, args: list[Value]) -> Value:
        decl = self.functions.get(qname)
        if decl is None:
            raise _vex_error(f"no such function: {qname.render()}")
        if len(args) != decl.arity:
            raise _vex_error(
                f"arity mismatch calling {qname.render()}: expected {decl.arity}, got {len(args)}")
        if self.depth >= self.budgets.max_call_depth:
            raise _DepthAbort()
        hooks = self.hooks
        if hooks is not None:
            replaced = hooks.transform_args(qname, args)
            if replaced is not None:
                args = replaced
        self.depth += 1
        if self.depth > self.max_depth_seen:
            self.max_depth_seen = self.depth
        if hooks is not None:
            hooks.on_call_enter(qname, args, self.depth)
        how: str = "abort"
        result: Optional[Value] = None
        prev_fn = self.current_fn
        self.current_fn = qname
        try:
            env = {p.name: a for p, a in zip(decl.params, args)}
            sig = self.exec_block(decl.body, env)
            result = sig[1] if sig is not None else None
            how = "return"
            return result
        except VexThrow as t:
            how, result = "throw", t.value
            raise
        finally:
            self.current_fn = prev_fn
            if hooks is not None:
                hooks.on_call_exit(qname, how, result, self.depth)
            self.depth -= 1

    # --- statements ---

    def exec_block(self, stmts: list[Stmt], env: dict) -> Optional[tuple[str, Value]]:
        for stmt in stmts:
            sig = self.exec_stmt(stmt, env)
            if sig is not None:
                return sig
        return None

    def exec_stmt(self, stmt: Stmt, env: dict) -> Optional[tuple[str, Value]]:
        self.steps += 1
        if self.steps > self.budgets.max_steps:
            raise _StepAbort()
        cls = type(stmt)
        if cls is Let:
            env[stmt.name] = self.eval(stmt.expr, env)
            return None
        if cls is Assign:
            self._assign(stmt.target, self.eval(stmt.expr, env), env)
            return None
        if cls is ExprStmt:
            self.eval(stmt.expr, env)
            return None
        if cls is If:
            if self._eval_condition(stmt.cond, env):
                return self.exec_block(stmt.then, env)
            return self.exec_block(stmt.orelse, env)
        if cls is While:
            while self._eval_condition(stmt.cond, env):
                sig = self.exec_block(stmt.body, env)
                if sig is not None:
                    return sig
                self.steps += 1
                if self.steps > self.budgets.max_steps:
                    raise _StepAbort()
            return None
        if cls is Return:
            value = self.eval(stmt.expr, env) if stmt.expr is not None else None
            return ("ret", value)
        if cls is Throw:
            raise VexThrow(self.eval(stmt.expr, env))
        if cls is Try:
            try:
                return self.exec_block(stmt.body, env)
            except VexThrow as t:
                env[stmt.catch_name] = t.value
                return self.exec_block(stmt.handler, env)
        raise VexploitError(f"unknown statement {stmt!r}")

    def _assign(self, target: Expr, value: Value, env: dict) -> None:
        if isinstance(target, Var):
            if target.name not in env:
                raise _vex_error(f"undefined variable: {target.name}")
            env[target.name] = value
            return
        if isinstance(target, FieldAccess):
            obj = self.eval(target.obj, env)
            if not isinstance(obj, dict):
                raise _vex_error("type error: field assignment on non-record")
            obj[target.name] = value
            return
        if isinstance(target, Index):
            obj = self.eval(target.obj, env)
            idx = self.eval(target.index, env)
            if isinstance(obj, list):
                if not isinstance(idx, int) or isinstance(idx, bool):
                    raise _vex_error("type error: list index must be an int")
                if idx < 0 or idx >= len(obj):
                    raise _vex_error("index out of range")
                obj[idx] = value
                return
            if isinstance(obj, dict):
                if not isinstance(idx, str):
                    raise _vex_error("type error: record index must be a string")
                obj[idx] = value
                return
            raise _vex_error("type error: index assignment on non-container")
        raise _vex_error("invalid assignment target")

    def _eval_condition(self, cond: Expr, env: dict) -> bool:
        """Evaluate a branch condition, firing the branch hook with operands
        for comparison operators over numbers, strings, and booleans."""
        hooks = self.hooks
        if isinstance(cond, Binary) and cond.op in _COMPARISON_OPS:
            self.steps += 1
            if self.steps > self.budgets.max_steps:
                raise _StepAbort()
            lhs = self.eval(cond.lhs, env)
            rhs = self.eval(cond.rhs, env)
            result = self._binary_op(cond.op, lhs, rhs)
            if not isinstance(result, bool):
                raise _vex_error("type error: condition must be a boolean")
            if hooks is not None:
                comparable = all(
                    value_kind(v) in ("int", "float", "bool", "str") for v in (lhs, rhs))
                if comparable:
                    hooks.on_branch(self.current_fn, cond.pos, result, cond.op, lhs, rhs)
                else:
                    hooks.on_branch(self.current_fn, cond.pos, result, None, None, None)
            return result
        value = self.eval(cond, env)
        if not isinstance(value, bool):
            raise _vex_error("type error: condition must be a boolean")
        if hooks is not None:
            hooks.on_branch(self.current_fn, cond.pos, value, None, None, None)
        return value

    # --- expressions ---

    def eval(self, expr: Expr, env: dict) -> Value:
        self.steps += 1
        if self.steps > self.budgets.max_steps:
            raise _StepAbort()
        cls = type(expr)
        if cls is Var:
            try:
                return env[expr.name]
            except KeyError:
                raise _vex_error(f"undefined variable: {expr.name}") from None
        if cls is Lit:
            v = expr.value
            # literal lists/records are fresh per evaluation
            if isinstance(v, (list, dict)):
                return deep_copy_value(v)
            return v
        if cls is Binary:
            op = expr.op
            if op == "and":
                lhs = self.eval(expr.lhs, env)
                if not isinstance(lhs, bool):
                    raise _vex_error("type error: 'and' needs booleans")
                if not lhs:
                    return False
                rhs = self.eval(expr.rhs, env)
                if not isinstance(rhs, bool):
                    raise _vex_error("type error: 'and' needs booleans")
                return rhs
            if op == "or":
                lhs = self.eval(expr.lhs, env)
                if not isinstance(lhs, bool):
                    raise _vex_error("type error: 'or' needs booleans")
                if lhs:
                    return True
                rhs = self.eval(expr.rhs, env)
                if not isinstance(rhs, bool):
                    raise _vex_error("type error: 'or' needs booleans")
                return rhs
            return self._binary_op(op, self.eval(expr.lhs, env), self.eval(expr.rhs, env))
        if cls is BuiltinCall:
            return self._builtin(expr, env)
        if cls is Call:
            target = expr.resolved
            if target is None:
                target = QualifiedName(expr.module or self.current_fn.module, expr.name)
            args = [self.eval(a, env) for a in expr.args]
            return self.call_function(target, args)
        if cls is FieldAccess:
            obj = self.eval(expr.obj, env)
            if not isinstance(obj, dict):
                raise _vex_error("type error: field access on non-record")
            if expr.name not in obj:
                raise _vex_error(f"no field: {expr.name}")
            return obj[expr.name]
        if cls is Index:
            obj = self.eval(expr.obj, env)
            idx = self.eval(expr.index, env)
            if isinstance(obj, list) or isinstance(obj, str):
                if not isinstance(idx, int) or isinstance(idx, bool):
                    raise _vex_error("type error: index must be an int")
                if idx < 0 or idx >= len(obj):
                    raise _vex_error("index out of range")
                return obj[idx]
            if isinstance(obj, dict):
                if not isinstance(idx, str):
                    raise _vex_error("type error: record index must be a string")
                if idx not in obj:
                    raise _vex_error(f"no field: {idx}")
                return obj[idx]
            raise _vex_error("type error: indexing non-container")
        if cls is Unary:
            operand = self.eval(expr.operand, env)
            if expr.op == "-":
                if isinstance(operand, bool) or not isinstance(operand, (int, float)):
                    raise _vex_error("type error: unary '-' needs a number")
                return wrap_int(-operand) if isinstance(operand, int) else -operand
            if not isinstance(operand, bool):
                raise _vex_error("type error: 'not' needs a boolean")
            return not operand
        if cls is ListLit:
            return [self.eval(a, env) for a in expr.items]
        if cls is RecordLit:
            return {k: self.eval(v, env) for k, v in expr.fields}
        raise VexploitError(f"unknown expression {expr!r}")

    def _binary_op(self, op: str, lhs: Value, rhs: Value) -> Value:
        if op == "==":
            return self._values_eq(lhs, rhs)
        if op == "!=":
            return not self._values_eq(lhs, rhs)
        lnum = isinstance(lhs, (int, float)) and not isinstance(lhs, bool)
        rnum = isinstance(rhs, (int, float)) and not isinstance(rhs, bool)
        if op in ("<", "<=", ">", ">="):
            if lnum and rnum:
                pass
            elif isinstance(lhs, str) and isinstance(rhs, str):
                pass
            else:
                raise _vex_error(f"type error: {op!r} needs two numbers or two strings")
            if op == "<":
                return lhs < rhs
            if op == "<=":
                return lhs <= rhs
            if op == ">":
                return lhs > rhs
            return lhs >= rhs
        if op == "+":
            if isinstance(lhs, str) and isinstance(rhs, str):
                return lhs + rhs
            if lnum and rnum:
                result = lhs + rhs
                return wrap_int(result) if isinstance(result, int) else result
            raise _vex_error("type error: '+' needs two numbers or two strings")
        if not (lnum and rnum):
            raise _vex_error(f"type error: {op!r} needs two numbers")
        if op == "-":
            result = lhs - rhs
            return wrap_int(result) if isinstance(result, int) else result
        if op == "*":
            result = lhs * rhs
            return wrap_int(result) if isinstance(result, int) else result
        if op == "/":
            if rhs == 0:
                raise _vex_error("division by zero")
            if isinstance(lhs, int) and isinstance(rhs, int):
                q = abs(lhs) // abs(rhs)
                return wrap_int(q if (lhs < 0) == (rhs < 0) else -q)
            return lhs / rhs
        if op == "%":
            if rhs == 0:
                raise _vex_error("division by zero")
            if isinstance(lhs, int) and isinstance(rhs, int):
                r = abs(lhs) % abs(rhs)
                return wrap_int(-r if lhs < 0 else r)
            return math.fmod(lhs, rhs)
        raise VexploitError(f"unknown operator {op!r}")

    @staticmethod
    def _values_eq(a: Value, b: Value) -> bool:
        from .values import values_equal

        return values_equal(a, b)

    # --- builtins ---

    def _builtin(self, expr: BuiltinCall, env: dict) -> Value:
        name = expr.name
        args = [self.eval(a, env) for a in expr.args]
        if name == "len":
            v = args[0]
            if isinstance(v, (str, list, dict)):
                return len(v)
            raise _vex_error("type error: @len needs a string, list, or record")
        if name == "substr":
            s, a, b = args
            if not isinstance(s, str) or isinstance(a, bool) or isinstance(b, bool) \
                    or not isinstance(a, int) or not isinstance(b, int):
                raise _vex_error("type error: @substr(str, int, int)")
            lo = max(0, min(a, len(s)))
            hi = max(0, min(b, len(s)))
            return s[lo:hi] if hi > lo else ""
        if name == "concat":
            a, b = args
            if not isinstance(a, str) or not isinstance(b, str):
                raise _vex_error("type error: @concat needs two strings")
            return a + b
        if name == "contains":
            s, sub = args
            if not isinstance(s, str) or not isinstance(sub, str):
                raise _vex_error("type error: @contains needs two strings")
            return sub in s
        if name == "starts_with":
            s, prefix = args
            if not isinstance(s, str) or not isinstance(prefix, str):
                raise _vex_error("type error: @starts_with needs two strings")
            return s.startswith(prefix)
        if name == "to_int":
            v = args[0]
            # parses decimal strings only; any other input is a soft failure
            if isinstance(v, str):
                try:
                    return wrap_int(int(v.strip() or "x", 10))
                except ValueError:
                    raise _vex_error("bad int") from None
            raise _vex_error("bad int")
        if name == "to_float":
            v = args[0]
            if isinstance(v, str):
                try:
                    return float(v.strip())
                except ValueError:
                    raise _vex_error("bad float") from None
            raise _vex_error("bad float")
        if name == "to_str":
            return render_value(args[0])
        if name == "char_at":
            s, i = args
            if not isinstance(s, str) or isinstance(i, bool) or not isinstance(i, int):
                raise _vex_error("type error: @char_at(str, int)")
            if i < 0 or i >= len(s):
                raise _vex_error("index out of range")
            return s[i]
        if name == "open":
            return self._open(args[0])
        if name == "read_file":
            ref = args[0]
            if not isinstance(ref, FileRef):
                raise _vex_error("type error: @read_file needs a file")
            try:
                return ref.read_text()
            except OSError:
                raise _vex_error("no such file") from None
        if name == "net_send":
            url, body = args
            if not isinstance(url, str) or not isinstance(body, str):
                raise _vex_error("type error: @net_send needs two strings")
            self.sinks.net_events.append(NetEvent(url, body))
            return None
        if name == "sql_exec":
            q = args[0]
            if not isinstance(q, str):
                raise _vex_error("type error: @sql_exec needs a string")
            self.sinks.sql_events.append(q)
            return None
        if name == "log":
            self.sinks.console.append(render_value(args[0]))
            return None
        raise _vex_error(f"unknown builtin @{name}")

    def _open(self, requested: Value) -> FileRef:
        if not isinstance(requested, str):
            raise _vex_error("type error: @open needs a string path")
        root = self.sandbox_root
        if root is None:
            self.sinks.file_events.append(FileEvent(requested, requested, False))
            raise _vex_error("sandbox violation")
        resolved = os.path.abspath(os.path.join(root, requested))
        allowed = resolved == root or resolved.startswith(root + os.sep)
        self.sinks.file_events.append(FileEvent(requested, resolved, allowed))
        if not allowed:
            raise _vex_error("sandbox violation")
        return FileRef(path=os.path.relpath(resolved, root), root=root)


def execute(program: Program, function: QualifiedName, args: list[Value],
            budgets: Optional[Budgets] = None, sandbox_root: Optional[str] = None,
            hooks: Optional[Hooks] = None) -> ExecutionOutcome:
    """Run one function call to completion under budgets; never raises for
    Vex-level failures (they are folded into the outcome)."""
    budgets = budgets or Budgets()
    interp = Interpreter(program, budgets, sandbox_root, hooks)
    # each interpreted call costs a dozen-odd host frames; the limit is
    # process-global so only ever raise it, lowering would race other threads
    needed = 2000 + 16 * budgets.max_call_depth
    if sys.getrecursionlimit() < needed:
        sys.setrecursionlimit(needed)
    return interp.run(function, args)
