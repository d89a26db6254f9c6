"""Execution instrumentation: call events, dynamic call graph, branch trace,
first-hit argument capture, and top-level parameter substitution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import InstrumentationError
from .frontend.ast import Pos, Program, QualifiedName
from .interp import Budgets, ExecutionOutcome, execute
from .values import Value, deep_copy_value


@dataclass(frozen=True)
class CallEvent:
    kind: str  # "push" | "pop"
    function: QualifiedName
    depth_after: int
    args: Optional[tuple[Value, ...]] = None  # push only


class BranchSite(NamedTuple):
    function: QualifiedName
    line: int
    col: int

    def render(self) -> str:
        return f"{self.function.render()}@{self.line}:{self.col}"


class BranchObservation(NamedTuple):
    site: BranchSite
    taken: bool
    op: Optional[str]  # comparison operator, or None when operands were not recorded
    lhs: Optional[Value]
    rhs: Optional[Value]


@dataclass
class ParamSubstitution:
    """Replace one argument of the outermost call to `function` before it runs."""

    function: QualifiedName
    position: int
    value: Value


@dataclass
class DynamicCallGraph:
    edges: set[tuple[QualifiedName, QualifiedName]]
    path: list[QualifiedName]  # call stack, outermost first, at first target entry
    capture_args: list[Value]


@dataclass
class InstrumentedRun:
    outcome: ExecutionOutcome
    events: list[CallEvent]
    dyn_graph: Optional[DynamicCallGraph]
    target_hit_count: int
    branch_trace: list[BranchObservation]
    functions_executed: set[QualifiedName]
    target_returned: bool = False
    target_return: Optional[Value] = None

    @property
    def capture_args(self) -> Optional[list[Value]]:
        return self.dyn_graph.capture_args if self.dyn_graph else None


class CollectingHooks:
    """Hooks implementation that records everything the pipeline needs."""

    def __init__(self, target: QualifiedName, substitution: Optional[ParamSubstitution] = None):
        self.target = target
        self.substitution = substitution
        self.substitution_applied = False
        self.events: list[CallEvent] = []
        self.branch_trace: list[BranchObservation] = []
        self.functions_executed: set[QualifiedName] = set()
        self.stack: list[QualifiedName] = []
        self.edges: set[tuple[QualifiedName, QualifiedName]] = set()
        self.target_hit_count = 0
        self.first_hit_path: Optional[list[QualifiedName]] = None
        self.first_hit_args: Optional[list[Value]] = None
        self._first_hit_open_depth: Optional[int] = None
        self.target_returned = False
        self.target_return: Optional[Value] = None

    def transform_args(self, qname: QualifiedName, args: list[Value]) -> Optional[list[Value]]:
        sub = self.substitution
        if sub is None or self.substitution_applied or qname != sub.function:
            return None
        self.substitution_applied = True
        replaced = list(args)
        replaced[sub.position] = deep_copy_value(sub.value)
        return replaced

    def on_call_enter(self, qname: QualifiedName, args: list[Value], depth: int) -> None:
        if self.stack:
            self.edges.add((self.stack[-1], qname))
        self.stack.append(qname)
        self.functions_executed.add(qname)
        snapshot = tuple(deep_copy_value(a) for a in args)
        self.events.append(CallEvent("push", qname, depth, snapshot))
        if qname == self.target:
            self.target_hit_count += 1
            if self.first_hit_path is None:
                self.first_hit_path = list(self.stack)
                self.first_hit_args = list(snapshot)
                self._first_hit_open_depth = depth

    def on_call_exit(self, qname: QualifiedName, how: str, value: Optional[Value],
                     depth: int) -> None:
        if self._first_hit_open_depth == depth and qname == self.target \
                and not self.target_returned and how == "return":
            self.target_returned = True
            self.target_return = deep_copy_value(value)
            self._first_hit_open_depth = None
        self.stack.pop()
        self.events.append(CallEvent("pop", qname, depth - 1))

    def on_branch(self, fn: QualifiedName, pos: Pos, taken: bool, op: Optional[str],
                  lhs: Optional[Value], rhs: Optional[Value]) -> None:
        self.branch_trace.append(
            BranchObservation(BranchSite(fn, pos.line, pos.col), taken, op, lhs, rhs))


def collect_dynamic_call_graph(events: list[CallEvent],
                               target: QualifiedName) -> Optional[DynamicCallGraph]:
    """Replay an event stream into a dynamic call graph with first-hit capture.

    Raises InstrumentationError on an unbalanced stream.
    """
    stack: list[QualifiedName] = []
    edges: set[tuple[QualifiedName, QualifiedName]] = set()
    path: Optional[list[QualifiedName]] = None
    capture: Optional[list[Value]] = None
    for event in events:
        if event.kind == "push":
            if stack:
                edges.add((stack[-1], event.function))
            stack.append(event.function)
            if event.function == target and path is None:
                path = list(stack)
                capture = list(event.args or ())
        elif event.kind == "pop":
            if not stack or stack[-1] != event.function:
                raise InstrumentationError("unbalanced call events: stray pop")
            stack.pop()
        else:
            raise InstrumentationError(f"unknown event kind {event.kind!r}")
    if stack:
        raise InstrumentationError("unbalanced call events: unclosed pushes")
    if path is None:
        return None
    return DynamicCallGraph(edges, path, capture or [])


def run_instrumented(
    program: Program,
    entry: QualifiedName,
    args: list[Value],
    target: QualifiedName,
    substitution: Optional[ParamSubstitution] = None,
    budgets: Optional[Budgets] = None,
    sandbox_root: Optional[str] = None,
) -> InstrumentedRun:
    """Execute entry(args) recording events; capture survives later budget aborts."""
    if substitution is not None:
        decl = program.lookup(substitution.function)
        if decl is None:
            raise InstrumentationError(
                f"substitution targets unknown function {substitution.function.render()}")
        if not 0 <= substitution.position < decl.arity:
            raise InstrumentationError(
                f"substitution position {substitution.position} out of range for "
                f"{substitution.function.render()} (arity {decl.arity})")
    hooks = CollectingHooks(target, substitution)
    outcome = execute(program, entry, args, budgets, sandbox_root, hooks)
    if hooks.stack:
        raise InstrumentationError("unbalanced call events after run")
    dyn: Optional[DynamicCallGraph] = None
    if hooks.first_hit_path is not None:
        dyn = DynamicCallGraph(set(hooks.edges), hooks.first_hit_path, hooks.first_hit_args or [])
    return InstrumentedRun(
        outcome=outcome,
        events=hooks.events,
        dyn_graph=dyn,
        target_hit_count=hooks.target_hit_count,
        branch_trace=hooks.branch_trace,
        functions_executed=hooks.functions_executed,
        target_returned=hooks.target_returned,
        target_return=hooks.target_return,
    )
