"""Static call graph construction, path enumeration, entry-point discovery,
and extraction of the conditional guards that dominate each call edge."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .frontend.ast import (
    Assign,
    Call,
    Expr,
    ExprStmt,
    If,
    Let,
    Pos,
    Program,
    QualifiedName,
    Return,
    Stmt,
    Throw,
    Try,
    While,
    function_calls,
    walk_exprs,
)
from .instrument import BranchSite

MAX_PATHS = 32
_ENUMERATION_CAP = 4096  # safety bound on raw path enumeration before sorting


@dataclass
class StaticCallGraph:
    nodes: set[QualifiedName]
    edges: dict[tuple[QualifiedName, QualifiedName], Pos]  # first occurrence wins
    project_scope: set[QualifiedName]

    def successors(self, fn: QualifiedName) -> list[QualifiedName]:
        return self._adjacency.get(fn, [])

    def callers_of(self, fn: QualifiedName) -> list[QualifiedName]:
        return sorted({a for (a, b) in self.edges if b == fn})

    def __post_init__(self) -> None:
        adjacency: dict[QualifiedName, list[QualifiedName]] = {}
        for caller, callee in self.edges:
            adjacency.setdefault(caller, []).append(callee)
        for caller in adjacency:
            adjacency[caller] = sorted(set(adjacency[caller]))
        self._adjacency = adjacency


@dataclass(frozen=True)
class GuardBranch:
    site: BranchSite
    want_true: bool


@dataclass
class CallPath:
    nodes: list[QualifiedName]
    # guards[i] protects the call from nodes[i] to nodes[i+1]
    guards: list[list[GuardBranch]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    def render(self) -> str:
        return " -> ".join(q.render() for q in self.nodes)


@dataclass
class EntryCandidate:
    function: QualifiedName
    rank: int
    path: CallPath
    params: list[tuple[str, Optional[str]]]  # (name, annotation)

    @property
    def arity(self) -> int:
        return len(self.params)


def build_call_graph(program: Program) -> StaticCallGraph:
    """Graph over project and library functions; test modules are excluded."""
    nodes: set[QualifiedName] = set()
    edges: dict[tuple[QualifiedName, QualifiedName], Pos] = {}
    modules = dict(program.project_modules)
    modules.update(program.library_modules)
    for mod_name, mod in sorted(modules.items()):
        for decl in mod.functions:
            caller = QualifiedName(mod_name, decl.name)
            nodes.add(caller)
            for call in function_calls(decl):
                if call.resolved is None:
                    continue
                key = (caller, call.resolved)
                if key not in edges:
                    edges[key] = call.pos
    project_scope = {QualifiedName(m, d.name)
                     for m, mod in program.project_modules.items()
                     for d in mod.functions}
    return StaticCallGraph(nodes, edges, project_scope)


def find_paths(graph: StaticCallGraph, src: QualifiedName, dst: QualifiedName,
               max_paths: int = MAX_PATHS) -> list[list[QualifiedName]]:
    """All simple paths from src to dst, shortest first, ties lexicographic."""
    if src not in graph.nodes or dst not in graph.nodes:
        return []
    found: list[list[QualifiedName]] = []
    on_path: set[QualifiedName] = set()

    def dfs(node: QualifiedName, trail: list[QualifiedName]) -> None:
        if len(found) >= _ENUMERATION_CAP:
            return
        if node == dst:
            found.append(list(trail))
            return
        for nxt in graph.successors(node):
            if nxt in on_path:
                continue
            on_path.add(nxt)
            trail.append(nxt)
            dfs(nxt, trail)
            trail.pop()
            on_path.discard(nxt)

    on_path.add(src)
    dfs(src, [src])
    found.sort(key=lambda p: (len(p), [q.render() for q in p]))
    return found[:max_paths]


def guard_branches(program: Program, caller: QualifiedName,
                   callee: QualifiedName) -> list[GuardBranch]:
    """Conditionals that are AST ancestors of any call from caller to callee.

    want_true says which way each guard must evaluate for control to reach
    the call: then-block or loop body means True, else-block means False.
    """
    decl = program.lookup(caller)
    if decl is None:
        return []
    collected: list[GuardBranch] = []
    seen: set[tuple[BranchSite, bool]] = set()
    unguarded_route = False

    def expr_has_call(expr: Expr) -> bool:
        return any(isinstance(e, Call) and e.resolved == callee for e in walk_exprs(expr))

    def stmt_exprs(stmt: Stmt) -> list[Expr]:
        if isinstance(stmt, Assign):
            return [stmt.target, stmt.expr]
        if isinstance(stmt, (Let, Return, Throw, ExprStmt)):
            return [stmt.expr] if stmt.expr is not None else []
        return []

    def record(active: list[GuardBranch]) -> None:
        nonlocal unguarded_route
        if not active:
            unguarded_route = True
            return
        for guard in active:
            key = (guard.site, guard.want_true)
            if key not in seen:
                seen.add(key)
                collected.append(guard)

    def visit(stmts: list[Stmt], active: list[GuardBranch]) -> None:
        for stmt in stmts:
            for expr in stmt_exprs(stmt):
                if expr_has_call(expr):
                    record(active)
            if isinstance(stmt, If):
                if expr_has_call(stmt.cond):
                    record(active)
                site = BranchSite(caller, stmt.cond.pos.line, stmt.cond.pos.col)
                visit(stmt.then, active + [GuardBranch(site, True)])
                visit(stmt.orelse, active + [GuardBranch(site, False)])
            elif isinstance(stmt, While):
                if expr_has_call(stmt.cond):
                    record(active)
                site = BranchSite(caller, stmt.cond.pos.line, stmt.cond.pos.col)
                visit(stmt.body, active + [GuardBranch(site, True)])
            elif isinstance(stmt, Try):
                visit(stmt.body, active)
                visit(stmt.handler, active)

    visit(decl.body, [])
    # a call reachable with no enclosing conditional makes the hop unconditional
    return [] if unguarded_route else collected


def annotate_path(program: Program, nodes: list[QualifiedName]) -> CallPath:
    guards = [guard_branches(program, nodes[i], nodes[i + 1]) for i in range(len(nodes) - 1)]
    return CallPath(list(nodes), guards)


def discover_entries(graph: StaticCallGraph, program: Program,
                     vulnerable: QualifiedName) -> list[EntryCandidate]:
    """Public project functions that can reach the vulnerable function.

    Ordered so that functions nothing else in the project calls come first,
    then by shortest path length, then by qualified name; rank is the index
    in that order.
    """
    candidates: list[tuple[bool, int, str, QualifiedName, list[QualifiedName]]] = []
    for fn in sorted(graph.project_scope):
        decl = program.lookup(fn)
        if decl is None or not decl.public:
            continue
        paths = find_paths(graph, fn, vulnerable)
        if not paths:
            continue
        has_incoming = any(caller in graph.project_scope
                           for (caller, callee) in graph.edges if callee == fn)
        candidates.append((has_incoming, len(paths[0]), fn.render(), fn, paths[0]))
    candidates.sort(key=lambda t: (t[0], t[1], t[2]))
    result = []
    for rank, (_, _, _, fn, best) in enumerate(candidates):
        decl = program.lookup(fn)
        assert decl is not None
        params = [(p.name, p.annotation) for p in decl.params]
        result.append(EntryCandidate(fn, rank, annotate_path(program, best), params))
    return result


def to_dot(graph: StaticCallGraph, vulnerable: Optional[QualifiedName] = None,
           entries: Optional[list[QualifiedName]] = None) -> str:
    entry_set = set(entries or [])
    lines = ["digraph callgraph {", "    rankdir=LR;"]
    for node in sorted(graph.nodes):
        attrs = []
        if node == vulnerable:
            attrs.append('color=red')
            attrs.append('penwidth=2')
        if node in entry_set:
            attrs.append('shape=box')
        if node in graph.project_scope:
            attrs.append('style=filled')
            attrs.append('fillcolor=lightgrey')
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        lines.append(f'    "{node.render()}"{suffix};')
    for caller, callee in sorted(graph.edges):
        lines.append(f'    "{caller.render()}" -> "{callee.render()}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def edge_listing(graph: StaticCallGraph) -> str:
    return "\n".join(f"{a.render()} -> {b.render()}" for a, b in sorted(graph.edges))
