"""Genetic search for tests that reach the vulnerable function with arguments
resembling the exploit payload.

Fitness has four additive components in [0, 1] each: entry module executed,
entry function executed, normalized path reach (approach level plus scaled
branch distance), and payload similarity at the vulnerable call. A test is a
covering test once it reaches the target; search succeeds when similarity at
the target is exact (total fitness above 3).
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .callgraph import EntryCandidate, GuardBranch
from .errors import ConfigError
from .frontend.ast import Lit, Program, QualifiedName, RecordLit, walk_exprs
from .instrument import BranchObservation, InstrumentedRun, run_instrumented
from .interp import Budgets
from .payload import ExploitPayload
from .similarity import levenshtein, similarity
from .values import FileRef, Value, deep_copy_value

_PRINTABLE = string.ascii_letters + string.digits + string.punctuation + " "


def _encode_for_id(v: Value):
    if isinstance(v, bool):
        return ["b", v]
    if isinstance(v, int):
        return ["i", v]
    if isinstance(v, float):
        return ["f", repr(v)]
    if isinstance(v, str):
        return ["s", v]
    if v is None:
        return ["n"]
    if isinstance(v, list):
        return ["l", [_encode_for_id(x) for x in v]]
    if isinstance(v, dict):
        return ["r", sorted((k, _encode_for_id(x)) for k, x in v.items())]
    if isinstance(v, FileRef):
        # root is a run-local temp dir; identity uses the relative path only
        return ["F", v.path]
    raise TypeError(f"cannot fingerprint {type(v).__name__}")


@dataclass
class TestCase:
    entry: QualifiedName
    args: list[Value]

    @property
    def id(self) -> str:
        blob = json.dumps([self.entry.render(), [_encode_for_id(a) for a in self.args]],
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def clone(self) -> "TestCase":
        return TestCase(self.entry, [deep_copy_value(a) for a in self.args])


@dataclass(frozen=True)
class FitnessScore:
    entry_module: float
    entry_function: float
    reach: float
    sim: float

    @property
    def total(self) -> float:
        return self.entry_module + self.entry_function + self.reach + self.sim


ZERO_SCORE = FitnessScore(0.0, 0.0, 0.0, 0.0)


@dataclass
class GaConfig:
    population: int = 50
    tournament: int = 4
    crossover_rate: float = 0.75
    per_arg_mutation_rate: float = 0.3
    elitism: int = 2
    payload_seed_prob: float = 0.2
    budget_secs: float = 10.0
    rng_seed: int = 0
    entry_redraw_prob: float = 0.05
    stall_generations: int = 12  # 0 disables the stall stop
    eval_max_steps: int = 200_000
    max_call_depth: int = 512
    workers: int = 1
    search_strategy: str = "ga"  # "ga" | "random"

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ConfigError("population must be at least 2")
        if not 0 <= self.elitism < self.population:
            raise ConfigError("elitism must be smaller than the population")
        if self.tournament < 1:
            raise ConfigError("tournament size must be positive")
        if self.search_strategy not in ("ga", "random"):
            raise ConfigError(f"unknown search strategy {self.search_strategy!r}")
        if self.workers < 1:
            raise ConfigError("workers must be positive")


_NEGATE = {"==": "!=", "!=": "==", "<": ">=", "<=": ">", ">": "<=", ">=": "<"}


def branch_distance(op: str, lhs: Value, rhs: Value) -> float:
    """Distance to zero when `lhs op rhs` would become true."""
    if isinstance(lhs, bool) and isinstance(rhs, bool):
        if op == "==":
            return 0.0 if lhs == rhs else 1.0
        if op == "!=":
            return 0.0 if lhs != rhs else 1.0
        return 1.0
    if isinstance(lhs, (int, float)) and isinstance(rhs, (int, float)):
        a, b = float(lhs), float(rhs)
        if op == "==":
            return abs(a - b)
        if op == "!=":
            return 0.0 if a != b else 1.0
        if op == "<":
            return 0.0 if a < b else a - b + 1.0
        if op == "<=":
            return 0.0 if a <= b else a - b
        if op == ">":
            return 0.0 if a > b else b - a + 1.0
        if op == ">=":
            return 0.0 if a >= b else b - a
        return 1.0
    if isinstance(lhs, str) and isinstance(rhs, str):
        if op == "==":
            return float(levenshtein(lhs, rhs))
        if op == "!=":
            return 0.0 if lhs != rhs else 1.0
        return 1.0
    return 1.0


def _blocked_fraction(trace: list[BranchObservation], guards: list[GuardBranch]) -> float:
    """How much of one call-path hop its guards still block, in [0, 1].

    Guards arrive in nesting order.  Every leading guard the run already
    satisfies shrinks the fraction, so clearing a guard always pays off
    even when the next one starts out farther away.  The first
    unsatisfied guard is where control diverged; its closest observed
    distance supplies the gradient.  A guard the run never evaluated
    counts as maximally far.
    """
    if not guards:
        return 1.0
    best: dict[tuple[object, bool], float] = {}
    for obs in trace:
        for g in guards:
            if obs.site != g.site:
                continue
            if obs.op is None:
                d = 0.0 if obs.taken == g.want_true else 1.0
            else:
                op = obs.op if g.want_true else _NEGATE[obs.op]
                d = branch_distance(op, obs.lhs, obs.rhs)
            key = (g.site, g.want_true)
            if key not in best or d < best[key]:
                best[key] = d
    satisfied = 0
    for g in guards:
        d = best.get((g.site, g.want_true))
        if d == 0.0:
            satisfied += 1
            continue
        nu = 1.0 if d is None else d / (d + 1.0)
        return (len(guards) - satisfied - 1 + nu) / len(guards)
    return 0.0


def score_run(run: InstrumentedRun, candidate: EntryCandidate,
              payload: ExploitPayload) -> FitnessScore:
    executed = run.functions_executed
    entry = candidate.function
    module_hit = 1.0 if any(f.module == entry.module for f in executed) else 0.0
    function_hit = 1.0 if entry in executed else 0.0
    path = candidate.path.nodes
    if run.target_hit_count > 0:
        if not payload.values:
            sim = 1.0
        else:
            cap = run.capture_args or []
            pi = payload.primary_index
            sim = similarity(cap[pi], payload.values[pi]) if pi < len(cap) else 0.0
        return FitnessScore(module_hit, function_hit, 1.0, sim)
    deepest = None
    for i in range(len(path) - 1, -1, -1):
        if path[i] in executed:
            deepest = i
            break
    if deepest is None:
        return FitnessScore(module_hit, function_hit, 0.0, 0.0)
    approach = (len(path) - 1) - deepest
    guards = candidate.path.guards[deepest] if deepest < len(candidate.path.guards) else []
    blocked = _blocked_fraction(run.branch_trace, guards)
    reach = 1.0 - (approach + blocked) / len(path)
    return FitnessScore(module_hit, function_hit, reach, 0.0)


@dataclass
class ValuePools:
    strings: list[str] = field(default_factory=list)
    ints: list[int] = field(default_factory=list)
    floats: list[float] = field(default_factory=list)
    field_names: list[str] = field(default_factory=list)
    files: list[FileRef] = field(default_factory=list)


def harvest_pools(program: Program, sandbox_root: Optional[str]) -> ValuePools:
    """Constant pool from project literals plus the sandboxed fixture files."""
    strings: dict[str, None] = {}
    ints: dict[int, None] = {}
    floats: dict[float, None] = {}
    names: dict[str, None] = {}
    for _, mod in sorted(program.project_modules.items()):
        for decl in mod.functions:
            for stmt in decl.body:
                for expr in walk_exprs(stmt):
                    if isinstance(expr, Lit):
                        v = expr.value
                        if isinstance(v, bool):
                            continue
                        if isinstance(v, str) and len(v) <= 64:
                            strings.setdefault(v)
                        elif isinstance(v, int):
                            ints.setdefault(v)
                        elif isinstance(v, float):
                            floats.setdefault(v)
                    elif isinstance(expr, RecordLit):
                        for key, _ in expr.fields:
                            names.setdefault(key)
    files: list[FileRef] = []
    if sandbox_root and os.path.isdir(sandbox_root):
        for base, dirs, filenames in os.walk(sandbox_root):
            dirs.sort()
            for fname in sorted(filenames):
                rel = os.path.relpath(os.path.join(base, fname), sandbox_root)
                files.append(FileRef(path=rel, root=sandbox_root))
    pools = ValuePools(list(strings), list(ints), list(floats), list(names), files)
    if not pools.strings:
        pools.strings = ["", "a"]
    if not pools.ints:
        pools.ints = [0, 1, -1, 10]
    if not pools.floats:
        pools.floats = [0.0, 1.0]
    if not pools.field_names:
        pools.field_names = ["a", "b"]
    return pools


@dataclass
class MutationContext:
    candidates: list[EntryCandidate]
    payload: ExploitPayload
    pools: ValuePools
    cfg: GaConfig
    payload_strings: list[str] = field(default_factory=list)
    payload_by_kind: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        atoms = self.payload.atoms()
        self.payload_strings = [a for a in atoms if isinstance(a, str) and a]
        by_kind: dict[str, list[Value]] = {}
        for a in atoms:
            by_kind.setdefault(_kind_name(a), []).append(a)
        self.payload_by_kind = by_kind

    def candidate_for(self, entry: QualifiedName) -> EntryCandidate:
        for cand in self.candidates:
            if cand.function == entry:
                return cand
        raise KeyError(entry.render())


def _kind_name(v: Value) -> str:
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, int):
        return "int"
    if isinstance(v, float):
        return "float"
    if isinstance(v, str):
        return "str"
    if isinstance(v, list):
        return "list"
    if isinstance(v, dict):
        return "record"
    if isinstance(v, FileRef):
        return "file"
    return "null"


def _geometric_step(rng: random.Random) -> int:
    step = 1
    while rng.random() < 0.5 and step < 1 << 20:
        step *= 2
    return step


def random_value(annotation: Optional[str], ctx: MutationContext,
                 rng: random.Random, depth: int = 0) -> Value:
    kind = annotation
    if kind is None:
        kind = rng.choices(["str", "int", "float", "bool", "list", "record"],
                           weights=[40, 30, 10, 8, 6, 6])[0]
    if kind == "int":
        if ctx.pools.ints and rng.random() < 0.4:
            return rng.choice(ctx.pools.ints)
        return rng.choice([-1, 1]) * _geometric_step(rng) * rng.randint(0, 9)
    if kind == "float":
        if ctx.pools.floats and rng.random() < 0.4:
            return rng.choice(ctx.pools.floats)
        return round(rng.uniform(-100.0, 100.0), 3)
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "str":
        if ctx.pools.strings and rng.random() < 0.4:
            return rng.choice(ctx.pools.strings)
        length = rng.randint(0, 12)
        return "".join(rng.choice(_PRINTABLE) for _ in range(length))
    if kind == "list":
        if depth >= 2:
            return []
        return [random_value(None, ctx, rng, depth + 1) for _ in range(rng.randint(0, 2))]
    if kind == "record":
        if depth >= 2:
            return {}
        fields = {}
        for _ in range(rng.randint(1, 2)):
            fields[rng.choice(ctx.pools.field_names)] = random_value(None, ctx, rng, depth + 1)
        return fields
    if kind == "file":
        if ctx.pools.files:
            return rng.choice(ctx.pools.files)
        return None
    return None


def _compatible(annotation: Optional[str], value: Value) -> bool:
    return annotation is None or _kind_name(value) == annotation


def _payload_seed(annotation: Optional[str], ctx: MutationContext,
                  rng: random.Random) -> Optional[Value]:
    if ctx.payload.values and _compatible(annotation, ctx.payload.primary):
        return deep_copy_value(ctx.payload.primary)
    options = ctx.payload_by_kind.get(annotation) if annotation else None
    if options is None and annotation is None:
        options = [v for vs in ctx.payload_by_kind.values() for v in vs]
    if options:
        return deep_copy_value(rng.choice(options))
    return None


def init_test(candidate: EntryCandidate, ctx: MutationContext,
              rng: random.Random) -> TestCase:
    args: list[Value] = []
    for _, annotation in candidate.params:
        seed = None
        if rng.random() < ctx.cfg.payload_seed_prob:
            seed = _payload_seed(annotation, ctx, rng)
        args.append(seed if seed is not None else random_value(annotation, ctx, rng))
    return TestCase(candidate.function, args)


def mutate_value(v: Value, annotation: Optional[str], ctx: MutationContext,
                 rng: random.Random) -> Value:
    cfg = ctx.cfg
    if isinstance(v, bool):
        return not v
    if isinstance(v, int):
        seeds = ctx.payload_by_kind.get("int")
        if seeds and rng.random() < cfg.payload_seed_prob:
            return rng.choice(seeds)
        return v + rng.choice([-1, 1]) * _geometric_step(rng)
    if isinstance(v, float):
        seeds = ctx.payload_by_kind.get("float")
        if seeds and rng.random() < cfg.payload_seed_prob:
            return rng.choice(seeds)
        return v + rng.choice([-1.0, 1.0]) * _geometric_step(rng) * rng.random()
    if isinstance(v, str):
        if ctx.payload_strings and rng.random() < cfg.payload_seed_prob:
            src = rng.choice(ctx.payload_strings)
            i = rng.randrange(len(src))
            j = rng.randint(i + 1, len(src))
            return v + src[i:j]
        op = rng.choice(["insert", "delete", "replace", "pool"])
        if op == "pool" and ctx.pools.strings:
            return rng.choice(ctx.pools.strings)
        if op == "delete" and v:
            i = rng.randrange(len(v))
            return v[:i] + v[i + 1:]
        if op == "replace" and v:
            i = rng.randrange(len(v))
            return v[:i] + rng.choice(_PRINTABLE) + v[i + 1:]
        i = rng.randint(0, len(v))
        return v[:i] + rng.choice(_PRINTABLE) + v[i:]
    if isinstance(v, list):
        out = deep_copy_value(v)
        if not out or rng.random() < 0.2:
            out.append(random_value(None, ctx, rng, depth=1))
            return out
        i = rng.randrange(len(out))
        out[i] = mutate_value(out[i], None, ctx, rng)
        return out
    if isinstance(v, dict):
        out = deep_copy_value(v)
        if not out:
            out[rng.choice(ctx.pools.field_names)] = random_value(None, ctx, rng, depth=1)
            return out
        key = rng.choice(sorted(out))
        out[key] = mutate_value(out[key], None, ctx, rng)
        return out
    if isinstance(v, FileRef):
        if ctx.pools.files:
            return rng.choice(ctx.pools.files)
        return v
    return random_value(annotation, ctx, rng)


def mutate(test: TestCase, ctx: MutationContext, rng: random.Random) -> TestCase:
    if len(ctx.candidates) > 1 and rng.random() < ctx.cfg.entry_redraw_prob:
        others = [c for c in ctx.candidates if c.function != test.entry]
        return init_test(rng.choice(others), ctx, rng)
    candidate = ctx.candidate_for(test.entry)
    if not candidate.params:
        return test.clone()
    args = [deep_copy_value(a) for a in test.args]
    touched = False
    for i, (_, annotation) in enumerate(candidate.params):
        if rng.random() < ctx.cfg.per_arg_mutation_rate:
            args[i] = mutate_value(args[i], annotation, ctx, rng)
            touched = True
    if not touched:
        i = rng.randrange(len(args))
        args[i] = mutate_value(args[i], candidate.params[i][1], ctx, rng)
    return TestCase(test.entry, args)


def crossover(a: TestCase, b: TestCase, rng: random.Random) -> tuple[TestCase, TestCase]:
    if a.entry != b.entry or len(a.args) < 2:
        return a.clone(), b.clone()
    point = rng.randint(1, len(a.args) - 1)
    left = [deep_copy_value(v) for v in a.args[:point]] + \
        [deep_copy_value(v) for v in b.args[point:]]
    right = [deep_copy_value(v) for v in b.args[:point]] + \
        [deep_copy_value(v) for v in a.args[point:]]
    return TestCase(a.entry, left), TestCase(b.entry, right)


@dataclass
class ArchiveEntry:
    test: TestCase
    score: FitnessScore


@dataclass
class CandidateStats:
    function: QualifiedName
    generations: int
    evaluations: int
    best_total: float
    stopped: str  # "success" | "stall" | "budget" | "skipped"


@dataclass
class GenerationResult:
    success: bool
    best_test: Optional[TestCase]
    best_score: FitnessScore
    archive: list[ArchiveEntry]
    stats: list[CandidateStats]
    evaluations: int


class _Evaluator:
    """Caches fitness by test id; optionally fans evaluation over threads.

    Results are merged back in submission order, so the outcome is identical
    for any worker count.
    """

    def __init__(self, program: Program, vulnerable: QualifiedName,
                 payload: ExploitPayload, cfg: GaConfig, sandbox_root: Optional[str]):
        self.program = program
        self.vulnerable = vulnerable
        self.payload = payload
        self.cfg = cfg
        self.sandbox_root = sandbox_root
        self.budgets = Budgets(max_steps=cfg.eval_max_steps, max_call_depth=cfg.max_call_depth)
        self.cache: dict[str, tuple[FitnessScore, bool]] = {}
        self.evaluations = 0
        self._pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    def _run_one(self, test: TestCase, candidate: EntryCandidate) -> tuple[FitnessScore, bool]:
        args = [deep_copy_value(a) for a in test.args]
        run = run_instrumented(self.program, test.entry, args, self.vulnerable,
                               budgets=self.budgets, sandbox_root=self.sandbox_root)
        return score_run(run, candidate, self.payload), run.target_hit_count > 0

    def evaluate(self, tests: list[TestCase], candidate: EntryCandidate,
                 deadline: Optional[float]) -> list[tuple[FitnessScore, bool]]:
        pending = [(i, t) for i, t in enumerate(tests) if t.id not in self.cache]
        if pending and self._pool is not None:
            fresh = list(self._pool.map(lambda it: self._run_one(it[1], candidate), pending))
            for (_, test), result in zip(pending, fresh):
                self.cache[test.id] = result
                self.evaluations += 1
        else:
            for _, test in pending:
                if deadline is not None and time.monotonic() > deadline:
                    break
                self.cache[test.id] = self._run_one(test, candidate)
                self.evaluations += 1
        return [self.cache.get(t.id, (ZERO_SCORE, False)) for t in tests]


def _rank_key(scored: list[tuple[TestCase, FitnessScore]], i: int) -> tuple:
    return (-scored[i][1].total, scored[i][0].id)


def _tournament(scored: list[tuple[TestCase, FitnessScore]], k: int,
                rng: random.Random) -> TestCase:
    best = rng.randrange(len(scored))
    for _ in range(k - 1):
        other = rng.randrange(len(scored))
        if _rank_key(scored, other) < _rank_key(scored, best):
            best = other
    return scored[best][0]


def generate(
    program: Program,
    candidates: list[EntryCandidate],
    vulnerable: QualifiedName,
    payload: ExploitPayload,
    cfg: GaConfig,
    sandbox_root: Optional[str] = None,
    deadline: Optional[float] = None,
) -> GenerationResult:
    """Run the search over the top-ranked entry candidates.

    The time budget is split evenly over at most three candidates; a candidate
    that stops early hands its leftover time to the next one.
    """
    rng = random.Random(cfg.rng_seed)
    pools = harvest_pools(program, sandbox_root)
    ctx = MutationContext(candidates, payload, pools, cfg)
    evaluator = _Evaluator(program, vulnerable, payload, cfg, sandbox_root)
    chosen = candidates[:3]
    start = time.monotonic()
    archive: list[ArchiveEntry] = []
    archived_ids: set[str] = set()
    best_test: Optional[TestCase] = None
    best_score = ZERO_SCORE
    stats: list[CandidateStats] = []
    success = False
    try:
        for i, candidate in enumerate(chosen):
            if success:
                stats.append(CandidateStats(candidate.function, 0, 0, 0.0, "skipped"))
                continue
            slice_end = start + cfg.budget_secs * (i + 1) / len(chosen)
            cand_deadline = min(slice_end, deadline) if deadline else slice_end
            before = evaluator.evaluations
            outcome = _evolve(program, candidate, ctx, evaluator, rng, cand_deadline,
                              archive, archived_ids)
            gen_count, cand_best_test, cand_best_score, stopped = outcome
            stats.append(CandidateStats(candidate.function, gen_count,
                                        evaluator.evaluations - before,
                                        cand_best_score.total, stopped))
            better = cand_best_score.total > best_score.total
            if cand_best_test is not None and (best_test is None or better):
                best_test, best_score = cand_best_test, cand_best_score
            if stopped == "success":
                success = True
    finally:
        evaluator.close()
    return GenerationResult(success, best_test, best_score, archive, stats,
                            evaluator.evaluations)


def _evolve(program: Program, candidate: EntryCandidate, ctx: MutationContext,
            evaluator: _Evaluator, rng: random.Random, deadline: float,
            archive: list[ArchiveEntry], archived_ids: set[str]):
    cfg = ctx.cfg
    population = [init_test(candidate, ctx, rng) for _ in range(cfg.population)]
    best_test: Optional[TestCase] = None
    best_score = ZERO_SCORE
    stall = 0
    generations = 0
    stopped = "budget"
    while True:
        results = evaluator.evaluate(population, candidate, deadline)
        generations += 1
        improved = False
        for test, (score, hit) in zip(population, results):
            if hit and test.id not in archived_ids:
                archived_ids.add(test.id)
                archive.append(ArchiveEntry(test.clone(), score))
            if best_test is None or score.total > best_score.total + 1e-12:
                improved = True
                best_test, best_score = test, score
        if best_score.total > 3.0 and best_score.sim == 1.0:
            stopped = "success"
            break
        if time.monotonic() > deadline:
            stopped = "budget"
            break
        stall = 0 if improved else stall + 1
        if cfg.stall_generations and stall >= cfg.stall_generations:
            stopped = "stall"
            break
        scored = list(zip(population, (s for s, _ in results)))
        if cfg.search_strategy == "random":
            population = [init_test(candidate, ctx, rng) for _ in range(cfg.population)]
            continue
        ranked = sorted(range(len(scored)), key=lambda i: _rank_key(scored, i))
        nxt: list[TestCase] = [scored[i][0].clone() for i in ranked[:cfg.elitism]]
        while len(nxt) < cfg.population:
            pa = _tournament(scored, cfg.tournament, rng)
            pb = _tournament(scored, cfg.tournament, rng)
            if rng.random() < cfg.crossover_rate:
                ca, cb = crossover(pa, pb, rng)
            else:
                ca, cb = pa.clone(), pb.clone()
            nxt.append(mutate(ca, ctx, rng))
            if len(nxt) < cfg.population:
                nxt.append(mutate(cb, ctx, rng))
        population = nxt
    return generations, best_test, best_score, stopped
