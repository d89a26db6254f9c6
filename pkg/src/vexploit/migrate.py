"""Payload migration: substitute the exploit payload into a covering test and
repair it with small transformation rules until the trigger condition fires.

Rules are tried in a fixed order as single applications and then as ordered
pairs, bounded per test so the total execution count stays predictable.
"""

from __future__ import annotations

import hashlib
import os
import re
import time
from dataclasses import dataclass, field
from typing import Optional
from urllib.parse import urlsplit

from .errors import CorpusError
from .frontend.ast import Program, QualifiedName
from .instrument import InstrumentedRun, ParamSubstitution, run_instrumented
from .interp import Budgets
from .payload import ExploitPayload, substitute_value
from .similarity import similarity
from .values import FileRef, Value, deep_copy_value, render_value, values_equal

MAX_EXECUTIONS_PER_TEST = 64
MAX_CANDIDATES = 24
PAYLOAD_HOLE = "{{PAYLOAD}}"

TRIGGER_KINDS = (
    "dos_uncaught_exception",
    "dos_infinite_loop",
    "dos_stack_overflow",
    "rce",
    "xxe",
    "sqli",
    "wrong_behavior",
    "path_traversal",
)

ORACLE_KINDS = ("no_exception", "return_equals", "return_differs")


class RuleInapplicable(Exception):
    """The rule cannot act on this value; the chain is skipped, not failed."""


@dataclass(frozen=True)
class MarkerSubstitute:
    def describe(self) -> str:
        return "marker_substitute"


@dataclass(frozen=True)
class TypeConvert:
    target: str  # "int" | "float" | "str" | "list" | "record"

    def describe(self) -> str:
        return f"type_convert({self.target})"


@dataclass(frozen=True)
class AffixString:
    prefix: str = ""
    suffix: str = ""

    def describe(self) -> str:
        return f"affix({self.prefix!r}, {self.suffix!r})"


@dataclass(frozen=True)
class Template:
    pattern: str

    def describe(self) -> str:
        return f"template({self.pattern!r})"


@dataclass(frozen=True)
class FileMaterialize:
    def describe(self) -> str:
        return "file_materialize"


Rule = object  # union of the five rule dataclasses

GENERIC_TEMPLATES = (
    Template('{"value": "{{PAYLOAD}}"}'),
    Template("[{{PAYLOAD}}]"),
    Template('"{{PAYLOAD}}"'),
)


@dataclass
class RuleContext:
    work_dir: str
    attacker_host: str


def apply_rule(rule: Rule, value: Value, ctx: RuleContext) -> Value:
    if isinstance(rule, MarkerSubstitute):
        replaced = substitute_value(value, ctx.attacker_host, ctx.work_dir)
        if _values_identical(replaced, value):
            raise RuleInapplicable("no attacker marker present")
        return replaced
    if isinstance(rule, TypeConvert):
        return _convert(rule.target, value)
    if isinstance(rule, AffixString):
        if not isinstance(value, str):
            raise RuleInapplicable("affix needs a string")
        return rule.prefix + value + rule.suffix
    if isinstance(rule, Template):
        if rule.pattern.count(PAYLOAD_HOLE) != 1:
            raise CorpusError(f"template must contain exactly one payload hole: {rule.pattern!r}")
        if isinstance(value, (str, int, float)) and not isinstance(value, bool):
            return rule.pattern.replace(PAYLOAD_HOLE, render_value(value))
        raise RuleInapplicable("template needs a string or number")
    if isinstance(rule, FileMaterialize):
        if not isinstance(value, str):
            raise RuleInapplicable("only string payloads materialize to files")
        os.makedirs(ctx.work_dir, exist_ok=True)
        # content-addressed so identical payloads share a name across runs
        digest = hashlib.sha256(value.encode("utf-8")).hexdigest()[:12]
        name = f"payload_{digest}.dat"
        with open(os.path.join(ctx.work_dir, name), "w", encoding="utf-8") as fh:
            fh.write(value)
        return FileRef(path=name, root=ctx.work_dir)
    raise TypeError(f"unknown rule {rule!r}")


def _values_identical(a: Value, b: Value) -> bool:
    if isinstance(a, FileRef) or isinstance(b, FileRef):
        return isinstance(a, FileRef) and isinstance(b, FileRef) and a == b
    if type(a) is not type(b):
        return False
    if isinstance(a, list):
        return len(a) == len(b) and all(_values_identical(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(_values_identical(a[k], b[k]) for k in a)
    return a == b


def _convert(target: str, value: Value) -> Value:
    if isinstance(value, str):
        if target == "int":
            try:
                return int(value.strip(), 10)
            except ValueError:
                raise RuleInapplicable(f"{value!r} is not an integer") from None
        if target == "float":
            try:
                return float(value.strip())
            except ValueError:
                raise RuleInapplicable(f"{value!r} is not a float") from None
        if target == "list":
            return list(value)
        if target == "record":
            return {"value": value}
        raise RuleInapplicable(f"no string conversion to {target}")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if target == "str":
            return render_value(value)
        raise RuleInapplicable(f"no numeric conversion to {target}")
    raise RuleInapplicable(f"cannot convert {type(value).__name__}")


@dataclass
class OracleSpec:
    kind: str  # one of ORACLE_KINDS
    value: Optional[Value] = None

    def __post_init__(self) -> None:
        if self.kind not in ORACLE_KINDS:
            raise CorpusError(f"unknown oracle kind {self.kind!r}")
        if self.kind != "no_exception" and self.value is None:
            raise CorpusError(f"oracle {self.kind} needs a comparison value")


@dataclass
class TriggerCondition:
    kind: str
    oracle: Optional[OracleSpec] = None
    sql_pattern: Optional[str] = None
    manual: bool = False

    def __post_init__(self) -> None:
        if self.kind not in TRIGGER_KINDS:
            raise CorpusError(f"unknown trigger kind {self.kind!r}")
        if self.kind == "wrong_behavior" and self.oracle is None:
            raise CorpusError("wrong_behavior triggers need an oracle")
        if self.kind == "sqli" and not self.sql_pattern:
            raise CorpusError("sqli triggers need a sql_pattern")
        if self.sql_pattern is not None:
            try:
                re.compile(self.sql_pattern)
            except re.error as exc:
                raise CorpusError(f"bad sql_pattern: {exc}") from exc


@dataclass
class TriggerEvidence:
    kind: str
    detail: dict


def detect_trigger(run: InstrumentedRun, condition: TriggerCondition,
                   attacker_host: str) -> Optional[TriggerEvidence]:
    kind = condition.kind
    outcome = run.outcome
    if kind == "dos_uncaught_exception":
        if outcome.kind == "uncaught_exception":
            return TriggerEvidence(kind, {"outcome": outcome.kind, "error": outcome.error})
        return None
    if kind == "dos_infinite_loop":
        if outcome.kind == "step_budget_exceeded":
            return TriggerEvidence(kind, {"outcome": outcome.kind, "steps": outcome.steps_used})
        return None
    if kind == "dos_stack_overflow":
        if outcome.kind == "depth_budget_exceeded":
            return TriggerEvidence(kind, {"outcome": outcome.kind,
                                          "max_depth": outcome.max_depth_seen})
        return None
    if kind in ("rce", "xxe"):
        for event in outcome.sinks.net_events:
            if urlsplit(event.url).hostname == attacker_host:
                return TriggerEvidence(kind, {"url": event.url})
        return None
    if kind == "sqli":
        pattern = re.compile(condition.sql_pattern or "")
        for query in outcome.sinks.sql_events:
            if pattern.search(query):
                return TriggerEvidence(kind, {"query": query})
        return None
    if kind == "path_traversal":
        for event in outcome.sinks.file_events:
            if not event.allowed:
                return TriggerEvidence(kind, {"path": event.requested})
        return None
    if kind == "wrong_behavior":
        oracle = condition.oracle
        assert oracle is not None
        if oracle.kind == "no_exception":
            if outcome.kind == "returned":
                return TriggerEvidence(kind, {"oracle": "no_exception",
                                              "outcome": outcome.kind})
            return None
        if not run.target_returned:
            return None
        got = run.target_return
        if oracle.kind == "return_equals" and values_equal(got, oracle.value):
            return TriggerEvidence(kind, {"oracle": "return_equals",
                                          "returned": render_value(got)})
        if oracle.kind == "return_differs" and not values_equal(got, oracle.value):
            return TriggerEvidence(kind, {"oracle": "return_differs",
                                          "returned": render_value(got)})
        return None
    raise CorpusError(f"unknown trigger kind {kind!r}")


@dataclass
class MigrationCandidate:
    """A covering test plus the function whose argument gets the payload."""

    entry: QualifiedName
    args: list[Value]
    subst_function: QualifiedName
    subst_params: list[tuple[str, Optional[str]]]
    fitness_total: float
    source: str = "generated"  # "generated" | "existing"
    test_module: Optional[str] = None  # for existing tests, the module to render


@dataclass
class MigrationConfig:
    work_dir: str
    attacker_host: str
    templates: list[Template] = field(default_factory=list)
    budgets: Budgets = field(default_factory=Budgets)
    sandbox_root: Optional[str] = None
    max_executions_per_test: int = MAX_EXECUTIONS_PER_TEST
    max_candidates: int = MAX_CANDIDATES
    deadline: Optional[float] = None
    # ablation switch: with rules off only the unmodified tests are checked
    rules_enabled: bool = True


@dataclass
class MigrationSuccess:
    candidate: MigrationCandidate
    position: Optional[int]  # None when the unmodified test already triggered
    rule_chain: list[Rule]
    substituted_value: Optional[Value]
    evidence: TriggerEvidence
    run: InstrumentedRun


@dataclass
class NearMiss:
    similarity: float
    candidate: Optional[MigrationCandidate] = None
    position: Optional[int] = None
    rule_chain: list[Rule] = field(default_factory=list)


@dataclass
class MigrationOutcome:
    success: Optional[MigrationSuccess]
    near_miss: NearMiss
    executions: int
    candidates_tried: int


def _single_rules(annotation: Optional[str], payload_value: Value,
                  cfg: MigrationConfig) -> list[Rule]:
    rules: list[Rule] = [MarkerSubstitute()]
    value_kind = _value_kind(payload_value)
    if annotation and annotation != value_kind and annotation != "file":
        rules.append(TypeConvert(annotation))
    rules.extend(cfg.templates)
    rules.extend(GENERIC_TEMPLATES)
    rules.append(FileMaterialize())
    return rules


def _value_kind(v: Value) -> str:
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


def build_chains(annotation: Optional[str], payload_value: Value,
                 cfg: MigrationConfig) -> list[tuple[Rule, ...]]:
    """Single rules in fixed order, then ordered pairs of distinct rules."""
    singles = _single_rules(annotation, payload_value, cfg)
    chains: list[tuple[Rule, ...]] = [(r, ) for r in singles]
    for first in singles:
        for second in singles:
            if first == second:
                continue
            chains.append((first, second))
    return chains


def _chain_value(chain: tuple[Rule, ...], payload_value: Value,
                 ctx: RuleContext) -> Value:
    value = deep_copy_value(payload_value)
    for rule in chain:
        value = apply_rule(rule, value, ctx)
    return value


def _mask_key(candidate: MigrationCandidate) -> tuple:
    masked = tuple(_canonical(arg) for arg in candidate.args)
    return (candidate.entry.render(), candidate.subst_function.render(), masked)


def _canonical(v: Value):
    if isinstance(v, FileRef):
        return ("file", v.path)
    if isinstance(v, list):
        return ("list", tuple(_canonical(x) for x in v))
    if isinstance(v, dict):
        return ("record", tuple(sorted((k, _canonical(x)) for k, x in v.items())))
    if isinstance(v, bool):
        return ("bool", v)
    if isinstance(v, float):
        return ("float", repr(v))
    return (type(v).__name__, v)


def dedupe_candidates(candidates: list[MigrationCandidate],
                      max_candidates: int = MAX_CANDIDATES) -> list[MigrationCandidate]:
    ordered = sorted(range(len(candidates)),
                     key=lambda i: (-candidates[i].fitness_total, i))
    seen: set[tuple] = set()
    out: list[MigrationCandidate] = []
    for i in ordered:
        key = _mask_key(candidates[i])
        if key in seen:
            continue
        seen.add(key)
        out.append(candidates[i])
        if len(out) >= max_candidates:
            break
    return out


def migrate(
    program: Program,
    candidates: list[MigrationCandidate],
    payload: ExploitPayload,
    condition: TriggerCondition,
    vulnerable: QualifiedName,
    cfg: MigrationConfig,
) -> MigrationOutcome:
    """Try payload substitution and rule repairs over the candidate tests.

    Candidates must already be deduped and ordered best-fitness-first; the
    first trigger wins. Manual-review conditions never report success.
    """
    ctx = RuleContext(cfg.work_dir, cfg.attacker_host)
    executions = 0
    tried = 0
    near = NearMiss(-1.0)
    if not payload.values:
        return MigrationOutcome(None, near, 0, 0)
    pi = payload.primary_index
    payload_value = payload.values[pi]

    def out_of_time() -> bool:
        return cfg.deadline is not None and time.monotonic() > cfg.deadline

    def run_candidate(candidate: MigrationCandidate,
                      substitution: Optional[ParamSubstitution]) -> InstrumentedRun:
        args = [deep_copy_value(a) for a in candidate.args]
        return run_instrumented(program, candidate.entry, args, vulnerable,
                                substitution=substitution, budgets=cfg.budgets,
                                sandbox_root=cfg.sandbox_root)

    def note_near_miss(run: InstrumentedRun, candidate: MigrationCandidate,
                       position: Optional[int], chain: tuple[Rule, ...]) -> None:
        nonlocal near
        if run.target_hit_count == 0 or not run.capture_args:
            return
        if pi >= len(run.capture_args):
            return
        sim = similarity(run.capture_args[pi], payload_value)
        if sim > near.similarity:
            near = NearMiss(sim, candidate, position, list(chain))

    for candidate in candidates:
        if out_of_time():
            break
        tried += 1
        used = 0
        # the unmodified test may already trigger (common for existing tests)
        run = run_candidate(candidate, None)
        executions += 1
        used += 1
        evidence = None if condition.manual else detect_trigger(run, condition,
                                                                cfg.attacker_host)
        if evidence is not None:
            return MigrationOutcome(
                MigrationSuccess(candidate, None, [], None, evidence, run),
                near, executions, tried)
        note_near_miss(run, candidate, None, ())
        if not cfg.rules_enabled:
            continue
        seen_values: set[tuple] = set()
        positions = range(len(candidate.subst_params))
        for position in positions:
            annotation = candidate.subst_params[position][1]
            for chain in ((), *build_chains(annotation, payload_value, cfg)):
                if used >= cfg.max_executions_per_test or out_of_time():
                    break
                try:
                    value = _chain_value(chain, payload_value, ctx)
                except RuleInapplicable:
                    continue
                key = (position, _canonical(value))
                if key in seen_values:
                    continue
                seen_values.add(key)
                sub = ParamSubstitution(candidate.subst_function, position, value)
                run = run_candidate(candidate, sub)
                executions += 1
                used += 1
                if not condition.manual:
                    evidence = detect_trigger(run, condition, cfg.attacker_host)
                    if evidence is not None:
                        return MigrationOutcome(
                            MigrationSuccess(candidate, position, list(chain), value,
                                             evidence, run),
                            near, executions, tried)
                note_near_miss(run, candidate, position, chain)
            if used >= cfg.max_executions_per_test or out_of_time():
                break
    return MigrationOutcome(None, near, executions, tried)
