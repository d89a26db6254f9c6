"""End-to-end exploitability decision for one project/vulnerability pair.

The pipeline stages: extract the payload from the recorded exploit, map the
project's call graph to find entry functions that can reach the vulnerable
function, drive a search for a covering test (reusing the project's own tests
when allowed), then migrate the payload into the covering tests until the
trigger condition fires. The outcome is a JSON-serializable report plus,
on success, a standalone replayable test file.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import tempfile
import time
from dataclasses import dataclass, field, fields as dataclass_fields
from typing import Optional

from . import __version__
from .callgraph import EntryCandidate, build_call_graph, discover_entries
from .corpus import (Corpus, ProjectManifest, VulnerabilityRecord,
                     assemble_project_program, load_project, payload_for)
from .errors import ConfigError, CorpusError
from .frontend.ast import (FunctionDecl, Program, QualifiedName,
                           function_calls)
from .genetic import GaConfig, GenerationResult, generate
from .instrument import ParamSubstitution, run_instrumented
from .interp import Budgets
from .migrate import (MigrationCandidate, MigrationConfig, MigrationOutcome,
                      MigrationSuccess, dedupe_candidates, detect_trigger,
                      migrate)
from .values import (FileRef, Value, deep_copy_value, quote_string,
                     render_literal, to_jsonable)

REPORT_SCHEMA = 1
EXISTING_TEST_MODES = ("auto", "only", "never")

# GaConfig knobs a caller may tune; the rest are derived from PipelineConfig
SEARCH_OVERRIDE_KEYS = {f.name for f in dataclass_fields(GaConfig)} - {
    "rng_seed", "budget_secs", "workers", "search_strategy",
    "eval_max_steps", "max_call_depth"}


@dataclass
class PipelineConfig:
    budget_secs: float = 10.0
    seed: int = 0
    use_existing_tests: str = "auto"
    workers: int = 1
    migration_rules: bool = True  # False reduces migration to rerunning tests
    search_strategy: str = "ga"
    eval_max_steps: int = 200_000
    max_call_depth: int = 512
    report_path: Optional[str] = None
    # knobs of the search itself (population, mutation rates, ...); keys
    # must be GaConfig fields not already owned by this config
    search_overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.use_existing_tests not in EXISTING_TEST_MODES:
            raise ConfigError(
                f"use_existing_tests must be one of {EXISTING_TEST_MODES}, "
                f"got {self.use_existing_tests!r}")
        if self.budget_secs <= 0:
            raise ConfigError("budget_secs must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        bad = set(self.search_overrides) - SEARCH_OVERRIDE_KEYS
        if bad:
            raise ConfigError(
                f"unknown search option(s) {sorted(bad)}; "
                f"valid: {sorted(SEARCH_OVERRIDE_KEYS)}")
        self._ga_config()  # fail fast even when the search phase never runs

    def _ga_config(self) -> GaConfig:
        return GaConfig(
            rng_seed=self.seed,
            budget_secs=self.budget_secs,
            workers=self.workers,
            search_strategy=self.search_strategy,
            eval_max_steps=self.eval_max_steps,
            max_call_depth=self.max_call_depth,
            **self.search_overrides,
        )


@dataclass
class PipelineResult:
    report: dict
    rendered_test_path: Optional[str]

    @property
    def exploitable(self) -> bool:
        return self.report["verdict"] == "exploitable"


def _seed_sandbox(fixtures_dir: Optional[str], sandbox_root: str) -> None:
    os.makedirs(sandbox_root, exist_ok=True)
    if fixtures_dir is None:
        return
    for dirpath, dirnames, filenames in os.walk(fixtures_dir):
        dirnames.sort()
        rel = os.path.relpath(dirpath, fixtures_dir)
        for fname in sorted(filenames):
            dest_dir = os.path.join(sandbox_root, rel) if rel != "." else sandbox_root
            os.makedirs(dest_dir, exist_ok=True)
            shutil.copyfile(os.path.join(dirpath, fname), os.path.join(dest_dir, fname))


def _calls_in(decl: FunctionDecl) -> set[QualifiedName]:
    """Resolved targets of every call appearing anywhere in the body."""
    return {c.resolved for c in function_calls(decl) if c.resolved is not None}


@dataclass
class ExistingTestScan:
    candidates: list[MigrationCandidate]
    scanned: int
    reaching: int


def scan_existing_tests(program: Program, entries: list[EntryCandidate],
                        vulnerable: QualifiedName, budgets: Budgets,
                        sandbox_root: Optional[str]) -> ExistingTestScan:
    """Find zero-argument test functions that already reach the target.

    A cheap static prefilter (does the test call any entry that can reach the
    vulnerable function?) gates a dynamic confirmation run. The substitution
    point is the outermost project function on the observed call path, so the
    project's own validation code stays in the loop.
    """
    entry_set = {e.function for e in entries}
    project_scope = program.project_scope()
    candidates: list[MigrationCandidate] = []
    scanned = 0
    reaching = 0
    for mod_name in sorted(program.test_modules):
        mod = program.test_modules[mod_name]
        for decl in mod.functions:
            if not decl.public or decl.arity != 0:
                continue
            scanned += 1
            test_fn = QualifiedName(mod_name, decl.name)
            if not (_calls_in(decl) & entry_set):
                continue
            run = run_instrumented(program, test_fn, [], vulnerable,
                                   budgets=budgets, sandbox_root=sandbox_root)
            if run.target_hit_count == 0 or run.dyn_graph is None:
                continue
            reaching += 1
            subst_fn = next(
                (fn for fn in run.dyn_graph.path if fn in project_scope), None)
            if subst_fn is None:
                continue
            subst_decl = program.lookup(subst_fn)
            if subst_decl is None or subst_decl.arity == 0:
                continue
            candidates.append(MigrationCandidate(
                entry=test_fn,
                args=[],
                subst_function=subst_fn,
                subst_params=[(p.name, p.annotation) for p in subst_decl.params],
                fitness_total=4.0,
                source="existing",
                test_module=mod_name,
            ))
    return ExistingTestScan(candidates, scanned, reaching)


def _ga_candidates(gen: GenerationResult,
                   entries: list[EntryCandidate]) -> list[MigrationCandidate]:
    by_fn = {e.function: e for e in entries}
    out: list[MigrationCandidate] = []
    seen_ids: set[str] = set()
    pool = list(gen.archive)
    for item in pool:
        test, score = item.test, item.score
        if test.id in seen_ids:
            continue
        seen_ids.add(test.id)
        entry = by_fn.get(test.entry)
        if entry is None:
            continue
        out.append(MigrationCandidate(
            entry=test.entry,
            args=[deep_copy_value(a) for a in test.args],
            subst_function=test.entry,
            subst_params=list(entry.params),
            fitness_total=score.total,
            source="generated",
        ))
    if gen.best_test is not None and gen.best_test.id not in seen_ids:
        entry = by_fn.get(gen.best_test.entry)
        if entry is not None:
            out.append(MigrationCandidate(
                entry=gen.best_test.entry,
                args=[deep_copy_value(a) for a in gen.best_test.args],
                subst_function=gen.best_test.entry,
                subst_params=list(entry.params),
                fitness_total=gen.best_score.total,
                source="generated",
            ))
    return out


def _symbolize(text: str, roots: dict[str, str]) -> str:
    for abs_root, token in roots.items():
        text = text.replace(abs_root, token)
    return text


def _jsonable_detail(detail: dict, roots: dict[str, str]) -> dict:
    out = {}
    for key, value in sorted(detail.items()):
        out[key] = _symbolize(value, roots) if isinstance(value, str) else value
    return out


def _root_aliases(sandbox_root: str, work_dir: str, project: ProjectManifest,
                  vuln: VulnerabilityRecord) -> dict[str, str]:
    aliases = {sandbox_root: "$SANDBOX", work_dir: "$WORK"}
    if project.fixtures_dir:
        aliases[project.fixtures_dir] = "$PROJECT_FIXTURES"
    if vuln.fixtures_dir:
        aliases[vuln.fixtures_dir] = "$VULN_FIXTURES"
    return aliases


def value_to_expr(value: Value, file_paths: dict[tuple[str, str], str]) -> str:
    """Render a value as Vex source; FileRefs become @open of a copied file."""
    if isinstance(value, FileRef):
        return f"@open({quote_string(file_paths[(value.root, value.path)])})"
    if isinstance(value, list):
        return "[" + ", ".join(value_to_expr(v, file_paths) for v in value) + "]"
    if isinstance(value, dict):
        inner = ", ".join(f"{k}: {value_to_expr(v, file_paths)}"
                          for k, v in value.items())
        return "{" + inner + "}"
    return render_literal(value)


def _collect_filerefs(value: Value, found: list[FileRef]) -> None:
    if isinstance(value, FileRef):
        found.append(value)
    elif isinstance(value, list):
        for v in value:
            _collect_filerefs(v, found)
    elif isinstance(value, dict):
        for v in value.values():
            _collect_filerefs(v, found)


def render_test(program: Program, success: MigrationSuccess,
                project: ProjectManifest, vuln: VulnerabilityRecord,
                budgets: Budgets, sandbox_root: Optional[str],
                out_dir: str) -> str:
    """Write a standalone .vex replay of the triggering execution.

    The file calls the substitution function directly with the concrete
    values observed at its first entry, copies any referenced files into a
    files/ directory next to it, and records the run parameters in #! pragma
    comments that the exec command reads back.
    """
    cand = success.candidate
    call_fn = cand.subst_function
    if cand.source == "generated":
        args = [deep_copy_value(a) for a in cand.args]
        if success.position is not None:
            args[success.position] = deep_copy_value(success.substituted_value)
    else:
        sub = None
        if success.position is not None:
            sub = ParamSubstitution(cand.subst_function, success.position,
                                    success.substituted_value)
        rerun = run_instrumented(program, cand.entry, [], cand.subst_function,
                                 substitution=sub, budgets=budgets,
                                 sandbox_root=sandbox_root)
        if rerun.capture_args is None:
            raise CorpusError("replay capture failed while rendering the test")
        args = [deep_copy_value(a) for a in rerun.capture_args]

    os.makedirs(out_dir, exist_ok=True)
    files_dir = os.path.join(out_dir, "files")
    refs: list[FileRef] = []
    for a in args:
        _collect_filerefs(a, refs)
    file_paths: dict[tuple[str, str], str] = {}
    for ref in refs:
        key = (ref.root, ref.path)
        if key in file_paths:
            continue
        file_paths[key] = ref.path
        dest = os.path.join(files_dir, ref.path)
        os.makedirs(os.path.dirname(dest), exist_ok=True)
        shutil.copyfile(os.path.join(ref.root, ref.path), dest)

    module_name = f"replay_{vuln.id.lower().replace('-', '_')}"
    lines = [
        f"#! project: {project.name}",
        f"#! vuln: {vuln.id}",
        f"#! trigger: {vuln.trigger.kind}",
        f"#! attacker_host: {vuln.attacker_host}",
        f"#! max_steps: {budgets.max_steps}",
        f"#! max_call_depth: {budgets.max_call_depth}",
        "#! sandbox: files",
        "",
        "pub fn main() {",
    ]
    arg_names = []
    for i, a in enumerate(args):
        name = f"a{i}"
        arg_names.append(name)
        lines.append(f"    let {name} = {value_to_expr(a, file_paths)};")
    lines.append(f"    {call_fn.render()}({', '.join(arg_names)});")
    lines.append("    return null;")
    lines.append("}")
    path = os.path.join(out_dir, f"{module_name}.vex")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


_PRAGMA_RE = re.compile(r"^#!\s*([a-z_]+)\s*:\s*(.+?)\s*$")


def read_pragmas(path: str) -> dict[str, str]:
    pragmas: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            m = _PRAGMA_RE.match(line.strip())
            if m:
                pragmas[m.group(1)] = m.group(2)
    return pragmas


def run_rendered_test(path: str, corpus: Corpus,
                      max_steps: Optional[int] = None,
                      max_call_depth: Optional[int] = None) -> dict:
    """Replay a rendered test file and re-check its trigger condition."""
    if not os.path.isfile(path):
        raise ConfigError(f"no such test file: {path}")
    pragmas = read_pragmas(path)
    for key in ("project", "vuln"):
        if key not in pragmas:
            raise ConfigError(f"{path}: missing '#! {key}:' pragma")
    vuln = corpus.vulns.get(pragmas["vuln"])
    if vuln is None:
        raise ConfigError(f"unknown vulnerability id {pragmas['vuln']!r}")
    project_key = pragmas["project"]
    if project_key in corpus.projects:
        project = corpus.projects[project_key]
    elif os.path.isdir(project_key):
        project = load_project(project_key)
    else:
        raise ConfigError(f"unknown project {project_key!r}")

    from .frontend import parse_module, resolve_program

    with open(path, "r", encoding="utf-8") as fh:
        source = fh.read()
    module_name = os.path.splitext(os.path.basename(path))[0]
    replay = parse_module(source, name=module_name, origin=path)
    project_modules = {}
    for fname in sorted(os.listdir(project.src_dir)):
        if fname.endswith(".vex"):
            mod = corpus.parse_file(os.path.join(project.src_dir, fname))
            project_modules[mod.name] = mod
    library_modules = {}
    for lib in project.libraries:
        library_modules.update(corpus.library_modules(lib))
    program = resolve_program(project_modules, library_modules,
                              {module_name: replay})

    budgets = Budgets(
        max_steps=max_steps or int(pragmas.get("max_steps", Budgets().max_steps)),
        max_call_depth=max_call_depth or int(
            pragmas.get("max_call_depth", Budgets().max_call_depth)),
    )
    sandbox = None
    sandbox_name = pragmas.get("sandbox")
    if sandbox_name:
        candidate = os.path.join(os.path.dirname(os.path.abspath(path)), sandbox_name)
        if os.path.isdir(candidate):
            sandbox = candidate
    attacker_host = pragmas.get("attacker_host", vuln.attacker_host)
    run = run_instrumented(program, QualifiedName(module_name, "main"), [],
                           vuln.function, budgets=budgets, sandbox_root=sandbox)
    evidence = detect_trigger(run, vuln.trigger, attacker_host)
    return {
        "outcome": run.outcome.kind,
        "error": run.outcome.error,
        "steps_used": run.outcome.steps_used,
        "target_hit": run.target_hit_count > 0,
        "trigger_kind": vuln.trigger.kind,
        "trigger_fired": evidence is not None,
        "evidence": evidence.detail if evidence else None,
    }


def run_pipeline(corpus: Corpus, project: ProjectManifest,
                 vuln: VulnerabilityRecord, cfg: PipelineConfig) -> PipelineResult:
    started = time.perf_counter()
    timings: dict[str, float] = {}
    tmp_root = tempfile.mkdtemp(prefix="vexploit-")
    sandbox_root = os.path.join(tmp_root, "sandbox")
    work_dir = os.path.join(tmp_root, "work")
    os.makedirs(work_dir, exist_ok=True)
    rendered_path: Optional[str] = None
    try:
        t0 = time.perf_counter()
        payload = payload_for(corpus, vuln)
        timings["extract_secs"] = time.perf_counter() - t0

        include_tests = cfg.use_existing_tests != "never"
        program = assemble_project_program(corpus, project,
                                           include_tests=include_tests)
        if program.lookup(vuln.function) is None:
            raise ConfigError(
                f"project {project.name} does not link a library defining "
                f"{vuln.function.render()}")

        t0 = time.perf_counter()
        graph = build_call_graph(program)
        entries = discover_entries(graph, program, vuln.function)
        timings["static_secs"] = time.perf_counter() - t0

        _seed_sandbox(project.fixtures_dir, sandbox_root)
        eval_budgets = Budgets(max_steps=cfg.eval_max_steps,
                               max_call_depth=cfg.max_call_depth)
        reachable = bool(entries)
        aliases = _root_aliases(sandbox_root, work_dir, project, vuln)

        stats: dict = {
            "entries": len(entries),
            "existing_tests_scanned": 0,
            "existing_tests_reaching": 0,
            "ga": None,
            "migration": None,
        }
        success: Optional[MigrationSuccess] = None
        near_miss = None
        migrate_outcome: Optional[MigrationOutcome] = None

        def run_migration(candidates: list[MigrationCandidate]) -> Optional[MigrationSuccess]:
            nonlocal migrate_outcome, near_miss
            if not candidates:
                return None
            mig_cfg = MigrationConfig(
                work_dir=work_dir,
                attacker_host=vuln.attacker_host,
                templates=list(vuln.templates),
                budgets=eval_budgets,
                sandbox_root=sandbox_root,
                deadline=time.monotonic() + cfg.budget_secs,
                rules_enabled=cfg.migration_rules,
            )
            outcome = migrate(program, dedupe_candidates(candidates), payload,
                              vuln.trigger, vuln.function, mig_cfg)
            prev_exec = migrate_outcome.executions if migrate_outcome else 0
            prev_tried = migrate_outcome.candidates_tried if migrate_outcome else 0
            outcome.executions += prev_exec
            outcome.candidates_tried += prev_tried
            migrate_outcome = outcome
            if outcome.near_miss.candidate is not None:
                if near_miss is None or outcome.near_miss.similarity > near_miss.similarity:
                    near_miss = outcome.near_miss
            return outcome.success

        t0 = time.perf_counter()
        if include_tests:
            scan = scan_existing_tests(program, entries, vuln.function,
                                       eval_budgets, sandbox_root)
            stats["existing_tests_scanned"] = scan.scanned
            stats["existing_tests_reaching"] = scan.reaching
            if scan.reaching:
                reachable = True
            success = run_migration(scan.candidates)
        timings["scan_secs"] = time.perf_counter() - t0

        gen: Optional[GenerationResult] = None
        if success is None and cfg.use_existing_tests != "only" and entries:
            ga_cfg = cfg._ga_config()
            t0 = time.perf_counter()
            gen = generate(program, entries, vuln.function, payload, ga_cfg,
                           sandbox_root=sandbox_root,
                           deadline=time.monotonic() + cfg.budget_secs)
            timings["search_secs"] = time.perf_counter() - t0
            stats["ga"] = {
                "success": gen.success,
                "evaluations": gen.evaluations,
                "archive_size": len(gen.archive),
                "candidates": [
                    {
                        "function": s.function.render(),
                        "generations": s.generations,
                        "evaluations": s.evaluations,
                        "best_total": round(s.best_total, 6),
                        "stopped": s.stopped,
                    }
                    for s in gen.stats
                ],
            }
            t0 = time.perf_counter()
            success = run_migration(_ga_candidates(gen, entries))
            timings["migrate_secs"] = time.perf_counter() - t0

        if migrate_outcome is not None:
            stats["migration"] = {
                "executions": migrate_outcome.executions,
                "candidates_tried": migrate_outcome.candidates_tried,
            }

        report: dict = {
            "schema": REPORT_SCHEMA,
            "tool": {"name": "vexploit", "version": __version__},
            "project": project.name,
            "vuln": {
                "id": vuln.id,
                "library": vuln.library,
                "function": vuln.function.render(),
                "trigger": vuln.trigger.kind,
            },
            "config": {
                "seed": cfg.seed,
                "budget_secs": cfg.budget_secs,
                "workers": cfg.workers,
                "use_existing_tests": cfg.use_existing_tests,
                "migration_rules": cfg.migration_rules,
                "search_strategy": cfg.search_strategy,
                "eval_max_steps": cfg.eval_max_steps,
                "max_call_depth": cfg.max_call_depth,
                "search_overrides": dict(sorted(cfg.search_overrides.items())),
            },
            "verdict": "exploitable" if success else "not_exploitable",
            "reachable": reachable,
            "evidence": None,
            "test": None,
            "near_miss": None,
            "stats": stats,
            "rendered_test": None,
        }

        if success is not None:
            report["evidence"] = {
                "kind": success.evidence.kind,
                "detail": _jsonable_detail(success.evidence.detail, aliases),
            }
            report["test"] = {
                "entry": success.candidate.entry.render(),
                "entry_args": [to_jsonable(a, aliases)
                               for a in success.candidate.args],
                "source": success.candidate.source,
                "test_module": success.candidate.test_module,
                "subst_function": success.candidate.subst_function.render(),
                "position": success.position,
                "rule_chain": [r.describe() for r in success.rule_chain],
                "substituted_value": (
                    to_jsonable(success.substituted_value, aliases)
                    if success.substituted_value is not None else None),
            }
        elif near_miss is not None and near_miss.candidate is not None:
            report["near_miss"] = {
                "similarity": round(near_miss.similarity, 6),
                "entry": near_miss.candidate.entry.render(),
                "subst_function": near_miss.candidate.subst_function.render(),
                "position": near_miss.position,
                "rule_chain": [r.describe() for r in near_miss.rule_chain],
            }

        if success is not None and cfg.report_path:
            t0 = time.perf_counter()
            out_dir = os.path.dirname(os.path.abspath(cfg.report_path)) or "."
            rendered_path = render_test(program, success, project, vuln,
                                        eval_budgets, sandbox_root, out_dir)
            report["rendered_test"] = os.path.basename(rendered_path)
            timings["render_secs"] = time.perf_counter() - t0

        timings["total_secs"] = time.perf_counter() - started
        report["timings"] = {k: round(v, 6) for k, v in sorted(timings.items())}

        if cfg.report_path:
            os.makedirs(os.path.dirname(os.path.abspath(cfg.report_path)),
                        exist_ok=True)
            with open(cfg.report_path, "w", encoding="utf-8") as fh:
                json.dump(report, fh, indent=2, sort_keys=True)
                fh.write("\n")
        return PipelineResult(report, rendered_path)
    finally:
        shutil.rmtree(tmp_root, ignore_errors=True)


def report_without_timings(report: dict) -> dict:
    """The determinism-comparable view of a report."""
    return {k: v for k, v in report.items() if k != "timings"}
