"""Benchmark protocol: repeated pipeline runs over the bundled corpus.

Three measurements matter for a search-based tool and all of them need
repetition to mean anything:

* success rate per project/vulnerability pair across seeds,
* the contribution of migration rules (full runs vs rules disabled),
* the head start from harvesting a project's own test functions.
"""

from __future__ import annotations

import json
import os
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

from .corpus import Corpus
from .pipeline import PipelineConfig, run_pipeline


@dataclass
class BenchConfig:
    repeats: int = 10
    budget_secs: float = 10.0
    base_seed: int = 0
    use_existing_tests: str = "auto"
    migration_rules: bool = True
    workers: int = 1
    eval_max_steps: int = 200_000
    pairs: Optional[list[tuple[str, str]]] = None  # None = every corpus pair


@dataclass
class PairRuns:
    project: str
    vuln: str
    expected_exploitable: bool
    expected_reachable: bool
    verdicts: list[str] = field(default_factory=list)
    reachable: list[bool] = field(default_factory=list)
    secs: list[float] = field(default_factory=list)

    @property
    def exploitable_runs(self) -> int:
        return sum(1 for v in self.verdicts if v == "exploitable")

    @property
    def median_secs(self) -> float:
        return statistics.median(self.secs) if self.secs else 0.0

    @property
    def max_secs(self) -> float:
        return max(self.secs) if self.secs else 0.0

    def as_row(self) -> dict:
        return {
            "project": self.project,
            "vuln": self.vuln,
            "expected_exploitable": self.expected_exploitable,
            "expected_reachable": self.expected_reachable,
            "runs": len(self.verdicts),
            "exploitable_runs": self.exploitable_runs,
            "reachable_runs": sum(self.reachable),
            "median_secs": round(self.median_secs, 3),
            "max_secs": round(self.max_secs, 3),
        }


def repeat_pair(corpus: Corpus, project_name: str, vuln_id: str,
                cfg: BenchConfig) -> PairRuns:
    """Run one pair ``cfg.repeats`` times with consecutive seeds."""
    project = corpus.projects[project_name]
    vuln = corpus.vulns[vuln_id]
    runs = PairRuns(project_name, vuln_id,
                    project.expected_exploitable, project.expected_reachable)
    for i in range(cfg.repeats):
        pcfg = PipelineConfig(
            budget_secs=cfg.budget_secs,
            seed=cfg.base_seed + i,
            use_existing_tests=cfg.use_existing_tests,
            workers=cfg.workers,
            migration_rules=cfg.migration_rules,
            eval_max_steps=cfg.eval_max_steps,
        )
        started = time.perf_counter()
        report = run_pipeline(corpus, project, vuln, pcfg).report
        runs.secs.append(time.perf_counter() - started)
        runs.verdicts.append(report["verdict"])
        runs.reachable.append(report["reachable"])
    return runs


def run_benchmark(corpus: Corpus, cfg: BenchConfig,
                  progress=None) -> dict:
    """Repeat every pair and summarize success rates.

    ``progress`` is an optional callable fed one PairRuns at a time, for
    incremental console output during long runs.
    """
    pairs = cfg.pairs if cfg.pairs is not None else corpus.pairs()
    rows = []
    for project_name, vuln_id in pairs:
        runs = repeat_pair(corpus, project_name, vuln_id, cfg)
        rows.append(runs)
        if progress is not None:
            progress(runs)
    exploitable_rows = [r for r in rows if r.expected_exploitable]
    safe_rows = [r for r in rows if not r.expected_exploitable]
    return {
        "config": {
            "repeats": cfg.repeats,
            "budget_secs": cfg.budget_secs,
            "base_seed": cfg.base_seed,
            "use_existing_tests": cfg.use_existing_tests,
            "migration_rules": cfg.migration_rules,
            "workers": cfg.workers,
        },
        "pairs": [r.as_row() for r in rows],
        "summary": {
            "pairs": len(rows),
            "designed_exploitable": len(exploitable_rows),
            "designed_safe": len(safe_rows),
            "exploitable_detected_majority": sum(
                1 for r in exploitable_rows
                if r.exploitable_runs >= (len(r.verdicts) + 1) // 2),
            "safe_false_positives": sum(
                1 for r in safe_rows if r.exploitable_runs > 0),
            "total_runs": sum(len(r.verdicts) for r in rows),
            "slowest_run_secs": round(max((r.max_secs for r in rows),
                                          default=0.0), 3),
        },
    }


def compare_ablation(corpus: Corpus, cfg: BenchConfig, progress=None) -> dict:
    """Full pipeline vs migration rules disabled, same seeds and budget.

    With rules off the migration phase only replays candidates unmodified,
    so any success must come from the generator landing a verbatim payload.
    """
    full_cfg = BenchConfig(**{**cfg.__dict__, "migration_rules": True})
    bare_cfg = BenchConfig(**{**cfg.__dict__, "migration_rules": False,
                              "use_existing_tests": "never"})
    full = run_benchmark(corpus, full_cfg, progress)
    bare = run_benchmark(corpus, bare_cfg, progress)

    def successes(report: dict) -> dict[str, int]:
        return {f"{row['project']}/{row['vuln']}": row["exploitable_runs"]
                for row in report["pairs"] if row["expected_exploitable"]}

    full_succ = successes(full)
    bare_succ = successes(bare)
    lost = sorted(k for k, n in full_succ.items()
                  if n > 0 and bare_succ.get(k, 0) == 0)
    return {
        "full": full,
        "rules_disabled": bare,
        "comparison": {
            "full_total_successes": sum(full_succ.values()),
            "bare_total_successes": sum(bare_succ.values()),
            "pairs_lost_without_rules": lost,
            "pairs_lost_count": len(lost),
        },
    }


def compare_existing_tests(corpus: Corpus, pairs: list[tuple[str, str]],
                           seeds: int = 10, budget_secs: float = 10.0) -> dict:
    """Paired-seed wall-clock comparison: harvest project tests vs ignore them."""
    rows = []
    for project_name, vuln_id in pairs:
        project = corpus.projects[project_name]
        vuln = corpus.vulns[vuln_id]
        timings = {"auto": [], "never": []}
        verdict_ok = True
        for seed in range(seeds):
            for mode in ("auto", "never"):
                cfg = PipelineConfig(budget_secs=budget_secs, seed=seed,
                                     use_existing_tests=mode)
                started = time.perf_counter()
                report = run_pipeline(corpus, project, vuln, cfg).report
                timings[mode].append(time.perf_counter() - started)
                if (report["verdict"] == "exploitable") != project.expected_exploitable:
                    verdict_ok = False
        rows.append({
            "project": project_name,
            "vuln": vuln_id,
            "median_auto_secs": round(statistics.median(timings["auto"]), 4),
            "median_never_secs": round(statistics.median(timings["never"]), 4),
            "verdicts_match_expected": verdict_ok,
        })
    return {"seeds": seeds, "budget_secs": budget_secs, "pairs": rows}


def write_report(report: dict, out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def format_pair_line(runs: PairRuns) -> str:
    flag = "exploitable" if runs.expected_exploitable else "safe"
    ok = runs.exploitable_runs
    total = len(runs.verdicts)
    return (f"{runs.project:13s} {runs.vuln}  [{flag:11s}] "
            f"exploitable {ok:2d}/{total}  median {runs.median_secs:6.2f}s")
