"""Command line interface.

Subcommands:

* ``run``       decide whether one project is exploitable through one
                recorded library vulnerability
* ``corpus``    validate or list the bundled corpus
* ``callgraph`` inspect static reachability from a project's entry points
* ``exec``      replay a rendered test file and re-check its trigger
* ``bench``     repeated-run success rates, optionally the rules ablation

Exit status: 0 for a completed run, 1 when a check command found failures
(``corpus validate`` with broken records, ``exec`` whose trigger did not
fire), 2 for configuration errors such as unknown names or bad flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from . import __version__
from .bench import (BenchConfig, compare_ablation, format_pair_line,
                    run_benchmark, write_report)
from .callgraph import build_call_graph, discover_entries, to_dot, edge_listing
from .corpus import (Corpus, ProjectManifest, assemble_project_program,
                     load_corpus, load_project, load_toml, validate_corpus)
from .errors import ConfigError, CorpusError
from .frontend.ast import QualifiedName
from .pipeline import (SEARCH_OVERRIDE_KEYS, PipelineConfig, run_pipeline,
                       run_rendered_test)

# PipelineConfig keys settable from a [run] table or a same-named flag
_RUN_KEYS = ("budget_secs", "seed", "use_existing_tests", "workers",
             "migration_rules", "search_strategy", "eval_max_steps",
             "max_call_depth")


def _corpus(args: argparse.Namespace) -> Corpus:
    return load_corpus(args.corpus)


def _project(corpus: Corpus, name_or_dir: str) -> ProjectManifest:
    if name_or_dir in corpus.projects:
        return corpus.projects[name_or_dir]
    if os.path.isdir(name_or_dir):
        return load_project(name_or_dir)
    raise ConfigError(f"unknown project {name_or_dir!r} "
                      f"(not a corpus entry or directory)")


def _vuln(corpus: Corpus, vuln_id: str):
    vuln = corpus.vulns.get(vuln_id)
    if vuln is None:
        known = ", ".join(sorted(corpus.vulns))
        raise ConfigError(f"unknown vulnerability {vuln_id!r} (known: {known})")
    return vuln


def _add_corpus_flag(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--corpus", default=None, metavar="DIR",
                     help="corpus root (default: $VEXPLOIT_CORPUS or ./corpus)")


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    """Merge precedence: dataclass defaults < --config file < explicit flags."""
    file_run: dict = {}
    file_search: dict = {}
    if args.config:
        data = load_toml(args.config)
        unknown = set(data) - {"run", "search"}
        if unknown:
            raise ConfigError(f"{args.config}: unknown table(s) "
                              f"{sorted(unknown)}; expected [run] and [search]")
        file_run = data.get("run", {})
        file_search = data.get("search", {})
        bad = set(file_run) - set(_RUN_KEYS)
        if bad:
            raise ConfigError(f"{args.config}: unknown [run] key(s) "
                              f"{sorted(bad)}; valid: {list(_RUN_KEYS)}")

    kwargs = dict(file_run)
    for key in _RUN_KEYS:
        flag = getattr(args, key)
        if flag is not None:
            kwargs[key] = flag

    overrides = dict(file_search)
    for key in sorted(SEARCH_OVERRIDE_KEYS):
        flag = getattr(args, key)
        if flag is not None:
            overrides[key] = flag

    if args.ablation:
        kwargs["migration_rules"] = False
        kwargs["use_existing_tests"] = "never"
    return PipelineConfig(report_path=args.report,
                          search_overrides=overrides, **kwargs)


def cmd_run(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    project = _project(corpus, args.project)
    vuln = _vuln(corpus, args.vuln)
    cfg = _pipeline_config(args)
    result = run_pipeline(corpus, project, vuln, cfg)
    report = result.report

    if args.json:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return 0

    print(f"project   {report['project']}")
    print(f"vuln      {vuln.id}  {vuln.function.render()}  "
          f"trigger={vuln.trigger.kind}")
    print(f"verdict   {report['verdict']}")
    print(f"reachable {'yes' if report['reachable'] else 'no'}")
    evidence = report.get("evidence")
    if evidence:
        print(f"evidence  {evidence['kind']}: {evidence['detail']}")
    test = report.get("test")
    if test:
        chain = ", ".join(test["rule_chain"]) or "direct substitution"
        print(f"test      entry {test['entry']} ({test['source']}), "
              f"payload into {test['subst_function']} "
              f"arg {test['position']} via {chain}")
    near = report.get("near_miss")
    if near and not test:
        where = (f"arg {near['position']}" if near["position"] is not None
                 else "unmodified arguments")
        print(f"near miss similarity {near['similarity']:.4f} "
              f"at {near['subst_function']}, {where}")
    if result.rendered_test_path:
        print(f"rendered  {result.rendered_test_path}")
    if args.report:
        print(f"report    {args.report}")
    return 0


def cmd_corpus(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    if args.corpus_cmd == "list":
        print(f"corpus root: {corpus.root}")
        print(f"\nlibraries ({len(corpus.libraries)}):")
        for name in sorted(corpus.libraries):
            print(f"  {name}")
        print(f"\nvulnerabilities ({len(corpus.vulns)}):")
        for vid, vuln in sorted(corpus.vulns.items()):
            print(f"  {vid}  {vuln.function.render():28s} {vuln.trigger.kind}")
        print(f"\nprojects ({len(corpus.projects)}):")
        for name, project in sorted(corpus.projects.items()):
            mark = "exploitable" if project.expected_exploitable else "safe"
            libs = ", ".join(sorted(project.libraries))
            print(f"  {name:13s} [{mark:11s}] uses {libs}")
        print(f"\npairs: {len(corpus.pairs())}")
        return 0

    # validate
    with tempfile.TemporaryDirectory(prefix="vexploit-validate-") as work:
        results = validate_corpus(corpus, work)
    failures = 0
    for res in results:
        status = "ok" if res.ok else "FAIL"
        print(f"{status:4s} {res.vuln_id}: {res.message}")
        failures += 0 if res.ok else 1
    print(f"\n{len(results) - failures}/{len(results)} records valid")
    return 1 if failures else 0


def cmd_callgraph(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    project = _project(corpus, args.project)
    program = assemble_project_program(corpus, project, include_tests=False)
    graph = build_call_graph(program)

    target = None
    if args.vuln:
        target = _vuln(corpus, args.vuln).function
    elif args.to:
        try:
            target = QualifiedName.parse(args.to)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    entries = []
    if target is not None:
        if program.lookup(target) is None:
            raise ConfigError(f"{target.render()} is not defined in this program")
        entries = discover_entries(graph, program, target)
        if not entries:
            print(f"no entry point reaches {target.render()}")
        for cand in entries:
            hops = " -> ".join(q.render() for q in cand.path.nodes)
            print(f"entry {cand.function.render()}  ({len(cand.path.nodes) - 1} hops)")
            print(f"      {hops}")
    else:
        print(edge_listing(graph))

    if args.dot:
        dot = to_dot(graph, vulnerable=target,
                     entries=[c.function for c in entries])
        if args.dot == "-":
            sys.stdout.write(dot)
        else:
            with open(args.dot, "w", encoding="utf-8") as fh:
                fh.write(dot)
            print(f"dot graph written to {args.dot}")
    return 0


def cmd_exec(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    result = run_rendered_test(args.file, corpus,
                               max_steps=args.max_steps,
                               max_call_depth=args.max_call_depth)
    error = f" ({result['error']})" if result["error"] else ""
    print(f"outcome    {result['outcome']}{error}")
    print(f"steps      {result['steps_used']}")
    print(f"target hit {'yes' if result['target_hit'] else 'no'}")
    if result["trigger_fired"]:
        print(f"trigger    {result['trigger_kind']} fired: {result['evidence']}")
        return 0
    print(f"trigger    {result['trigger_kind']} did not fire")
    return 1


def cmd_bench(args: argparse.Namespace) -> int:
    corpus = _corpus(args)
    pairs = None
    if args.pair:
        pairs = []
        for text in args.pair:
            pname, sep, vid = text.partition("/")
            if not sep:
                raise ConfigError(f"--pair wants PROJECT/VULN-ID, got {text!r}")
            _project(corpus, pname)
            _vuln(corpus, vid)
            pairs.append((pname, vid))
    cfg = BenchConfig(
        repeats=args.repeats,
        budget_secs=args.budget_secs,
        base_seed=args.seed,
        use_existing_tests=args.use_existing_tests,
        pairs=pairs,
    )

    def progress(runs):
        print(format_pair_line(runs))
        sys.stdout.flush()

    if args.ablation:
        report = compare_ablation(corpus, cfg, progress)
        comp = report["comparison"]
        print(f"\nfull pipeline successes:  {comp['full_total_successes']}")
        print(f"rules-disabled successes: {comp['bare_total_successes']}")
        print(f"pairs lost without rules: {comp['pairs_lost_count']}")
        for name in comp["pairs_lost_without_rules"]:
            print(f"  {name}")
        name = "ablation.json"
    else:
        report = run_benchmark(corpus, cfg, progress)
        summary = report["summary"]
        print(f"\npairs: {summary['pairs']}  "
              f"majority-detected exploitable: "
              f"{summary['exploitable_detected_majority']}"
              f"/{summary['designed_exploitable']}  "
              f"safe false positives: {summary['safe_false_positives']}")
        name = "bench.json"
    if args.out:
        path = write_report(report, args.out, name)
        print(f"report written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vexploit",
        description="decide whether a project is exploitable through a "
                    "vulnerable library function")
    parser.add_argument("--version", action="version",
                        version=f"vexploit {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="analyze one project/vulnerability pair")
    run.add_argument("--project", required=True,
                     help="corpus project name or a project directory")
    run.add_argument("--vuln", required=True, help="vulnerability id")
    run.add_argument("--config", metavar="PATH",
                     help="TOML file with [run] and [search] tables; "
                          "explicit flags win over file values")
    run.add_argument("--budget-secs", type=float, default=None,
                     help="search budget in seconds (default 10)")
    run.add_argument("--seed", type=int, default=None,
                     help="search rng seed (default 0)")
    run.add_argument("--use-existing-tests", default=None,
                     choices=("auto", "only", "never"),
                     help="harvest the project's own test functions "
                          "(default auto)")
    run.add_argument("--workers", type=int, default=None,
                     help="parallel fitness evaluations (default 1)")
    run.add_argument("--search-strategy", default=None,
                     choices=("ga", "random"),
                     help="input generation strategy (default ga)")
    run.add_argument("--eval-max-steps", type=int, default=None,
                     help="interpreter step budget per execution "
                          "(default 200000)")
    run.add_argument("--max-call-depth", type=int, default=None,
                     help="interpreter call depth budget (default 512)")
    run.add_argument("--no-migration-rules", dest="migration_rules",
                     action="store_const", const=False, default=None,
                     help="replay candidates unmodified instead of "
                          "applying repair rules")
    for flag, kind, doc in (
            ("--population", int, "individuals per generation (default 50)"),
            ("--tournament", int, "selection tournament size (default 4)"),
            ("--crossover-rate", float, "default 0.75"),
            ("--per-arg-mutation-rate", float, "default 0.3"),
            ("--elitism", int, "individuals kept verbatim (default 2)"),
            ("--payload-seed-prob", float,
             "chance of seeding from payload atoms (default 0.2)"),
            ("--entry-redraw-prob", float,
             "chance a mutation switches entry point (default 0.05)"),
            ("--stall-generations", int,
             "stop after this many flat generations, 0 never (default 12)")):
        run.add_argument(flag, type=kind, default=None, help=doc)
    run.add_argument("--report", metavar="PATH",
                     help="write the JSON report here (and render the "
                          "replay test next to it on success)")
    run.add_argument("--json", action="store_true",
                     help="print the JSON report to stdout")
    run.add_argument("--ablation", action="store_true",
                     help="generator-only baseline: no migration rules, "
                          "no test harvesting")
    _add_corpus_flag(run)
    run.set_defaults(handler=cmd_run)

    corpus_cmd = subs.add_parser("corpus", help="inspect the corpus")
    corpus_subs = corpus_cmd.add_subparsers(dest="corpus_cmd", required=True)
    for name, doc in (("validate", "replay every recorded exploit against "
                                   "its bare library"),
                      ("list", "print libraries, vulnerabilities, projects")):
        sub = corpus_subs.add_parser(name, help=doc)
        _add_corpus_flag(sub)
        sub.set_defaults(handler=cmd_corpus)

    cg = subs.add_parser("callgraph", help="static reachability for a project")
    cg.add_argument("--project", required=True)
    cg.add_argument("--vuln", help="mark this vulnerability's function")
    cg.add_argument("--to", metavar="MODULE::FN",
                    help="mark an arbitrary target function")
    cg.add_argument("--dot", metavar="PATH",
                    help="write a graphviz file ('-' for stdout)")
    _add_corpus_flag(cg)
    cg.set_defaults(handler=cmd_callgraph)

    ex = subs.add_parser("exec", help="replay a rendered test file")
    ex.add_argument("file", help="path to a rendered .vex test")
    ex.add_argument("--max-steps", type=int, default=None,
                    help="override the file's step budget pragma")
    ex.add_argument("--max-call-depth", type=int, default=None)
    _add_corpus_flag(ex)
    ex.set_defaults(handler=cmd_exec)

    bench = subs.add_parser("bench", help="repeated-run benchmark")
    bench.add_argument("--repeats", type=int, default=10)
    bench.add_argument("--budget-secs", type=float, default=10.0)
    bench.add_argument("--seed", type=int, default=0,
                       help="first seed; run i uses seed+i")
    bench.add_argument("--use-existing-tests", default="auto",
                       choices=("auto", "only", "never"))
    bench.add_argument("--pair", action="append", metavar="PROJECT/VULN-ID",
                       help="restrict to these pairs (repeatable)")
    bench.add_argument("--ablation", action="store_true",
                       help="also run with migration rules disabled and "
                            "compare success counts")
    bench.add_argument("--out", metavar="DIR", help="write the JSON report")
    _add_corpus_flag(bench)
    bench.set_defaults(handler=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
