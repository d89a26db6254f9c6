"""End-to-end analysis runs: scanning, verdicts, reports, and replays."""

import json
import os

import pytest

from vexploit.callgraph import build_call_graph, discover_entries
from vexploit.errors import ConfigError
from vexploit.interp import Budgets
from vexploit.pipeline import (PipelineConfig, read_pragmas,
                               report_without_timings, run_pipeline,
                               run_rendered_test, scan_existing_tests,
                               value_to_expr)
from vexploit.values import FileRef

from helpers import program_from, qn


def test_pipeline_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(use_existing_tests="sometimes")
    with pytest.raises(ConfigError):
        PipelineConfig(budget_secs=0)
    with pytest.raises(ConfigError):
        PipelineConfig(workers=0)
    with pytest.raises(ConfigError):
        PipelineConfig(search_strategy="annealing")
    with pytest.raises(ConfigError):
        PipelineConfig(search_overrides={"pop": 3})
    # override values flow into the search config and fail fast
    with pytest.raises(ConfigError):
        PipelineConfig(search_overrides={"population": 1})
    cfg = PipelineConfig(search_overrides={"population": 8, "elitism": 2})
    assert cfg._ga_config().population == 8


def run_fast(corpus, project, vuln_id, **kw):
    cfg = PipelineConfig(budget_secs=6.0, seed=0, **kw)
    return run_pipeline(corpus, corpus.projects[project], corpus.vulns[vuln_id], cfg)


def test_pipeline_finds_designed_exploitable_pair(corpus):
    result = run_fast(corpus, "userportal", "VEX-2024-0004")
    report = result.report
    assert result.exploitable
    assert report["verdict"] == "exploitable"
    assert report["reachable"] is True
    assert report["schema"] == 1
    assert report["evidence"]["kind"] == report["vuln"]["trigger"]
    assert report["test"]["subst_function"]
    assert report["config"]["seed"] == 0


def test_pipeline_clears_reachable_but_safe_twin(corpus):
    report = run_fast(corpus, "usersafe", "VEX-2024-0004").report
    assert report["verdict"] == "not_exploitable"
    assert report["reachable"] is True


def test_pipeline_reports_unreachable_project(corpus):
    report = run_fast(corpus, "pingwatch", "VEX-2024-0004").report
    assert report["verdict"] == "not_exploitable"
    assert report["reachable"] is False


def test_pipeline_rejects_project_without_the_library(corpus):
    project = corpus.projects["userportal"]
    vuln = next(v for v in corpus.vulns.values()
                if v.library not in project.libraries)
    with pytest.raises(ConfigError, match="does not link"):
        run_pipeline(corpus, project, vuln, PipelineConfig(budget_secs=2.0))


def test_pipeline_writes_report_and_replayable_test(corpus, tmp_path):
    report_path = tmp_path / "out" / "report.json"
    result = run_fast(corpus, "userportal", "VEX-2024-0004",
                      report_path=str(report_path))
    on_disk = json.loads(report_path.read_text())
    assert on_disk == result.report
    assert result.rendered_test_path is not None
    assert on_disk["rendered_test"] == os.path.basename(result.rendered_test_path)
    pragmas = read_pragmas(result.rendered_test_path)
    assert pragmas["project"] == "userportal"
    assert pragmas["vuln"] == "VEX-2024-0004"
    replay = run_rendered_test(result.rendered_test_path, corpus)
    assert replay["trigger_fired"] is True
    assert replay["trigger_kind"] == result.report["vuln"]["trigger"]


def test_pipeline_reports_are_seed_deterministic(corpus):
    a = run_fast(corpus, "usersafe", "VEX-2024-0004").report
    b = run_fast(corpus, "usersafe", "VEX-2024-0004").report
    assert report_without_timings(a) == report_without_timings(b)


def test_existing_test_modes_control_the_scan(corpus):
    auto = run_fast(corpus, "noteapp", "VEX-2024-0001").report
    never = run_fast(corpus, "noteapp", "VEX-2024-0001",
                     use_existing_tests="never").report
    assert auto["stats"]["existing_tests_scanned"] > 0
    assert never["stats"]["existing_tests_scanned"] == 0
    assert auto["verdict"] == never["verdict"] == "exploitable"
    # the project's own test reached the target before any search ran
    assert auto["stats"]["ga"] is None
    assert auto["test"]["source"] == "existing"
    assert never["test"]["source"] == "generated"


def test_only_mode_never_searches(corpus):
    # csvtool ships no test suite, so only mode has nothing to work with
    report = run_fast(corpus, "csvtool", "VEX-2024-0009",
                      use_existing_tests="only").report
    assert report["verdict"] == "not_exploitable"
    assert report["stats"]["ga"] is None


def test_search_overrides_recorded_in_report(corpus):
    report = run_fast(corpus, "usersafe", "VEX-2024-0004",
                      search_overrides={"population": 16}).report
    assert report["config"]["search_overrides"] == {"population": 16}


SCAN_APP = {"app": """
    pub fn entry(s: str) { return vuln::sink(s); }
    pub fn other(s: str) { return s; }
"""}
SCAN_LIBS = {"vuln": "pub fn sink(s: str) { return s; }"}
SCAN_TESTS = {"t_app": """
    pub fn t_reaches() { return app::entry("hello"); }
    pub fn t_misses() { return app::other("x"); }
    fn t_private() { return app::entry("p"); }
    pub fn t_with_args(n: int) { return app::entry("a"); }
"""}


def test_scan_finds_reaching_zero_arg_tests():
    program = program_from(SCAN_APP, libraries=SCAN_LIBS, tests=SCAN_TESTS)
    graph = build_call_graph(program)
    entries = discover_entries(graph, program, qn("vuln::sink"))
    scan = scan_existing_tests(program, entries, qn("vuln::sink"), Budgets(), None)
    assert scan.scanned == 2
    assert scan.reaching == 1
    (cand,) = scan.candidates
    assert cand.entry == qn("t_app::t_reaches")
    assert cand.subst_function == qn("app::entry")
    assert cand.subst_params == [("s", "str")]
    assert cand.source == "existing"
    assert cand.fitness_total == 4.0


def test_value_to_expr_renders_vex_literals(tmp_path):
    assert value_to_expr(7, {}) == "7"
    assert value_to_expr('x"y', {}) == '"x\\"y"'
    assert value_to_expr([1, "a"], {}) == '[1, "a"]'
    assert value_to_expr({"k": 2.5}, {}) == "{k: 2.5}"
    ref = FileRef(path="f.dat", root=str(tmp_path))
    paths = {(ref.root, ref.path): "files/f.dat"}
    assert value_to_expr(ref, paths) == '@open("files/f.dat")'


def test_read_pragmas_ignores_ordinary_lines(tmp_path):
    f = tmp_path / "t.vex"
    f.write_text("#! project: demo\n// comment\n#! vuln: V-1\n"
                 "pub fn main() { return null; }\n#! not a pragma\n")
    assert read_pragmas(str(f)) == {"project": "demo", "vuln": "V-1"}


def test_run_rendered_test_rejects_bad_inputs(corpus, tmp_path):
    with pytest.raises(ConfigError, match="no such test"):
        run_rendered_test(str(tmp_path / "ghost.vex"), corpus)
    bare = tmp_path / "bare.vex"
    bare.write_text("pub fn main() { return null; }\n")
    with pytest.raises(ConfigError, match="pragma"):
        run_rendered_test(str(bare), corpus)
    wrong = tmp_path / "wrong.vex"
    wrong.write_text("#! project: userportal\n#! vuln: VEX-9999-0000\n"
                     "pub fn main() { return null; }\n")
    with pytest.raises(ConfigError, match="unknown vulnerability"):
        run_rendered_test(str(wrong), corpus)
