import random

import pytest
from hypothesis import given, settings, strategies as st

from vexploit.callgraph import build_call_graph, discover_entries
from vexploit.errors import ConfigError
from vexploit.genetic import (GaConfig, MutationContext, TestCase,
                              branch_distance, crossover, generate,
                              harvest_pools, init_test, mutate, score_run)
from vexploit.instrument import run_instrumented
from vexploit.payload import ExploitPayload
from vexploit.values import FileRef

from helpers import program_from, qn


# distance is zero exactly when the comparison already holds, and shrinks
# as the operands approach the flip point
@pytest.mark.parametrize("op, lhs, rhs, expected", [
    ("==", 7, 10, 3.0),
    ("==", 10, 10, 0.0),
    ("!=", 5, 5, 1.0),
    ("!=", 5, 6, 0.0),
    ("<", 5, 5, 1.0),
    ("<", 4, 5, 0.0),
    ("<", 9, 5, 5.0),
    ("<=", 5, 5, 0.0),
    ("<=", 7, 5, 2.0),
    (">", 5, 5, 1.0),
    (">", 5, 9, 5.0),
    (">=", 5, 5, 0.0),
    (">=", 3, 5, 2.0),
])
def test_branch_distance_numeric_table(op, lhs, rhs, expected):
    assert branch_distance(op, lhs, rhs) == expected


def test_branch_distance_strings_use_edit_distance():
    assert branch_distance("==", "kitten", "sitting") == 3.0
    assert branch_distance("==", "same", "same") == 0.0
    assert branch_distance("!=", "a", "a") == 1.0
    assert branch_distance("!=", "a", "b") == 0.0
    assert branch_distance("<", "a", "b") == 1.0  # no order gradient


def test_branch_distance_bools_and_mixed_types():
    assert branch_distance("==", True, True) == 0.0
    assert branch_distance("==", True, False) == 1.0
    assert branch_distance("==", "s", 3) == 1.0
    assert branch_distance("==", None, 3) == 1.0


@given(st.integers(-1000, 1000), st.integers(-1000, 1000))
def test_branch_distance_zero_iff_satisfied(a, b):
    for op, holds in (("==", a == b), ("!=", a != b), ("<", a < b),
                      ("<=", a <= b), (">", a > b), (">=", a >= b)):
        d = branch_distance(op, a, b)
        assert d >= 0.0
        assert (d == 0.0) == holds


# secret is computed, not spelled out, so it never lands in the constant pool
GUARDED = {
    "app": """
        pub fn gate(secret: str, n: int) {
            if n > 100 {
                if secret == @concat("open-", "sesame") { return lib::sink(secret); }
            }
            return "no";
        }
    """,
}
GUARDED_LIBS = {"lib": 'pub fn sink(s: str) { return s; }'}


def guarded_setup():
    program = program_from(GUARDED, libraries=GUARDED_LIBS)
    graph = build_call_graph(program)
    (entry,) = discover_entries(graph, program, qn("lib::sink"))
    return program, entry


def run_and_score(program, entry, args, payload):
    run = run_instrumented(program, entry.function, args, qn("lib::sink"))
    return score_run(run, entry, payload)


def test_score_components_when_target_hit():
    program, entry = guarded_setup()
    payload = ExploitPayload(["open-sesame"])
    score = run_and_score(program, entry, ["open-sesame", 200], payload)
    assert (score.entry_module, score.entry_function, score.reach) == (1, 1, 1)
    assert score.sim == 1.0
    assert score.total == 4.0


def test_score_reach_grows_as_guards_get_closer():
    program, entry = guarded_setup()
    payload = ExploitPayload(["open-sesame"])
    far = run_and_score(program, entry, ["x", 0], payload)
    near = run_and_score(program, entry, ["x", 150], payload)
    close = run_and_score(program, entry, ["open-sesamX", 150], payload)
    hit = run_and_score(program, entry, ["open-sesame", 150], payload)
    assert far.reach < near.reach < close.reach < hit.reach == 1.0
    assert far.sim == near.sim == close.sim == 0.0
    assert hit.sim == 1.0
    # two-node path, two nested guards: reach = 1 - (approach + blocked) / 2
    # where blocked = (guards_left - 1 + d/(d+1)) / 2 at the divergence guard
    assert far.reach == pytest.approx(1 - (1 + (1 + 101 / 102) / 2) / 2)
    assert near.reach == pytest.approx(1 - (1 + (11 / 12) / 2) / 2)
    assert close.reach == pytest.approx(1 - (1 + (1 / 2) / 2) / 2)
    assert far.total < near.total < close.total < hit.total == 4.0


def test_score_rewards_clearing_a_guard_even_when_next_is_farther():
    # without credit for satisfied guards the search would park right at
    # the numeric guard boundary instead of crossing it
    program, entry = guarded_setup()
    payload = ExploitPayload(["open-sesame"])
    parked = run_and_score(program, entry, ["x", 100], payload)
    crossed = run_and_score(program, entry, ["x", 150], payload)
    assert parked.reach < crossed.reach


def test_score_total_stays_in_range():
    program, entry = guarded_setup()
    payload = ExploitPayload(["open-sesame"])
    for args in (["", -5], ["open", 101], ["open-sesame", 101]):
        score = run_and_score(program, entry, args, payload)
        assert 0.0 <= score.total <= 4.0


def test_empty_payload_scores_full_similarity_on_hit():
    program, entry = guarded_setup()
    score = run_and_score(program, entry, ["open-sesame", 200],
                          ExploitPayload([]))
    assert score.sim == 1.0


def test_test_case_id_stable_and_root_independent(tmp_path):
    a = TestCase(qn("app::gate"), ["x", 1])
    b = TestCase(qn("app::gate"), ["x", 1])
    c = TestCase(qn("app::gate"), ["x", 2])
    assert a.id == b.id != c.id
    ref1 = FileRef(path="f.dat", root=str(tmp_path / "one"))
    ref2 = FileRef(path="f.dat", root=str(tmp_path / "two"))
    assert TestCase(qn("app::gate"), [ref1]).id \
        == TestCase(qn("app::gate"), [ref2]).id


def make_ctx(program, entries, payload=None, **cfg_kw):
    payload = payload if payload is not None else ExploitPayload(["open-sesame"])
    cfg = GaConfig(**cfg_kw)
    return MutationContext(entries, payload, harvest_pools(program, None), cfg)


def test_init_test_respects_annotations():
    program, entry = guarded_setup()
    ctx = make_ctx(program, [entry])
    rng = random.Random(0)
    for _ in range(20):
        test = init_test(entry, ctx, rng)
        assert isinstance(test.args[0], str)
        assert isinstance(test.args[1], int) \
            and not isinstance(test.args[1], bool)


def test_mutation_is_deterministic_for_fixed_seed():
    program, entry = guarded_setup()
    ctx = make_ctx(program, [entry])
    base = TestCase(entry.function, ["seed", 5])
    one = mutate(base.clone(), ctx, random.Random(99))
    two = mutate(base.clone(), ctx, random.Random(99))
    assert one.args == two.args and one.entry == two.entry


def test_mutation_leaves_base_untouched():
    program, entry = guarded_setup()
    ctx = make_ctx(program, [entry])
    base = TestCase(entry.function, ["seed", 5])
    mutate(base, ctx, random.Random(1))
    assert base.args == ["seed", 5]


def test_payload_seeding_reaches_argument_values():
    program, entry = guarded_setup()
    ctx = make_ctx(program, [entry], payload=ExploitPayload(["open-sesame"]),
                   payload_seed_prob=1.0)
    rng = random.Random(3)
    seeded = 0
    for _ in range(200):
        test = init_test(entry, ctx, rng)
        if test.args[0] == "open-sesame":
            seeded += 1
    assert seeded > 0


def test_crossover_single_point_when_entries_match():
    a = TestCase(qn("app::gate"), ["a0", 1, "a2"])
    b = TestCase(qn("app::gate"), ["b0", 2, "b2"])
    rng = random.Random(0)
    children = [crossover(a.clone(), b.clone(), rng) for _ in range(50)]
    for left, right in children:
        for i in range(3):
            pair = {left.args[i], right.args[i]} - {None}
            assert pair == {a.args[i], b.args[i]}
    assert any(left.args != a.args for left, _ in children)


def test_crossover_pass_through_on_entry_mismatch():
    a = TestCase(qn("app::gate"), ["a", 1])
    b = TestCase(qn("other::fn"), ["b", 2])
    left, right = crossover(a, b, random.Random(0))
    assert left.args == a.args and right.args == b.args


def test_zero_arity_mutation_keeps_empty_args():
    program = program_from(
        {"app": "pub fn fire() { return lib::sink(\"x\"); }"},
        libraries=GUARDED_LIBS)
    graph = build_call_graph(program)
    (entry,) = discover_entries(graph, program, qn("lib::sink"))
    ctx = make_ctx(program, [entry], payload=ExploitPayload([]))
    test = mutate(TestCase(entry.function, []), ctx, random.Random(0))
    assert test.args == []


def test_ga_config_validation():
    with pytest.raises(ConfigError):
        GaConfig(population=1)
    with pytest.raises(ConfigError):
        GaConfig(elitism=50, population=50)
    with pytest.raises(ConfigError):
        GaConfig(search_strategy="annealing")


def generate_on_guarded(strategy, seed=0, budget=3.0, payload_seed_prob=0.0):
    program, entry = guarded_setup()
    payload = ExploitPayload(["open-sesame"])
    cfg = GaConfig(rng_seed=seed, budget_secs=budget,
                   payload_seed_prob=payload_seed_prob,
                   search_strategy=strategy, stall_generations=0)
    return generate(program, [entry], qn("lib::sink"), payload, cfg)


# the pool holds "sesa" and "me" but never the assembled secret, so the search
# must edit its way along the guard gradient; two inserts separate the best
# pool string from the secret
CLIMB = {
    "app": """
        pub fn gate(secret: str, n: int) {
            if n > 100 {
                if secret == @concat("sesa", "me") { return lib::sink(secret); }
            }
            return "no";
        }
    """,
}


def generate_on_climb(strategy, seed=0, budget=8.0):
    program = program_from(CLIMB, libraries=GUARDED_LIBS)
    graph = build_call_graph(program)
    (entry,) = discover_entries(graph, program, qn("lib::sink"))
    cfg = GaConfig(rng_seed=seed, budget_secs=budget, payload_seed_prob=0.0,
                   search_strategy=strategy, stall_generations=0)
    return generate(program, [entry], qn("lib::sink"),
                    ExploitPayload(["sesame"]), cfg)


def test_ga_beats_random_on_string_guard():
    # the secret-string guard gives the GA a Levenshtein gradient to climb;
    # random draws must land the exact string, which practically never
    # happens without payload seeding
    ga = generate_on_climb("ga", budget=8.0)
    rand = generate_on_climb("random", budget=2.0)
    assert ga.success
    assert ga.best_score.sim == 1.0
    assert not rand.success
    assert ga.best_score.total > rand.best_score.total


def test_generate_is_deterministic_single_worker():
    one = generate_on_guarded("ga", seed=11, budget=1.0, payload_seed_prob=0.2)
    two = generate_on_guarded("ga", seed=11, budget=1.0, payload_seed_prob=0.2)
    assert one.success == two.success
    if one.best_test is not None:
        assert one.best_test.id == two.best_test.id
    assert [e.test.id for e in one.archive] == [e.test.id for e in two.archive]


def test_archive_collects_covering_tests():
    # payload seeding plants the secret directly, so success comes quickly
    result = generate_on_guarded("ga", budget=5.0, payload_seed_prob=0.5)
    assert result.archive, "a successful search must archive covering tests"
    seen = set()
    for entry in result.archive:
        assert entry.score.reach == 1.0
        assert entry.test.id not in seen
        seen.add(entry.test.id)


def test_stats_record_per_candidate_work():
    result = generate_on_guarded("ga", budget=5.0, payload_seed_prob=0.5)
    (cand,) = result.stats
    assert cand.function == qn("app::gate")
    assert cand.stopped == "success"
    assert cand.evaluations > 0
    assert result.evaluations >= cand.evaluations
