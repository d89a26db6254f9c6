import functools
import math

import pytest
from hypothesis import given, settings, strategies as st

from vexploit.similarity import (levenshtein, list_similarity,
                                 object_similarity, similarity,
                                 string_similarity)
from vexploit.values import FileRef


def reference_levenshtein(a: str, b: str) -> int:
    """Independent oracle: the textbook recursion, memoized."""
    @functools.lru_cache(maxsize=None)
    def dist(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        sub = dist(i - 1, j - 1) + (a[i - 1] != b[j - 1])
        return min(sub, dist(i - 1, j) + 1, dist(i, j - 1) + 1)
    return dist(len(a), len(b))


@pytest.mark.parametrize("a, b, expected", [
    ("", "", 0),
    ("", "abc", 3),
    ("abc", "", 3),
    ("kitten", "sitting", 3),
    ("flaw", "lawn", 2),
    ("saturday", "sunday", 3),
    ("gumbo", "gambol", 2),
    ("identical", "identical", 0),
])
def test_levenshtein_known_distances(a, b, expected):
    assert levenshtein(a, b) == expected
    assert reference_levenshtein(a, b) == expected


def test_levenshtein_exhaustive_small_alphabet():
    words = [""]
    for length in range(1, 4):
        words += ["".join(w) for w in __import__("itertools").product("abc", repeat=length)]
    for a in words:
        for b in words:
            assert levenshtein(a, b) == reference_levenshtein(a, b), (a, b)


def test_levenshtein_long_strings_use_same_metric():
    # crosses the internal switch to the vectorized row implementation
    a = "ab" * 200
    b = "ba" * 199 + "zz"
    assert levenshtein(a, b) == reference_levenshtein(a, b)
    assert levenshtein("x" * 65, "x" * 64 + "y") == 1


@given(st.text(max_size=24), st.text(max_size=24))
def test_levenshtein_matches_reference(a, b):
    assert levenshtein(a, b) == reference_levenshtein(a, b)


@given(st.text(max_size=30), st.text(max_size=30))
def test_levenshtein_symmetry_and_bounds(a, b):
    d = levenshtein(a, b)
    assert d == levenshtein(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
    assert (d == 0) == (a == b)


@given(st.text(max_size=16), st.text(max_size=16), st.text(max_size=16))
def test_levenshtein_triangle_inequality(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_string_similarity_anchor():
    # kitten/sitting: distance 3 over max length 7
    assert string_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7)
    assert string_similarity("", "") == 1.0
    assert string_similarity("abc", "abc") == 1.0
    assert string_similarity("abc", "xyz") == 0.0


def test_number_similarity_rules():
    assert similarity(3, 3) == 1.0
    assert similarity(3, 4) == 0.0  # ints are exact, no gradient
    assert similarity(0.1 + 0.2, 0.3) == 1.0  # tolerant float compare
    assert similarity(0.31, 0.3) == 0.0
    assert similarity(3, 3.0) == 1.0
    assert similarity(True, 1) == 0.0  # bools are not numbers
    assert similarity(1, True) == 0.0
    assert similarity(True, True) == 1.0


def test_null_matches_only_null():
    assert similarity(None, None) == 1.0
    assert similarity(0, None) == 0.0
    assert similarity(None, 0) == 0.0


def test_object_similarity_anchor():
    # one of two expected fields dented by a one-char edit over length 2
    actual = {"a": "xy", "b": 3}
    expected = {"a": "xz", "b": 3}
    assert similarity(actual, expected) == pytest.approx(0.75)


def test_object_similarity_scores_expected_fields_only():
    assert similarity({"a": 1, "extra": 9}, {"a": 1}) == 1.0
    assert similarity({"b": 1}, {"a": 1}) == 0.0  # missing field scores zero
    assert similarity({}, {}) == 1.0
    assert similarity({"a": 1}, {}) == 0.0


def test_list_similarity_pairs_and_scales():
    assert similarity([1, 2], [1, 2]) == 1.0
    # matching prefix of 2 over expected length 4
    assert similarity([1, 2], [1, 2, 3, 4]) == pytest.approx(0.5)
    assert similarity([1, 2, 3, 4], [1, 2]) == pytest.approx(0.5)
    assert similarity([], []) == 1.0
    assert similarity([1], []) == 0.0
    assert similarity("no", [1]) == 0.0


def test_file_similarity_compares_content(tmp_path):
    (tmp_path / "want.txt").write_text("attack-data")
    expected = FileRef(path="want.txt", root=str(tmp_path))
    same = FileRef(path="want.txt", root=str(tmp_path))
    assert similarity(same, expected) == 1.0
    assert similarity("attack-data", expected) == 1.0
    assert 0.0 < similarity("attack-date", expected) < 1.0
    assert similarity(42, expected) == 0.0


def test_string_expected_accepts_file_content(tmp_path):
    (tmp_path / "f.txt").write_text("hello")
    ref = FileRef(path="f.txt", root=str(tmp_path))
    assert similarity(ref, "hello") == 1.0


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-50, 50) |
    st.floats(allow_nan=False, allow_infinity=False, width=32) |
    st.text(max_size=8),
    lambda children: st.lists(children, max_size=3) |
    st.dictionaries(st.text(st.characters(min_codepoint=97, max_codepoint=122),
                            min_size=1, max_size=4), children, max_size=3),
    max_leaves=8)


@settings(max_examples=300)
@given(json_values)
def test_similarity_identity(v):
    assert similarity(v, v) == pytest.approx(1.0)


@settings(max_examples=300)
@given(json_values, json_values)
def test_similarity_bounded(a, b):
    score = similarity(a, b)
    assert 0.0 <= score <= 1.0
    assert not math.isnan(score)


@given(st.text(max_size=20), st.text(max_size=20))
def test_string_similarity_symmetric(a, b):
    assert string_similarity(a, b) == pytest.approx(string_similarity(b, a))
