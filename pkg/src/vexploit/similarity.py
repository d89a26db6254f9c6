"""Type-dispatched similarity between runtime values, scored in [0, 1].

The string metric is normalized Levenshtein distance; records compare the
expected side's fields only (extra actual fields are free); files compare as
{content, size} records; lists pair elements up to the shorter length and
scale by the length ratio.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CorpusError
from .values import FileRef, Value

_NUMPY_THRESHOLD = 64  # below this the plain two-row DP wins


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit-cost insert, delete, and substitute."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a  # keep the inner dimension small
    if len(a) <= _NUMPY_THRESHOLD:
        return _levenshtein_small(a, b)
    return _levenshtein_rows(a, b)


def _levenshtein_small(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1,
                           cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _levenshtein_rows(a: str, b: str) -> int:
    # Row-at-a-time DP. Insertions create a row-internal dependency; it is
    # resolved exactly by the prefix-min identity
    #   row[j] = j + min_{k <= j}(c[k] - k)   where c = min(sub, del) costs.
    codes_b = np.frombuffer(b.encode("utf-32-le"), dtype=np.uint32)
    n = len(b)
    offsets = np.arange(n + 1, dtype=np.int64)
    prev = offsets.copy()
    c = np.empty(n + 1, dtype=np.int64)
    for i, ca in enumerate(a, 1):
        np.minimum(prev[:-1] + (codes_b != ord(ca)), prev[1:] + 1, out=c[1:])
        c[0] = i
        prev = np.minimum.accumulate(c - offsets) + offsets
        c = np.empty(n + 1, dtype=np.int64)
    return int(prev[n])


def number_similarity(actual: Value, expected: Value) -> float:
    if isinstance(expected, bool) or isinstance(actual, bool):
        if isinstance(expected, bool) and isinstance(actual, bool):
            return 1.0 if actual == expected else 0.0
        return 0.0
    if not isinstance(actual, (int, float)):
        return 0.0
    if isinstance(actual, int) and isinstance(expected, int):
        return 1.0 if actual == expected else 0.0
    return 1.0 if math.isclose(float(actual), float(expected),
                               rel_tol=1e-9, abs_tol=0.0) else 0.0


def string_similarity(actual: str, expected: str) -> float:
    if not actual and not expected:
        return 1.0
    longest = max(len(actual), len(expected))
    return 1.0 - levenshtein(actual, expected) / longest


def object_similarity(actual: dict, expected: dict) -> float:
    if not expected:
        return 1.0 if not actual else 0.0
    total = 0.0
    for name, want in expected.items():
        if name in actual:
            total += similarity(actual[name], want)
    return total / len(expected)


def materialize_file(ref: FileRef) -> dict:
    try:
        content = ref.read_text()
    except OSError as exc:
        raise CorpusError(f"cannot read fixture file {ref.abspath()}: {exc}") from exc
    return {"content": content, "size": len(content.encode("utf-8"))}


def file_similarity(actual: Value, expected: FileRef) -> float:
    want = materialize_file(expected)
    if isinstance(actual, FileRef):
        return object_similarity(materialize_file(actual), want)
    if isinstance(actual, str):
        return string_similarity(actual, want["content"])
    return 0.0


def list_similarity(actual: Value, expected: list) -> float:
    if not isinstance(actual, list):
        return 0.0
    if not actual and not expected:
        return 1.0
    if not actual or not expected:
        return 0.0
    shorter = min(len(actual), len(expected))
    longer = max(len(actual), len(expected))
    paired = sum(similarity(actual[i], expected[i]) for i in range(shorter)) / shorter
    return paired * (shorter / longer)


def similarity(actual: Value, expected: Value) -> float:
    """How close a received value is to the expected one, dispatched on the
    expected value's kind. Asymmetric for records and lists by design."""
    if expected is None:
        return 1.0 if actual is None else 0.0
    if isinstance(expected, bool):
        return 1.0 if isinstance(actual, bool) and actual == expected else 0.0
    if isinstance(expected, (int, float)):
        return number_similarity(actual, expected)
    if isinstance(expected, str):
        if isinstance(actual, str):
            return string_similarity(actual, expected)
        if isinstance(actual, FileRef):
            return string_similarity(materialize_file(actual)["content"], expected)
        return 0.0
    if isinstance(expected, FileRef):
        return file_similarity(actual, expected)
    if isinstance(expected, list):
        return list_similarity(actual, expected)
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            return 0.0
        return object_similarity(actual, expected)
    raise TypeError(f"unsupported value for similarity: {type(expected).__name__}")
