"""Runtime value universe shared by the interpreter, metrics, and serialization.

Values are plain Python data: None, bool, int, float, str, list, dict (records,
insertion-ordered), plus FileRef for sandboxed file handles. bool must always be
checked before int because it is an int subclass.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from typing import Any, Union


@dataclass
class FileRef:
    """Handle to a file confined under a root directory.

    path is root-relative and normalized; content is read lazily and cached.
    """

    path: str
    root: str
    _content: str | None = field(default=None, repr=False, compare=False)

    def abspath(self) -> str:
        return os.path.normpath(os.path.join(self.root, self.path))

    def read_text(self) -> str:
        if self._content is None:
            with open(self.abspath(), "r", encoding="utf-8") as fh:
                self._content = fh.read()
        return self._content

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FileRef) and (self.root, self.path) == (other.root, other.path)

    def __hash__(self) -> int:
        return hash((self.root, self.path))


Value = Union[None, bool, int, float, str, list, dict, FileRef]

KINDS = ("null", "bool", "int", "float", "str", "list", "record", "file")


def value_kind(v: Value) -> str:
    if v is None:
        return "null"
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
    raise TypeError(f"not a Vex value: {type(v)!r}")


def deep_copy_value(v: Value) -> Value:
    """Copy mutable containers so test args survive interpreter mutation."""
    if isinstance(v, list):
        return [deep_copy_value(x) for x in v]
    if isinstance(v, dict):
        return {k: deep_copy_value(x) for k, x in v.items()}
    if isinstance(v, FileRef):
        return copy.copy(v)
    return v


def render_value(v: Value) -> str:
    """Canonical plain-text rendering, used by @to_str and template holes."""
    kind = value_kind(v)
    if kind == "null":
        return "null"
    if kind == "bool":
        return "true" if v else "false"
    if kind in ("int", "float"):
        return repr(v)
    if kind == "str":
        return v  # bare, no quotes: this is the string's own text
    if kind == "list":
        return "[" + ", ".join(render_literal(x) for x in v) + "]"
    if kind == "record":
        return "{" + ", ".join(f"{k}: {render_literal(x)}" for k, x in v.items()) + "}"
    return v.path  # file


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}


def quote_string(s: str) -> str:
    out = []
    for ch in s:
        out.append(_ESCAPES.get(ch, ch))
    return '"' + "".join(out) + '"'


def render_literal(v: Value) -> str:
    """Render a value as Vex literal source text. FileRef has no literal form."""
    kind = value_kind(v)
    if kind == "str":
        return quote_string(v)
    if kind == "file":
        raise ValueError("FileRef has no literal form; render as @open(...) in context")
    if kind == "list":
        return "[" + ", ".join(render_literal(x) for x in v) + "]"
    if kind == "record":
        return "{" + ", ".join(f"{k}: {render_literal(x)}" for k, x in v.items()) + "}"
    return render_value(v)


def to_jsonable(v: Value, root_aliases: dict[str, str] | None = None) -> Any:
    """Tagged JSON encoding that survives a round trip losslessly.

    root_aliases maps absolute FileRef roots to symbolic tokens so serialized
    reports do not leak per-run temp paths.
    """
    kind = value_kind(v)
    if kind in ("null", "bool", "str"):
        return {"kind": kind, "value": v}
    if kind == "int":
        return {"kind": "int", "value": int(v)}
    if kind == "float":
        return {"kind": "float", "value": repr(v)}
    if kind == "list":
        return {"kind": "list", "items": [to_jsonable(x, root_aliases) for x in v]}
    if kind == "record":
        return {"kind": "record", "fields": {k: to_jsonable(x, root_aliases) for k, x in v.items()}}
    root = v.root
    if root_aliases:
        for abs_root, token in root_aliases.items():
            if root == abs_root:
                root = token
                break
    return {"kind": "file", "path": v.path, "root": root}


def from_jsonable(obj: Any, root_aliases: dict[str, str] | None = None) -> Value:
    kind = obj["kind"]
    if kind in ("null", "bool", "str"):
        return obj["value"]
    if kind == "int":
        return int(obj["value"])
    if kind == "float":
        return float(obj["value"])
    if kind == "list":
        return [from_jsonable(x, root_aliases) for x in obj["items"]]
    if kind == "record":
        return {k: from_jsonable(x, root_aliases) for k, x in obj["fields"].items()}
    root = obj["root"]
    if root_aliases:
        for abs_root, token in root_aliases.items():
            if root == token:
                root = abs_root
                break
    return FileRef(path=obj["path"], root=root)


def values_equal(a: Value, b: Value) -> bool:
    """Deep structural equality with Python's cross-kind quirks pinned down.

    bool never equals int, int equals float when numerically equal (Vex ==).
    """
    ka, kb = value_kind(a), value_kind(b)
    if ka in ("int", "float") and kb in ("int", "float"):
        return float(a) == float(b) if (ka != kb) else a == b
    if ka != kb:
        return False
    if ka == "list":
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if ka == "record":
        return set(a.keys()) == set(b.keys()) and all(values_equal(a[k], b[k]) for k in a)
    return a == b
