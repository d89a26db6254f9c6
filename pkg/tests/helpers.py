"""Shared builders for the test suite."""

from __future__ import annotations

import os
from typing import Optional

from vexploit.frontend import parse_module, resolve_program
from vexploit.frontend.ast import Program, QualifiedName

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CORPUS_ROOT = os.path.join(REPO_ROOT, "corpus")


def program_from(project: dict[str, str],
                 libraries: Optional[dict[str, str]] = None,
                 tests: Optional[dict[str, str]] = None) -> Program:
    """Parse and resolve module sources keyed by module name."""
    def parse_all(sources: Optional[dict[str, str]]):
        return {name: parse_module(src, name=name)
                for name, src in (sources or {}).items()}
    return resolve_program(parse_all(project), parse_all(libraries),
                           parse_all(tests))


def qn(text: str) -> QualifiedName:
    return QualifiedName.parse(text)
