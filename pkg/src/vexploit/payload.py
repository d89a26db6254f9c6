"""Payload extraction: run a known exploit against the bare library and keep
the arguments the vulnerable function received at its first invocation."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

from .errors import CorpusError
from .frontend.ast import Program, QualifiedName
from .instrument import run_instrumented
from .interp import Budgets
from .values import FileRef, Value, deep_copy_value

ATTACKER_MARKER = "{{ATTACKER}}"
DEFAULT_ATTACKER_HOST = "attacker.local"


@dataclass
class ExploitPayload:
    values: list[Value]
    primary_index: int = 0
    source: str = ""

    @property
    def primary(self) -> Value:
        return self.values[self.primary_index]

    def atoms(self) -> list[Value]:
        """Primitive leaves plus whole composite values, for seeding mutations."""
        out: list[Value] = []

        def walk(v: Value) -> None:
            out.append(v)
            if isinstance(v, list):
                for item in v:
                    walk(item)
            elif isinstance(v, dict):
                for item in v.values():
                    walk(item)

        for v in self.values:
            walk(v)
        return out


def extract_payload(
    program: Program,
    exploit_module: str,
    vulnerable: QualifiedName,
    budgets: Optional[Budgets] = None,
    sandbox_root: Optional[str] = None,
    primary_index: int = 0,
) -> ExploitPayload:
    """Drive the exploit module's main() and capture the vulnerable call.

    The capture survives budget aborts, so exploits that end in an infinite
    loop or deep recursion still yield their payload.
    """
    mod = program.test_modules.get(exploit_module)
    if mod is None:
        raise CorpusError(f"exploit module {exploit_module!r} not loaded")
    entry = QualifiedName(exploit_module, "main")
    if mod.function("main") is None:
        raise CorpusError(f"exploit module {exploit_module!r} has no main()")
    run = run_instrumented(program, entry, [], vulnerable,
                           budgets=budgets, sandbox_root=sandbox_root)
    if run.dyn_graph is None:
        raise CorpusError(
            f"exploit never reached {vulnerable.render()} "
            f"(outcome {run.outcome.kind}: {run.outcome.error or 'no error'})")
    values = [deep_copy_value(v) for v in run.dyn_graph.capture_args]
    if values and not 0 <= primary_index < len(values):
        raise CorpusError(
            f"primary_index {primary_index} out of range for payload of {len(values)} values")
    return ExploitPayload(values, primary_index, source=exploit_module)


def substitute_value(value: Value, attacker_host: str,
                     work_dir: Optional[str] = None) -> Value:
    """Replace the attacker marker everywhere inside a value.

    A FileRef whose content holds the marker is rewritten to a copy in
    work_dir so the original fixture stays untouched.
    """
    if isinstance(value, str):
        return value.replace(ATTACKER_MARKER, attacker_host)
    if isinstance(value, list):
        return [substitute_value(v, attacker_host, work_dir) for v in value]
    if isinstance(value, dict):
        return {k: substitute_value(v, attacker_host, work_dir) for k, v in value.items()}
    if isinstance(value, FileRef):
        try:
            content = value.read_text()
        except OSError as exc:
            raise CorpusError(f"cannot read payload fixture {value.abspath()}: {exc}") from exc
        if ATTACKER_MARKER not in content:
            return value
        if work_dir is None:
            raise CorpusError(
                f"payload file {value.path} holds the attacker marker but no "
                "working directory was provided for the substituted copy")
        name = os.path.basename(value.path) or "payload.dat"
        target = os.path.join(work_dir, f"subst_{name}")
        os.makedirs(work_dir, exist_ok=True)
        with open(target, "w", encoding="utf-8") as fh:
            fh.write(content.replace(ATTACKER_MARKER, attacker_host))
        return FileRef(path=f"subst_{name}", root=work_dir)
    return value


def substitute_markers(payload: ExploitPayload, attacker_host: str,
                       work_dir: Optional[str] = None) -> ExploitPayload:
    values = [substitute_value(v, attacker_host, work_dir) for v in payload.values]
    return ExploitPayload(values, payload.primary_index, payload.source)
