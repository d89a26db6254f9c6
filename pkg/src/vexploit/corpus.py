"""Corpus loading: vulnerability records, client projects, and the library
modules they share, described by TOML manifests on disk.

Layout under the corpus root:

    libs/<library>/*.vex
    vulns/<id>/vuln.toml, exploit.vex, fixtures/
    projects/<name>/project.toml, src/, tests/, fixtures/
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import CorpusError, VexploitError
from .frontend import parse_module, resolve_program
from .frontend.ast import ModuleAst, Program, QualifiedName
from .frontend.parser import parse_literal
from .instrument import run_instrumented
from .interp import Budgets
from .migrate import OracleSpec, Template, TriggerCondition, detect_trigger
from .payload import (DEFAULT_ATTACKER_HOST, ExploitPayload, extract_payload,
                      substitute_markers)

ENV_CORPUS = "VEXPLOIT_CORPUS"


def default_corpus_root() -> str:
    env = os.environ.get(ENV_CORPUS)
    if env:
        return env
    cwd_corpus = os.path.join(os.getcwd(), "corpus")
    if os.path.isdir(cwd_corpus):
        return cwd_corpus
    here = os.path.dirname(os.path.abspath(__file__))
    repo_root = os.path.dirname(os.path.dirname(here))
    return os.path.join(repo_root, "corpus")


@dataclass
class VulnerabilityRecord:
    id: str
    library: str
    function: QualifiedName
    summary: str
    trigger: TriggerCondition
    templates: list[Template]
    primary_index: int
    attacker_host: str
    root: str

    @property
    def exploit_path(self) -> str:
        return os.path.join(self.root, "exploit.vex")

    @property
    def fixtures_dir(self) -> Optional[str]:
        path = os.path.join(self.root, "fixtures")
        return path if os.path.isdir(path) else None


@dataclass
class ProjectManifest:
    name: str
    libraries: list[str]
    summary: str
    expected_exploitable: Optional[bool]
    expected_reachable: Optional[bool]
    root: str

    @property
    def src_dir(self) -> str:
        return os.path.join(self.root, "src")

    @property
    def tests_dir(self) -> Optional[str]:
        path = os.path.join(self.root, "tests")
        return path if os.path.isdir(path) else None

    @property
    def fixtures_dir(self) -> Optional[str]:
        path = os.path.join(self.root, "fixtures")
        return path if os.path.isdir(path) else None


@dataclass
class Corpus:
    root: str
    libraries: dict[str, list[str]]  # library name -> sorted .vex paths
    vulns: dict[str, VulnerabilityRecord]
    projects: dict[str, ProjectManifest]
    _sources: dict[str, str] = field(default_factory=dict)

    def source(self, path: str) -> str:
        if path not in self._sources:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    self._sources[path] = fh.read()
            except OSError as exc:
                raise CorpusError(f"cannot read {path}: {exc}") from exc
        return self._sources[path]

    def parse_file(self, path: str) -> ModuleAst:
        name = os.path.splitext(os.path.basename(path))[0]
        return parse_module(self.source(path), name=name, origin=path)

    def library_modules(self, library: str) -> dict[str, ModuleAst]:
        paths = self.libraries.get(library)
        if paths is None:
            raise CorpusError(f"unknown library {library!r}")
        modules = {}
        for path in paths:
            mod = self.parse_file(path)
            modules[mod.name] = mod
        return modules

    def pairs(self) -> list[tuple[str, str]]:
        """(project, vuln id) for every project that uses the vuln's library."""
        out = []
        for pname, project in sorted(self.projects.items()):
            for vid, vuln in sorted(self.vulns.items()):
                if vuln.library in project.libraries:
                    out.append((pname, vid))
        return out


def _require(table: dict, key: str, context: str):
    if key not in table:
        raise CorpusError(f"{context}: missing required key {key!r}")
    return table[key]


def load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise CorpusError(f"bad TOML in {path}: {exc}") from exc


def _load_vuln(root: str) -> VulnerabilityRecord:
    manifest = os.path.join(root, "vuln.toml")
    data = load_toml(manifest)
    vuln = _require(data, "vuln", manifest)
    trigger_table = _require(data, "trigger", manifest)

    oracle = None
    oracle_kind = trigger_table.get("oracle_kind")
    if oracle_kind:
        value = None
        raw = trigger_table.get("oracle_value")
        if raw is not None:
            value = parse_literal(raw, origin=manifest)
        oracle = OracleSpec(oracle_kind, value)
    trigger = TriggerCondition(
        kind=_require(trigger_table, "kind", manifest),
        oracle=oracle,
        sql_pattern=trigger_table.get("sql_pattern"),
        manual=bool(trigger_table.get("manual", False)),
    )

    migration = data.get("migration", {})
    templates = [Template(t) for t in migration.get("templates", [])]
    for template in templates:
        if template.pattern.count("{{PAYLOAD}}") != 1:
            raise CorpusError(
                f"{manifest}: template needs exactly one {{{{PAYLOAD}}}} hole: "
                f"{template.pattern!r}")

    payload_table = data.get("payload", {})
    record = VulnerabilityRecord(
        id=_require(vuln, "id", manifest),
        library=_require(vuln, "library", manifest),
        function=QualifiedName.parse(_require(vuln, "function", manifest)),
        summary=vuln.get("summary", ""),
        trigger=trigger,
        templates=templates,
        primary_index=int(payload_table.get("primary_index", 0)),
        attacker_host=payload_table.get("attacker_host", DEFAULT_ATTACKER_HOST),
        root=root,
    )
    if not os.path.isfile(record.exploit_path):
        raise CorpusError(f"{manifest}: missing exploit.vex next to the manifest")
    return record


def load_project(root: str) -> ProjectManifest:
    """Load one project manifest from a directory outside (or inside) a corpus."""
    manifest = os.path.join(root, "project.toml")
    data = load_toml(manifest)
    project = _require(data, "project", manifest)
    expected = data.get("expected", {})
    name = _require(project, "name", manifest)
    if name != os.path.basename(root):
        raise CorpusError(f"{manifest}: project name {name!r} must match its directory")
    out = ProjectManifest(
        name=name,
        libraries=list(_require(project, "libraries", manifest)),
        summary=project.get("summary", ""),
        expected_exploitable=expected.get("exploitable"),
        expected_reachable=expected.get("reachable"),
        root=root,
    )
    if not os.path.isdir(out.src_dir):
        raise CorpusError(f"{manifest}: project has no src/ directory")
    return out


def load_corpus(root: Optional[str] = None) -> Corpus:
    root = os.path.abspath(root or default_corpus_root())
    if not os.path.isdir(root):
        raise CorpusError(f"corpus root {root} does not exist")
    libraries: dict[str, list[str]] = {}
    libs_dir = os.path.join(root, "libs")
    if os.path.isdir(libs_dir):
        for name in sorted(os.listdir(libs_dir)):
            lib_root = os.path.join(libs_dir, name)
            if not os.path.isdir(lib_root):
                continue
            paths = sorted(
                os.path.join(lib_root, f) for f in os.listdir(lib_root) if f.endswith(".vex"))
            if not paths:
                raise CorpusError(f"library {name!r} has no .vex modules")
            libraries[name] = paths

    vulns: dict[str, VulnerabilityRecord] = {}
    vulns_dir = os.path.join(root, "vulns")
    if os.path.isdir(vulns_dir):
        for name in sorted(os.listdir(vulns_dir)):
            vuln_root = os.path.join(vulns_dir, name)
            if not os.path.isdir(vuln_root):
                continue
            record = _load_vuln(vuln_root)
            if record.id != name:
                raise CorpusError(
                    f"vuln id {record.id!r} must match its directory name {name!r}")
            if record.library not in libraries:
                raise CorpusError(f"vuln {record.id} references unknown library "
                                  f"{record.library!r}")
            vulns[record.id] = record

    projects: dict[str, ProjectManifest] = {}
    projects_dir = os.path.join(root, "projects")
    if os.path.isdir(projects_dir):
        for name in sorted(os.listdir(projects_dir)):
            project_root = os.path.join(projects_dir, name)
            if not os.path.isdir(project_root):
                continue
            manifest = load_project(project_root)
            for lib in manifest.libraries:
                if lib not in libraries:
                    raise CorpusError(f"project {name} references unknown library {lib!r}")
            projects[name] = manifest
    return Corpus(root, libraries, vulns, projects)


def _modules_from_dir(corpus: Corpus, directory: str) -> dict[str, ModuleAst]:
    modules: dict[str, ModuleAst] = {}
    for fname in sorted(os.listdir(directory)):
        if not fname.endswith(".vex"):
            continue
        mod = corpus.parse_file(os.path.join(directory, fname))
        modules[mod.name] = mod
    return modules


def assemble_project_program(corpus: Corpus, project: ProjectManifest,
                             include_tests: bool = False) -> Program:
    project_modules = _modules_from_dir(corpus, project.src_dir)
    if not project_modules:
        raise CorpusError(f"project {project.name} has no source modules")
    library_modules: dict[str, ModuleAst] = {}
    for lib in project.libraries:
        library_modules.update(corpus.library_modules(lib))
    test_modules: dict[str, ModuleAst] = {}
    if include_tests and project.tests_dir:
        test_modules = _modules_from_dir(corpus, project.tests_dir)
    return resolve_program(project_modules, library_modules, test_modules)


def assemble_exploit_program(corpus: Corpus, vuln: VulnerabilityRecord) -> Program:
    """The vulnerable library alone plus the exploit as a test module."""
    library_modules = corpus.library_modules(vuln.library)
    exploit = corpus.parse_file(vuln.exploit_path)
    return resolve_program({}, library_modules, {exploit.name: exploit})


@dataclass
class ValidationResult:
    vuln_id: str
    ok: bool
    message: str


def validate_vuln(corpus: Corpus, vuln: VulnerabilityRecord, work_dir: str,
                  budgets: Optional[Budgets] = None) -> ValidationResult:
    """Extract the payload from the exploit and replay it against the bare
    library, checking that the declared trigger condition fires."""
    budgets = budgets or Budgets()
    try:
        program = assemble_exploit_program(corpus, vuln)
        if program.lookup(vuln.function) is None:
            return ValidationResult(vuln.id, False,
                                    f"function {vuln.function.render()} not defined "
                                    f"in library {vuln.library}")
        payload = extract_payload(program, "exploit", vuln.function,
                                  budgets=budgets, sandbox_root=vuln.fixtures_dir,
                                  primary_index=vuln.primary_index)
        substituted = substitute_markers(payload, vuln.attacker_host, work_dir)
        replay = run_instrumented(program, vuln.function, substituted.values,
                                  vuln.function, budgets=budgets,
                                  sandbox_root=vuln.fixtures_dir)
        if vuln.trigger.manual:
            return ValidationResult(vuln.id, True, "payload extracted (manual trigger)")
        evidence = detect_trigger(replay, vuln.trigger, vuln.attacker_host)
        if evidence is None:
            return ValidationResult(
                vuln.id, False,
                f"substituted payload did not fire {vuln.trigger.kind} "
                f"(outcome {replay.outcome.kind})")
        return ValidationResult(vuln.id, True, f"trigger {evidence.kind} fired")
    except VexploitError as exc:
        return ValidationResult(vuln.id, False, str(exc))


def validate_corpus(corpus: Corpus, work_dir: str,
                    budgets: Optional[Budgets] = None) -> list[ValidationResult]:
    """Lint every module and self-certify every vulnerability record."""
    results: list[ValidationResult] = []
    for vid, vuln in sorted(corpus.vulns.items()):
        vuln_work = os.path.join(work_dir, vid)
        os.makedirs(vuln_work, exist_ok=True)
        results.append(validate_vuln(corpus, vuln, vuln_work, budgets))
    for pname, project in sorted(corpus.projects.items()):
        try:
            assemble_project_program(corpus, project, include_tests=True)
            results.append(ValidationResult(f"project:{pname}", True, "resolves"))
        except Exception as exc:  # parse or resolution diagnostics
            results.append(ValidationResult(f"project:{pname}", False, str(exc)))
    return results


def payload_for(corpus: Corpus, vuln: VulnerabilityRecord,
                budgets: Optional[Budgets] = None) -> ExploitPayload:
    program = assemble_exploit_program(corpus, vuln)
    return extract_payload(program, "exploit", vuln.function,
                           budgets=budgets or Budgets(),
                           sandbox_root=vuln.fixtures_dir,
                           primary_index=vuln.primary_index)
