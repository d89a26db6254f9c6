"""Cross-module resolution: fills Call.resolved and validates the call surface."""

from __future__ import annotations

from ..errors import Diagnostic, ResolutionError
from .ast import Call, BuiltinCall, FunctionDecl, ModuleAst, Program, QualifiedName, walk_exprs

BUILTIN_ARITY = {
    "len": 1,
    "substr": 3,
    "concat": 2,
    "contains": 2,
    "starts_with": 2,
    "to_int": 1,
    "to_str": 1,
    "to_float": 1,
    "char_at": 2,
    "open": 1,
    "read_file": 1,
    "net_send": 2,
    "sql_exec": 1,
    "log": 1,
}


def resolve_program(
    project_modules: dict[str, ModuleAst],
    library_modules: dict[str, ModuleAst] | None = None,
    test_modules: dict[str, ModuleAst] | None = None,
) -> Program:
    """Resolve every call site. Raises ResolutionError with all diagnostics found.

    Unqualified calls resolve within the defining module; qualified calls may
    target any module's public functions (private functions are module-internal).
    """
    library_modules = library_modules or {}
    test_modules = test_modules or {}
    diags: list[Diagnostic] = []

    groups = [project_modules, library_modules, test_modules]
    seen_names: dict[str, str] = {}
    for group, label in zip(groups, ("project", "library", "test")):
        for name in group:
            if name in seen_names:
                diags.append(Diagnostic(
                    f"module name collision: {name!r} defined in {seen_names[name]} and {label} scope",
                    origin=name,
                ))
            seen_names[name] = label

    program = Program(dict(project_modules), dict(library_modules), dict(test_modules))
    all_mods = program.all_modules()

    def check_function(mod_name: str, fn: FunctionDecl) -> None:
        origin = f"{mod_name}::{fn.name}"
        for stmt in fn.body:
            for expr in walk_exprs(stmt):
                if isinstance(expr, BuiltinCall):
                    arity = BUILTIN_ARITY.get(expr.name)
                    if arity is None:
                        diags.append(Diagnostic(
                            f"unknown builtin @{expr.name}", origin, expr.pos.line, expr.pos.col))
                    elif len(expr.args) != arity:
                        diags.append(Diagnostic(
                            f"@{expr.name} takes {arity} argument(s), got {len(expr.args)}",
                            origin, expr.pos.line, expr.pos.col))
                    continue
                if not isinstance(expr, Call):
                    continue
                target_mod = expr.module if expr.module is not None else mod_name
                mod = all_mods.get(target_mod)
                target = mod.function(expr.name) if mod else None
                if target is None:
                    diags.append(Diagnostic(
                        f"unresolved call to {target_mod}::{expr.name}",
                        origin, expr.pos.line, expr.pos.col))
                    continue
                if expr.module is not None and target_mod != mod_name and not target.public:
                    diags.append(Diagnostic(
                        f"{target_mod}::{expr.name} is private",
                        origin, expr.pos.line, expr.pos.col))
                    continue
                if len(expr.args) != target.arity:
                    diags.append(Diagnostic(
                        f"{target_mod}::{expr.name} takes {target.arity} argument(s), "
                        f"got {len(expr.args)}",
                        origin, expr.pos.line, expr.pos.col))
                    continue
                expr.resolved = QualifiedName(target_mod, expr.name)

    for mod_name, mod in all_mods.items():
        for fn in mod.functions:
            check_function(mod_name, fn)

    if diags:
        raise ResolutionError(diags)
    return program
