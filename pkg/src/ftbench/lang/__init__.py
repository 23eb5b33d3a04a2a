"""Recovery-script front end: parse, resolve, check, translate, emit."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .. import rcode as rc
from .artifacts import emit_artifacts
from .diag import Diagnostic, Diagnostics
from .nodes import Ast
from .parser import parse
from .semantics import check_semantics
from .symbols import (InjectionSpec, NVersionConfig, SymbolTable, VersionConfig,
                      WatchdogConfig, resolve_symbols)
from .translate import TranslateError, translate

__all__ = ["Ast", "CompileResult", "Diagnostic", "Diagnostics", "InjectionSpec",
           "NVersionConfig", "SymbolTable", "VersionConfig", "WatchdogConfig",
           "check_semantics", "compile_script", "dir_loader", "emit_artifacts",
           "parse", "resolve_symbols", "translate"]


@dataclass
class CompileResult:
    ast: Ast | None
    symtab: SymbolTable | None
    program: rc.RcodeProgram | None
    diagnostics: Diagnostics
    transcript: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.program is not None

    @property
    def bundle(self) -> SymbolTable | None:
        return self.symtab


def dir_loader(*dirs) -> Callable[[str], str]:
    """Include loader searching ``dirs`` in order."""
    roots = [Path(d) for d in dirs]

    def load(name: str) -> str:
        for root in roots:
            p = root / name
            if p.is_file():
                return p.read_text(encoding="utf-8")
        raise FileNotFoundError(name)
    return load


def dict_loader(files: dict[str, str]) -> Callable[[str], str]:
    return files.__getitem__


def compile_script(text: str, include_loader: Callable[[str], str] | None = None,
                   name: str = "script", verbose: bool = False) -> CompileResult:
    """Run the whole front end.  The transcript mimics a translator
    session: include notes, substitutions (verbose only), a summary line
    and the error count."""
    t0 = time.process_time()
    out = [f"Parsing file {name}..."]
    ast, diags = parse(text)
    symtab = None
    program = None
    syntax_ok = not diags.has_errors()
    if syntax_ok:
        symtab, sd = resolve_symbols(ast, include_loader)
        diags.extend(sd)
        for line in symtab.transcript:
            if verbose or line.startswith("[ Including"):
                out.append(line)
        if not sd.has_errors():
            diags.extend(check_semantics(symtab))
    for d in sorted(diags, key=lambda d: d.line):
        out.append(f"        {d}")
    if syntax_ok:
        out.append("if-then-else: ok")
    if not diags.has_errors():
        program = translate(symtab)
    lines = ast.line_count
    if verbose:
        cpu = time.process_time() - t0
        out.append(f"...done ({lines} lines in {cpu:.2f} CPU secs.)")
    else:
        out.append(f"...done ({lines} lines.)")
    nerr = len(diags.errors)
    if nerr:
        out.append(f"{nerr} error{'s' if nerr != 1 else ''} detected --- output rejected.")
    return CompileResult(ast, symtab, program, diags, out)
