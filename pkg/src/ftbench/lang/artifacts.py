"""Files written by a successful compilation.

CSV tables stand in for generated C headers.  Everything is written with
LF line endings and a fixed row order, so identical input gives identical
bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .. import rcode as rc
from .symbols import SymbolTable


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def task_table(st: SymbolTable) -> str:
    return _csv(["unique_id", "name", "node", "local_id"],
                [(t.unique_id, t.name, t.node, t.local_id)
                 for t in sorted(st.tasks, key=lambda t: t.unique_id)])


def logical_table(st: SymbolTable) -> str:
    return _csv(["unique_id", "name", "members"],
                [(g.unique_id, g.name, " ".join(map(str, g.members)))
                 for g in sorted(st.groups, key=lambda g: g.unique_id)])


def alpha_table(st: SymbolTable) -> str:
    return _csv(["unique_id", "threshold", "factor"],
                [(uid, repr(th), repr(k)) for uid, (th, k) in sorted(st.alpha_params.items())])


def timeout_table(st: SymbolTable) -> str:
    return _csv(["name", "value"], sorted(st.backbone_timeouts.items()))


def identifier_table(st: SymbolTable) -> str:
    return _csv(["name", "value"], sorted(st.constants.items()))


def emit_artifacts(program: rc.RcodeProgram, symtab: SymbolTable, outdir,
                   stem: str = "out", listing: bool = True,
                   source_name: str = "") -> list[tuple[str, Path]]:
    """Write every artifact into ``outdir``; returns (kind, path) pairs."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    files: list[tuple[str, Path, bytes]] = [("Output", out / f"{stem}.rcode", rc.serialize(program))]
    if listing:
        title = f"Translated strategy file {source_name} into r-code object file {stem}.rcode"
        files.append(("Listing", out / f"{stem}.lst",
                      rc.render_listing(program, title).encode()))
    files += [
        ("Tasks", out / "TaskTable.csv", task_table(symtab).encode()),
        ("Logicals", out / "LogicalTable.csv", logical_table(symtab).encode()),
        ("Alpha-counts", out / "AlphaTable.csv", alpha_table(symtab).encode()),
        ("Time-outs", out / "Timeouts.csv", timeout_table(symtab).encode()),
        ("Identifiers", out / "Identifiers.csv", identifier_table(symtab).encode()),
    ]
    written = []
    for kind, path, data in files:
        try:
            path.write_bytes(data)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        written.append((kind, path))
    return written
