"""
Table serialisation shared by the CLI commands.

Three formats are produced from the same rows: CSV (via pandas), markdown
(rendered with a jinja2 template) and whitespace-separated ``.dat`` files
with a ``#`` header line for plotting tools.  Cells are formatted once,
so identical inputs give byte-identical documents.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import pandas as pd
from jinja2 import DictLoader, Environment

from .models import Check

logger = logging.getLogger(__name__)

__all__ = ["FORMATS", "format_cell", "emit_table", "write_report"]

FORMATS = ("csv", "markdown", "dat")
MISSING = "-"

_TEMPLATES = {
    "table": (
        "| {{ columns | join(' | ') }} |\n"
        "|{% for c in columns %}---|{% endfor %}\n"
        "{% for row in rows %}| {{ row | join(' | ') }} |\n{% endfor %}"
    ),
    "report": (
        "# {{ title }}\n\n"
        "{% for key, value in meta.items() %}- **{{ key }}**: {{ value }}\n{% endfor %}"
        "{% if tolerances %}\n## Tolerances\n\n"
        "{% for key, value in tolerances.items() %}- {{ key }}: {{ value }}\n{% endfor %}{% endif %}"
        "{% for name, body in tables.items() %}\n## {{ name }}\n\n{{ body }}{% endfor %}"
        "{% if checks %}\n## Checks\n\n"
        "| check | value | limit | status |\n|---|---|---|---|\n"
        "{% for c in checks %}| {{ c.name }} | {{ c.value | sci }} | {{ c.limit_text }} | "
        "{{ 'pass' if c.passed else 'FAIL' }} |\n{% endfor %}{% endif %}"
    ),
}

_env = Environment(loader=DictLoader(_TEMPLATES), keep_trailing_newline=True, autoescape=False)
_env.filters["sci"] = lambda x: format_cell("value", x)

Row = Union[Sequence[Any], Mapping[str, Any]]


def format_cell(column: str, value: Any) -> str:
    """Errors and other reals in 6-digit scientific notation, ``eoc*`` columns with 3 decimals."""
    if value is None:
        return MISSING
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return MISSING
        if column.startswith("eoc"):
            return f"{value:.3f}"
        return f"{value:.5e}"
    return str(value)


def _normalise(rows: Iterable[Row], columns: Sequence[str]) -> List[List[str]]:
    table = []
    for i, row in enumerate(rows):
        if isinstance(row, Mapping):
            missing = [c for c in columns if c not in row]
            if missing:
                raise ValueError(f"row {i} lacks columns {missing}")
            values = [row[c] for c in columns]
        else:
            values = list(row)
            if len(values) != len(columns):
                raise ValueError(f"row {i} has {len(values)} cells, expected {len(columns)}")
        table.append([format_cell(c, v) for c, v in zip(columns, values)])
    return table


def emit_table(rows: Iterable[Row], columns: Sequence[str], fmt: str = "csv") -> str:
    """Serialise ``rows`` with a fixed column order.

    Raises
    ------
    ValueError
        For an unknown format or ragged rows.
    """
    if fmt not in FORMATS:
        raise ValueError(f"Unknown table format '{fmt}'. Available: {list(FORMATS)}")
    columns = list(columns)
    table = _normalise(rows, columns)
    if fmt == "csv":
        frame = pd.DataFrame(table, columns=columns, dtype=str)
        return frame.to_csv(index=False, lineterminator="\n")
    if fmt == "markdown":
        return _env.get_template("table").render(columns=columns, rows=table)
    lines = ["# " + " ".join(columns)]
    lines.extend(" ".join(cells) for cells in table)
    return "\n".join(lines) + "\n"


def write_report(output_dir: Union[str, Path], name: str, tables: Mapping[str, tuple], *,
                 meta: Optional[Dict[str, Any]] = None, tolerances: Optional[Dict[str, float]] = None,
                 checks: Sequence[Check] = ()) -> Dict[str, Path]:
    """Write every table as ``<name>_<table>.csv`` / ``.dat`` plus one ``<name>.md`` summary.

    ``tables`` maps a table name to ``(rows, columns)``.  The markdown
    summary embeds ``meta`` (config hash, command) and ``tolerances``.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    written: Dict[str, Path] = {}
    bodies = {}
    header = "".join(f"# {k}: {v}\n" for k, v in meta.items())
    for table_name, (rows, columns) in tables.items():
        rows = list(rows)
        stem = f"{name}_{table_name}"
        csv_path = out / f"{stem}.csv"
        csv_path.write_text(emit_table(rows, columns, "csv"), encoding="utf-8")
        dat_path = out / f"{stem}.dat"
        dat_path.write_text(header + emit_table(rows, columns, "dat"), encoding="utf-8")
        written[f"{table_name}.csv"] = csv_path
        written[f"{table_name}.dat"] = dat_path
        bodies[table_name] = emit_table(rows, columns, "markdown")

    md_path = out / f"{name}.md"
    md_path.write_text(
        _env.get_template("report").render(
            title=name, meta=meta, tolerances=dict(tolerances or {}), tables=bodies, checks=list(checks)
        ),
        encoding="utf-8",
    )
    written["markdown"] = md_path
    logger.info("Wrote %s report (%d tables) to %s", name, len(bodies), out)
    return written
