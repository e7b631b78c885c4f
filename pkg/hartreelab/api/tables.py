"""
Result tables and their on-disk formats.

CSV files carry one header row; complex cells become two columns
``<name>_re`` and ``<name>_im`` and reals are written with 17 significant
digits in scientific notation. JSON-lines files start with a header object
{"schema", "columns"} followed by one object per row.
"""
import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

from hartreelab.exceptions import HartreeLabError, ValidationError, throw
from hartreelab.logger import get_logger
from hartreelab.utils import get_attr, get_hooks

logger = get_logger(__name__)

KINDS = ("str", "int", "real", "complex")
_CHECKS = {
    "str": lambda v: isinstance(v, str),
    "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "real": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "complex": lambda v: isinstance(v, (int, float, complex)) and not isinstance(v, bool),
}
_SUFFIX = {"csv": ".csv", "json-lines": ".jsonl"}


@dataclass(frozen=True)
class ResultTable:
    """Rectangular table; rows are kept in grid order."""

    schema: str
    columns: tuple
    rows: tuple = ()

    def __post_init__(self):
        columns = tuple((str(name), str(kind)) for name, kind in self.columns)
        names = [name for name, _ in columns]
        if len(set(names)) != len(names):
            throw(f"table {self.schema!r} has duplicate column names")
        for name, kind in columns:
            if kind not in KINDS:
                throw(f"column {name!r} has unknown kind {kind!r}")
        rows = []
        for index, row in enumerate(self.rows):
            row = tuple(row)
            if len(row) != len(columns):
                throw(f"row {index} of {self.schema!r} has {len(row)} cells, expected {len(columns)}")
            for value, (name, kind) in zip(row, columns):
                if not _CHECKS[kind](value):
                    throw(f"row {index} of {self.schema!r}: {name}={value!r} is not {kind}")
            rows.append(tuple(self._coerce(value, kind) for value, (_, kind) in zip(row, columns)))
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "rows", tuple(rows))

    @staticmethod
    def _coerce(value, kind: str):
        if kind == "real":
            return float(value)
        if kind == "complex":
            return complex(value)
        return value

    @property
    def names(self) -> tuple:
        return tuple(name for name, _ in self.columns)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> list:
        if name not in self.names:
            throw(f"table {self.schema!r} has no column {name!r}")
        index = self.names.index(name)
        return [row[index] for row in self.rows]


def _format_real(value: float) -> str:
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17e")


def csv_header(table: ResultTable) -> list:
    header = []
    for name, kind in table.columns:
        if kind == "complex":
            header.extend([f"{name}_re", f"{name}_im"])
        else:
            header.append(name)
    return header


def _csv_cells(table: ResultTable, row: tuple) -> list:
    cells = []
    for value, (_, kind) in zip(row, table.columns):
        if kind == "complex":
            cells.extend([_format_real(value.real), _format_real(value.imag)])
        elif kind == "real":
            cells.append(_format_real(value))
        else:
            cells.append(str(value))
    return cells


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise HartreeLabError(f"cannot write {path}: {exc}") from exc


def write_csv(table: ResultTable, path) -> Path:
    with _open_for_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(csv_header(table))
        for row in table.rows:
            writer.writerow(_csv_cells(table, row))
    return Path(path)


def _json_cell(value, kind: str):
    if kind == "complex":
        return {"re": value.real, "im": value.imag}
    return value


def write_json_lines(table: ResultTable, path) -> Path:
    with _open_for_write(path) as handle:
        header = {"schema": table.schema, "columns": [{"name": n, "kind": k} for n, k in table.columns]}
        handle.write(json.dumps(header) + "\n")
        for row in table.rows:
            record = {name: _json_cell(value, kind) for value, (name, kind) in zip(row, table.columns)}
            handle.write(json.dumps(record) + "\n")
    return Path(path)


def table_path(directory, table: ResultTable, fmt: str, prefix: str = "") -> Path:
    if fmt not in _SUFFIX:
        throw(f"unknown table format {fmt!r}")
    return Path(directory) / f"{prefix}{table.schema}{_SUFFIX[fmt]}"


def emit(table: ResultTable, fmt: str, path) -> Path:
    """Write `table` to `path` with the writer registered for `fmt`."""
    writers = get_hooks("table_writers")
    if fmt not in writers:
        throw(f"unknown table format {fmt!r}; choose one of {sorted(writers)}")
    written = get_attr(writers[fmt])(table, path)
    logger.info("wrote %s (%d rows) to %s", table.schema, len(table), written)
    return written


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------


def _parse_cell(text: str):
    for kind, parse in (("int", int), ("real", float)):
        try:
            return kind, parse(text)
        except ValueError:
            continue
    return "str", text


def read_csv(path, schema: str | None = None) -> ResultTable:
    """
    Read a CSV table. Column kinds are inferred: ``x_re``/``x_im`` pairs give a
    complex column ``x``; otherwise a column is int, real or str from its cells.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as handle:
        lines = list(csv.reader(handle))
    if not lines:
        raise ValidationError(f"{path} has no header row")
    header, body = lines[0], lines[1:]
    groups = []
    i = 0
    while i < len(header):
        name = header[i]
        if name.endswith("_re") and i + 1 < len(header) and header[i + 1] == name[:-3] + "_im":
            groups.append((name[:-3], "complex", (i, i + 1)))
            i += 2
        else:
            groups.append((name, None, (i,)))
            i += 1

    columns = []
    for name, kind, cells in groups:
        if kind is None:
            kinds = {_parse_cell(row[cells[0]])[0] for row in body}
            if "str" in kinds:
                kind = "str"
            elif "real" in kinds or not kinds:
                kind = "real"
            else:
                kind = "int"
        columns.append((name, kind))

    rows = []
    for row in body:
        if len(row) != len(header):
            raise ValidationError(f"{path}: row with {len(row)} cells under a header of {len(header)}")
        out = []
        for (name, kind), (_, _, cells) in zip(columns, groups):
            if kind == "complex":
                out.append(complex(float(row[cells[0]]), float(row[cells[1]])))
            elif kind == "real":
                out.append(float(row[cells[0]]))
            elif kind == "int":
                out.append(int(row[cells[0]]))
            else:
                out.append(row[cells[0]])
        rows.append(tuple(out))
    return ResultTable(schema or path.stem, tuple(columns), tuple(rows))


def read_json_lines(path, schema: str | None = None) -> ResultTable:
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        lines = [line for line in handle.read().splitlines() if line.strip()]
    if not lines:
        raise ValidationError(f"{path} has no header line")
    try:
        header = json.loads(lines[0])
        columns = tuple((c["name"], c["kind"]) for c in header["columns"])
        records = [json.loads(line) for line in lines[1:]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path} is not a json-lines table: {exc}") from exc
    rows = []
    for record in records:
        row = []
        for name, kind in columns:
            value = record[name]
            row.append(complex(value["re"], value["im"]) if kind == "complex" else value)
        rows.append(tuple(row))
    return ResultTable(schema or header["schema"], columns, tuple(rows))


def read_table(path) -> ResultTable:
    """Read a table written by `emit`, choosing the reader from the file suffix."""
    suffix = os.path.splitext(str(path))[1]
    fmt = {v: k for k, v in _SUFFIX.items()}.get(suffix)
    if fmt is None:
        throw(f"cannot tell the table format of {path}")
    return get_attr(get_hooks("table_readers")[fmt])(path)
