import pytest

from hartreelab.api.tables import (
    ResultTable,
    emit,
    read_csv,
    read_json_lines,
    read_table,
    table_path,
    write_csv,
    write_json_lines,
)
from hartreelab.exceptions import ValidationError

COLUMNS = (("N", "int"), ("t", "real"), ("G", "complex"), ("model", "str"))
ROWS = ((2, 0.0, 1 + 0j, "kerr1"), (4, 0.5, 0.25 - 0.125j, "kerr1"))


def _table(rows=ROWS):
    return ResultTable("characteristic", COLUMNS, rows)


def test_table_validation():
    with pytest.raises(ValidationError):
        ResultTable("t", (("a", "int"), ("a", "real")))
    with pytest.raises(ValidationError):
        ResultTable("t", (("a", "matrix"),))
    with pytest.raises(ValidationError):
        ResultTable("t", (("a", "int"),), ((1, 2),))
    with pytest.raises(ValidationError):
        ResultTable("t", (("a", "int"),), ((1.5,),))
    table = ResultTable("t", (("x", "real"),), ((1,),))
    assert isinstance(table.rows[0][0], float)
    assert _table().column("N") == [2, 4]


def test_empty_table_writes_only_a_header(tmp_path):
    path = write_csv(_table(()), tmp_path / "empty.csv")
    assert path.read_text(encoding="utf-8") == "N,t,G_re,G_im,model\n"


def test_csv_layout(tmp_path):
    path = write_csv(_table(), tmp_path / "g.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "N,t,G_re,G_im,model"
    assert lines[2] == "4,5.00000000000000000e-01,2.50000000000000000e-01,-1.25000000000000000e-01,kerr1"


def test_csv_reader_infers_kinds(tmp_path):
    table = read_csv(write_csv(_table(), tmp_path / "g.csv"))
    assert table.schema == "g"
    assert table.columns == COLUMNS
    assert table.rows == ROWS


def test_json_lines_round_trip(tmp_path):
    rows = ((8, 1 / 3, complex(0.1, 2 / 7), "lattice-delta"),)
    path = write_json_lines(_table(rows), tmp_path / "g.jsonl")
    back = read_json_lines(path)
    assert back.schema == "characteristic"
    assert back.columns == COLUMNS
    assert back.rows == rows


def test_emit_and_read_table(tmp_path):
    for fmt in ("csv", "json-lines"):
        path = table_path(tmp_path, _table(), fmt, prefix="run-")
        assert path.name.startswith("run-characteristic")
        written = emit(_table(), fmt, path)
        assert read_table(written).rows == ROWS
    with pytest.raises(ValidationError):
        emit(_table(), "parquet", tmp_path / "x")
    with pytest.raises(ValidationError):
        read_table(tmp_path / "table.txt")


def test_rewriting_is_byte_identical(tmp_path):
    first = write_csv(_table(), tmp_path / "a.csv")
    second = write_csv(read_csv(first), tmp_path / "b.csv")
    assert first.read_bytes() == second.read_bytes()


def test_header_is_required(tmp_path):
    path = tmp_path / "blank.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ValidationError):
        read_csv(path)
