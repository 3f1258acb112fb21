import numpy as np
import pytest

from flowanneal.errors import InputValidationError
from flowanneal.tables import (format_float, parse_float_list, read_table,
                               write_table)


def test_round_trip_is_bit_exact(tmp_path):
    path = tmp_path / "t.csv"
    awkward = np.array([0.1, 1.0 / 3.0, -0.0, 1e-300, np.pi,
                        12345.678901234567])
    write_table(path, ["x"], [awkward])
    _, cols = read_table(path, ["x"])
    assert np.array_equal(cols["x"], awkward)


def test_integer_columns_written_without_exponent(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["n", "x"], [np.array([1, 20, 300]),
                                   np.array([1.5, 2.5, 3.5])])
    lines = path.read_text().splitlines()
    assert lines[0] == "n,x"
    assert lines[1] == "1,1.5"
    _, cols = read_table(path)
    assert np.array_equal(cols["n"], [1.0, 20.0, 300.0])


def test_metadata_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["x"], [np.zeros(1)],
                metadata={"name": "run a", "flag": True, "count": 7,
                          "value": 0.1, "vec": [1.0, 0.25]})
    meta, _ = read_table(path)
    assert meta["name"] == "run a"
    assert meta["flag"] == "true"
    assert meta["count"] == "7"
    assert float(meta["value"]) == 0.1
    assert np.array_equal(parse_float_list(meta["vec"]), [1.0, 0.25])


def test_empty_table_round_trip(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["a", "b"], [np.empty(0), np.empty(0)])
    _, cols = read_table(path, ["a", "b"])
    assert cols["a"].shape == (0,)


def test_header_mismatch_rejected(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["a", "b"], [np.zeros(2), np.ones(2)])
    with pytest.raises(InputValidationError, match="header"):
        read_table(path, ["a", "c"])


def test_ragged_row_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1.0,2.0\n3.0\n")
    with pytest.raises(InputValidationError, match=":3"):
        read_table(path)


def test_non_numeric_cell_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a\nhello\n")
    with pytest.raises(InputValidationError):
        read_table(path)


def test_metadata_after_header_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a\n1.0\n# late = 1\n")
    with pytest.raises(InputValidationError, match="metadata"):
        read_table(path)


def test_missing_header_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("# only = metadata\n")
    with pytest.raises(InputValidationError, match="header"):
        read_table(path)


def test_write_table_shape_validation(tmp_path):
    with pytest.raises(ValueError):
        write_table(tmp_path / "t.csv", ["a"], [np.zeros(2), np.zeros(2)])
    with pytest.raises(ValueError):
        write_table(tmp_path / "t.csv", ["a", "b"],
                    [np.zeros(2), np.zeros(3)])


def test_format_float_round_trips_doubles():
    for x in (0.1, 2.0 / 3.0, 1e308, 5e-324, -1.2345678987654321e-7):
        assert float(format_float(x)) == x


def test_parse_float_list():
    assert np.array_equal(parse_float_list("1,2.5,-3e2"), [1.0, 2.5, -300.0])
    with pytest.raises(InputValidationError):
        parse_float_list("1,zwei,3")
