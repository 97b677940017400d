import numpy as np
import pytest

from src.analytics.errors import ContractViolation, InputParseError
from src.analytics.matstore import CoefficientMatrix
from src.processing.matrix_io import (
    coefficient_bytes,
    dense_bytes,
    read_coefficients,
    read_dense,
    read_dense_csv,
    read_membership,
    read_symmetric,
    write_dense_csv,
)


def test_csv_roundtrip(tmp_path, rng):
    a = rng.random((3, 4))
    p = tmp_path / "x.csv"
    p.write_text(write_dense_csv(a))
    np.testing.assert_array_equal(read_dense(p).data, a)


def test_csv_tolerates_spaces(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1, 2\n 3 ,4\n")
    np.testing.assert_array_equal(read_dense_csv(p), [[1.0, 2.0], [3.0, 4.0]])


def test_csv_reports_bad_cell(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,abc\n")
    with pytest.raises(InputParseError) as info:
        read_dense_csv(p)
    assert info.value.line == 2
    assert info.value.column == 2
    assert "line 2" in str(info.value)


def test_csv_rejects_non_finite(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,inf\n")
    with pytest.raises(InputParseError) as info:
        read_dense_csv(p)
    assert (info.value.line, info.value.column) == (1, 2)


def test_csv_ragged_row(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,4,5\n")
    with pytest.raises(InputParseError) as info:
        read_dense_csv(p)
    assert info.value.line == 2


def test_missing_and_empty_files(tmp_path):
    with pytest.raises(InputParseError, match="not found"):
        read_dense(tmp_path / "nope.csv")
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(InputParseError, match="empty"):
        read_dense(p)


def test_matrix_market_dense_roundtrip(tmp_path, rng):
    a = rng.random((4, 3))
    p = tmp_path / "x.mtx"
    p.write_bytes(dense_bytes(a, comment="seed=1"))
    np.testing.assert_array_equal(read_dense(p).data, a)


def test_malformed_matrix_market(tmp_path):
    p = tmp_path / "x.mtx"
    p.write_text("this is not a matrix\n")
    with pytest.raises(InputParseError):
        read_dense(p)


def test_coefficients_roundtrip(tmp_path):
    dense = np.array([[0.5, 0.0, 1.0], [0.5, 0.25, 0.0], [0.0, 0.75, 0.0]])
    p = tmp_path / "c.mtx"
    p.write_bytes(coefficient_bytes(CoefficientMatrix.from_dense(dense)))
    C = read_coefficients(p)
    np.testing.assert_array_equal(C.to_coo().toarray(), dense)
    assert C.infeasible_columns() == []
    assert C.columns[1].indices.tolist() == [1, 2]


def test_coefficients_shape_check(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("1,0\n0,1\n")
    with pytest.raises(InputParseError, match="expected 3 x 3"):
        read_coefficients(p, n=3)


def test_symmetric_upper_triangle_is_mirrored(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,1,2\n0,0,3\n0,0,0\n")
    A = read_symmetric(p)
    np.testing.assert_array_equal(A.data, [[0, 1, 2], [1, 0, 3], [2, 3, 0]])


def test_symmetric_lower_triangle_is_mirrored(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,0\n4,0\n")
    np.testing.assert_array_equal(read_symmetric(p).data, [[0, 4], [4, 0]])


def test_symmetric_rejects_asymmetric(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,1\n2,0\n")
    with pytest.raises(InputParseError, match="not symmetric"):
        read_symmetric(p)


def test_membership_orientation(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("1,0\n0,1\n0.5,0.5\n")
    H = read_membership(p, k=2)
    assert H.shape == (2, 3)
    with pytest.raises(ContractViolation):
        read_membership(p, k=4)


def test_csv_roundtrip_is_bit_exact(tmp_path):
    a = np.array([[0.1 + 0.2, 1.0 / 3.0], [2.0 / 3.0, 1e-300], [np.nextafter(1.0, 2.0), -7.25e12]])
    p = tmp_path / "x.csv"
    p.write_text(write_dense_csv(a))
    assert "0.30000000000000004" in p.read_text()
    got = read_dense_csv(p)
    assert got.tobytes() == a.tobytes()


def test_csv_padded_cells_keep_precision(tmp_path):
    # trailing blanks are tolerated without losing precision
    p = tmp_path / "x.csv"
    p.write_text("0.30000000000000004 ,0.33333333333333331\n1 ,2\n")
    got = read_dense_csv(p)
    assert got[0, 0] == 0.1 + 0.2
    assert got[0, 1] == 1.0 / 3.0
    np.testing.assert_array_equal(got[1], [1.0, 2.0])
