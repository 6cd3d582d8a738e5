import numpy as np

from wsesparse.formats import CsrMatrix, DenseMatrix, csr_from_dense
from wsesparse.mmio import read_matrix, write_matrix
from wsesparse.oracle import random_dense, random_sparse


def test_sparse_round_trip(tmp_path):
    a = random_sparse(200, 0.03, seed=1)
    path = tmp_path / "a.mtx"
    write_matrix(path, a, comment="seed 1")
    b = read_matrix(path)
    assert isinstance(b, CsrMatrix) and b == a


def test_dense_round_trip(tmp_path):
    h = random_dense(16, 3, seed=2, low=-1.0)
    path = tmp_path / "h.mtx"
    write_matrix(path, h)
    g = read_matrix(path)
    assert isinstance(g, DenseMatrix)
    assert np.array_equal(g.data, h.data)


def test_empty_rows_survive(tmp_path):
    dense = np.zeros((5, 5), np.float32)
    dense[3, 1] = 0.5
    a = csr_from_dense(dense)
    path = tmp_path / "e.mtx"
    write_matrix(path, a)
    assert read_matrix(path) == a
