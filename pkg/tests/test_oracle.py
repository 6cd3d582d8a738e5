import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import empty_csr
from wsesparse.errors import DimensionError
from wsesparse.formats import DenseMatrix, csr_from_dense
from wsesparse.oracle import (
    bitwise_equal,
    checksum,
    compare,
    random_dense,
    random_sparse,
    sddmm_ref,
    spmm_ref,
)


# (nnz, checksum) of random_sparse(64, 0.05, seed=3).
FROZEN_64 = (218, "ee9920724d10e98f")


def triple_loop(a: np.ndarray, h: np.ndarray) -> np.ndarray:
    n, k = a.shape
    out = np.zeros((n, h.shape[1]), dtype=np.float64)
    for i in range(n):
        for j in range(h.shape[1]):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(h[t, j])
            out[i, j] = s
    return out


class TestSpmmRef:
    def test_identity(self):
        h = random_dense(4, 3, seed=1)
        assert spmm_ref(csr_from_dense(np.eye(4, dtype=np.float32)), h) == h

    def test_zero(self):
        y = spmm_ref(empty_csr(5), random_dense(5, 2, seed=1))
        assert not y.data.any()

    def test_triple_loop(self):
        a = random_sparse(64, 0.1, seed=2)
        h = random_dense(64, 8, seed=3)
        ref = triple_loop(a.to_dense(), h.data)
        assert compare(spmm_ref(a, h), DenseMatrix(ref), rel_tol=1e-5).passed

    def test_row_order_accumulation(self):
        # float32 (1e8 + 1) - 1e8 is 0: the sum must follow storage order
        a = csr_from_dense(np.array([[1e8, 1.0, -1e8]], np.float32).repeat(3, 0))
        h = np.ones((3, 1), np.float32)
        assert spmm_ref(a, h).data[0, 0] == np.float32(0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            spmm_ref(random_sparse(4, 0.5, 0), np.ones((5, 2), np.float32))

    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_linearity(self, seed, d):
        a = random_sparse(24, 0.2, seed)
        h1 = random_dense(24, d, seed + 1, low=-1.0)
        h2 = random_dense(24, d, seed + 2, low=-1.0)
        lhs = spmm_ref(a, DenseMatrix(h1.data + h2.data)).data
        rhs = spmm_ref(a, h1).data + spmm_ref(a, h2).data
        assert np.allclose(lhs, rhs, rtol=1e-4, atol=1e-5)


class TestSddmmRef:
    def test_mask_case(self):
        a = random_sparse(32, 0.1, seed=4)
        ones = a.with_values(np.ones(a.nnz, np.float32))
        b, c = random_dense(32, 2, 5), random_dense(2, 32, 6)
        prod = b.data.astype(np.float64) @ c.data.astype(np.float64)
        y = sddmm_ref(ones, b, c)
        assert np.allclose(y.values, prod[ones.row_indices(), ones.col_idx], rtol=1e-6)

    def test_empty_pattern(self):
        y = sddmm_ref(empty_csr(8), random_dense(8, 2, 1), random_dense(2, 8, 2))
        assert y.nnz == 0

    def test_dense_oracle(self):
        a = random_sparse(128, 0.05, seed=7)
        b, c = random_dense(128, 2, 8), random_dense(2, 128, 9)
        dense = (b.data.astype(np.float64) @ c.data.astype(np.float64)) * a.to_dense()
        y = sddmm_ref(a, b, c)
        assert compare(y.to_dense(), dense, rel_tol=1e-5).passed
        assert y.same_pattern(a)

    def test_full_pattern_unit_values(self):
        a = csr_from_dense(np.ones((6, 6), np.float32))
        b, c = random_dense(6, 3, 1), random_dense(3, 6, 2)
        y = sddmm_ref(a, b, c)
        assert np.allclose(y.to_dense(), b.data @ c.data, rtol=1e-6)

    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            sddmm_ref(empty_csr(4), np.ones((4, 2)), np.ones((3, 4)))


class TestGenerators:
    def test_full_density(self):
        a = random_sparse(32, 1.0, seed=0)
        assert a.nnz == 32 * 32

    def test_determinism(self):
        assert random_sparse(1024, 0.01, 7) == random_sparse(1024, 0.01, 7)
        assert random_dense(16, 4, 3) == random_dense(16, 4, 3)

    def test_seeds_differ(self):
        assert random_sparse(256, 0.05, 1) != random_sparse(256, 0.05, 2)

    def test_binomial_concentration(self):
        a = random_sparse(4096, 0.001, seed=1)
        assert abs(a.nnz - 16_777) <= 0.05 * 16_777

    def test_frozen_instance(self):
        # Frozen from the generator itself; guards cross-platform reproducibility.
        a = random_sparse(64, 0.05, seed=3)
        assert (a.nnz, checksum(a)) == FROZEN_64

    def test_value_range(self):
        a = random_sparse(256, 0.2, seed=5)
        assert a.values.min() > 0.0 and a.values.max() <= 1.0
        d = random_dense(64, 64, 5, low=-1.0)
        assert d.data.min() > -1.0 and d.data.max() <= 1.0

    def test_rows_sorted_unique(self):
        a = random_sparse(300, 0.7, seed=9)  # exercises the complement path
        for i in range(0, 300, 37):
            cols = a.row(i)[0]
            assert np.all(np.diff(cols) > 0)

    @pytest.mark.parametrize("density", [0.0, -0.1, 1.5])
    def test_bad_density(self, density):
        with pytest.raises(ValueError):
            random_sparse(8, density, 0)


class TestCompare:
    def test_equal(self):
        x = random_dense(4, 4, 1)
        r = compare(x, x)
        assert r.passed and r.max_abs_err == 0.0 and r.mismatch_count == 0

    def test_abs_tolerance(self):
        y = random_dense(4, 4, 1)
        x = DenseMatrix(y.data + np.float32(1e-3))
        assert compare(x, y, rel_tol=0.0, abs_tol=1e-2).passed

    def test_single_mismatch(self):
        y = random_dense(4, 4, 1)
        data = y.data.copy()
        data[2, 1] += 1.0
        r = compare(DenseMatrix(data), y)
        assert r.mismatch_count == 1 and not r.passed
        assert r.max_abs_err == pytest.approx(1.0, rel=1e-6)

    def test_nan_fails(self):
        y = random_dense(2, 2, 1)
        data = y.data.copy()
        data[0, 0] = np.nan
        assert not compare(DenseMatrix(data), y).passed

    def test_pattern_mismatch(self):
        with pytest.raises(DimensionError):
            compare(random_sparse(16, 0.2, 1), random_sparse(16, 0.2, 2))

    def test_bitwise(self):
        x = random_dense(3, 3, 1)
        assert bitwise_equal(x, x)
        assert not bitwise_equal(x, DenseMatrix(np.nextafter(x.data, np.float32(2))))
