"""Reference SpMM/SDDMM, seeded generators and tolerance comparison.

Generators use the Philox counter-based bit generator keyed by
``(seed, block)``, so every block of ``ROW_BLOCK`` rows is reproducible on its
own and large matrices can be produced one block at a time.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .errors import DimensionError
from .formats import CsrMatrix, DenseMatrix, f32_bits

ROW_BLOCK = 1024
_SEED_MASK = (1 << 64) - 1
# Stream ids separating the dense generator from the sparse one.
_DENSE_STREAM = 1 << 63


def philox(seed: int, block: int) -> np.random.Generator:
    key = np.array([seed & _SEED_MASK, block & _SEED_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _unit_interval(rng, size) -> np.ndarray:
    """float32 samples in (0, 1]."""
    return (1.0 - rng.random(size)).astype(np.float32)


def _sample_rows(rng, n: int, counts: np.ndarray) -> np.ndarray:
    """Sorted distinct column positions for each row, concatenated row by row."""
    rows = np.arange(counts.size, dtype=np.int64)
    sparse_rows = counts <= n // 2
    keys = np.empty(0, dtype=np.int64)
    k_sparse = np.where(sparse_rows, counts, 0)
    total = int(k_sparse.sum())
    if total:
        owner = np.repeat(rows, k_sparse)
        cols = rng.integers(0, n, size=total, dtype=np.int64)
        keys = owner * n + cols
        keys.sort()
        dup = np.zeros(total, dtype=bool)
        dup[1:] = keys[1:] == keys[:-1]
        while dup.any():
            owner_d = keys[dup] // n
            keys[dup] = owner_d * n + rng.integers(0, n, size=int(dup.sum()), dtype=np.int64)
            keys.sort()
            dup[:] = False
            dup[1:] = keys[1:] == keys[:-1]
    dense_parts = []
    for r in np.nonzero(~sparse_rows)[0]:
        # Draw the excluded positions instead when the row is more than half full.
        excluded = n - int(counts[r])
        mask = np.ones(n, dtype=bool)
        if excluded:
            mask[_sample_rows(rng, n, np.array([excluded]))] = False
        dense_parts.append(int(r) * n + np.nonzero(mask)[0])
    if dense_parts:
        keys = np.sort(np.concatenate([keys] + dense_parts))
    return keys


@dataclass(frozen=True)
class RowBlock:
    """Rows ``[row0, row0 + n_rows)`` of a generated matrix."""

    row0: int
    n_rows: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray | None


def iter_random_blocks(n: int, density: float, seed: int, with_values=True,
                       block_rows: int = ROW_BLOCK) -> Iterator[RowBlock]:
    """Yield a random ``n x n`` matrix block by block without materializing it.

    Blocks must keep the default size for results to match :func:`random_sparse`.
    """
    if not 0 < density <= 1:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    if n < 0:
        raise ValueError("n must be non-negative")
    for b, row0 in enumerate(range(0, n, block_rows)):
        rows = min(block_rows, n - row0)
        rng = philox(seed, b)
        counts = rng.binomial(n, density, size=rows).astype(np.int64)
        keys = _sample_rows(rng, n, counts)
        cols = keys % n if n else keys
        ptr = np.concatenate(([0], np.cumsum(counts)))
        vals = _unit_interval(rng, cols.size) if with_values else None
        yield RowBlock(row0, rows, ptr, cols, vals)


def random_sparse(n: int, density: float, seed: int) -> CsrMatrix:
    """Seeded ``n x n`` matrix with Binomial(n, density) nonzeros per row.

    Positions are uniform without replacement and values uniform in (0, 1].
    """
    ptrs, cols, vals = [np.zeros(1, dtype=np.int64)], [], []
    offset = 0
    for blk in iter_random_blocks(n, density, seed):
        ptrs.append(blk.row_ptr[1:] + offset)
        offset += blk.col_idx.size
        cols.append(blk.col_idx)
        vals.append(blk.values)
    col_idx = np.concatenate(cols) if cols else np.empty(0, np.int64)
    values = np.concatenate(vals) if vals else np.empty(0, np.float32)
    return CsrMatrix(n, n, np.concatenate(ptrs), col_idx, values)


def random_dense(n_rows: int, n_cols: int, seed: int, low: float = 0.0,
                 high: float = 1.0) -> DenseMatrix:
    """Seeded dense matrix with entries in ``(low, high]``."""
    rng = philox(seed, _DENSE_STREAM)
    u = _unit_interval(rng, n_rows * n_cols).astype(np.float64)
    data = (low + (high - low) * u).astype(np.float32)
    return DenseMatrix(data.reshape(n_rows, n_cols))


def _data(m) -> np.ndarray:
    return m.data if isinstance(m, DenseMatrix) else np.asarray(m, dtype=np.float32)


def spmm_ref(a: CsrMatrix, h) -> DenseMatrix:
    """Y = A H with float32 products added in each row's storage order."""
    hd = _data(h)
    if hd.ndim != 2 or a.n_cols != hd.shape[0]:
        raise DimensionError(f"A is {a.shape} but H is {hd.shape}")
    y = np.zeros((a.n_rows, hd.shape[1]), dtype=np.float32)
    lengths = a.row_lengths()
    starts = a.row_ptr[:-1]
    rows = np.arange(a.n_rows)
    for k in range(int(lengths.max()) if lengths.size else 0):
        live = rows[lengths > k]
        e = starts[live] + k
        prod = a.values[e][:, None] * hd[a.col_idx[e]]
        y[live] = y[live] + prod
    return DenseMatrix(y)


def sddmm_ref(a: CsrMatrix, b, c) -> CsrMatrix:
    """Values ``a[i,j] * sum_t b[i,t] c[t,j]`` on the pattern of ``a``."""
    bd, cd = _data(b), _data(c)
    if bd.ndim != 2 or cd.ndim != 2 or bd.shape[0] != a.n_rows or cd.shape[1] != a.n_cols \
            or bd.shape[1] != cd.shape[0]:
        raise DimensionError(f"A {a.shape}, B {bd.shape} and C {cd.shape} are incompatible")
    rows = a.row_indices()
    cols = a.col_idx
    acc = np.zeros(a.nnz, dtype=np.float32)
    for t in range(bd.shape[1]):
        acc = acc + bd[rows, t] * cd[t, cols]
    return a.with_values(acc * a.values)


@dataclass(frozen=True)
class ComparisonReport:
    """Outcome of an element-wise tolerance check.

    ``passed`` holds exactly when ``mismatch_count == 0``.
    """

    max_abs_err: float
    max_rel_err: float
    mismatch_count: int
    passed: bool
    elements: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def compare(x, y, rel_tol: float = 1e-4, abs_tol: float = 0.0) -> ComparisonReport:
    """Element ``e`` passes when ``|x-y| <= abs_tol + rel_tol*|y|``; NaN always fails."""
    if isinstance(x, CsrMatrix) or isinstance(y, CsrMatrix):
        if not (isinstance(x, CsrMatrix) and isinstance(y, CsrMatrix)) or not x.same_pattern(y):
            raise DimensionError("sparse comparison needs identical sparsity patterns")
        xd, yd = x.values, y.values
    else:
        xd, yd = _data(x), _data(y)
    if xd.shape != yd.shape:
        raise DimensionError(f"shape mismatch {xd.shape} vs {yd.shape}")
    xd = xd.astype(np.float64)
    yd = yd.astype(np.float64)
    err = np.abs(xd - yd)
    ok = err <= abs_tol + rel_tol * np.abs(yd)
    mismatches = int(ok.size - np.count_nonzero(ok))
    if err.size == 0:
        return ComparisonReport(0.0, 0.0, 0, True, 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(err == 0, 0.0, err / np.abs(yd))
    max_abs = float(np.nanmax(err)) if not np.all(np.isnan(err)) else float("nan")
    max_rel = float(np.nanmax(rel)) if not np.all(np.isnan(rel)) else float("nan")
    if np.isnan(err).any():
        max_abs = max_rel = float("nan")
    return ComparisonReport(max_abs, max_rel, mismatches, mismatches == 0, int(err.size))


def bitwise_equal(x, y) -> bool:
    """Exact equality of float32 bit patterns."""
    if isinstance(x, CsrMatrix):
        return x == y
    return np.array_equal(f32_bits(_data(x)), f32_bits(_data(y)))


def checksum(m) -> str:
    """Short content hash of a dense or CSR matrix."""
    import hashlib

    h = hashlib.sha256()
    if isinstance(m, CsrMatrix):
        for arr in (m.row_ptr.astype(np.int64), m.col_idx.astype(np.int64), f32_bits(m.values)):
            h.update(arr.tobytes())
    else:
        h.update(f32_bits(_data(m)).tobytes())
    return h.hexdigest()[:16]
