import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wsesparse.formats import END_ROW, CsrMatrix, csr_from_dense

settings.register_profile(
    "default", max_examples=100, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def naive_streams(dense: np.ndarray, myc: int, mvpp: int):
    """Reference SELLPACK-like encoder written straight from the encoding rule.

    Returns ``streams[chunk][window]`` as lists of (index, value-or-run) pairs,
    before NULL padding.
    """
    n_rows, n_cols = dense.shape
    n_windows = -(-n_cols // mvpp) if n_cols else 0
    out = []
    for c0 in range(0, n_rows, myc):
        rows = range(c0, min(n_rows, c0 + myc))
        chunk = []
        for w in range(n_windows):
            pairs = []
            pending = 0
            for i in rows:
                cols = [j for j in range(w * mvpp, min(n_cols, (w + 1) * mvpp)) if dense[i, j] != 0]
                if cols:
                    if pending:
                        pairs.append((END_ROW, pending))
                    pending = 0
                    for j in cols:
                        pairs.append((j, float(dense[i, j])))
                pending += 1
            pairs.append((END_ROW, pending))
            chunk.append(pairs)
        out.append(chunk)
    return out


def dense_from_rows(rows):
    return np.array(rows, dtype=np.float32)


@pytest.fixture
def identity4():
    return csr_from_dense(np.eye(4, dtype=np.float32))


def empty_csr(n: int) -> CsrMatrix:
    return CsrMatrix(n, n, np.zeros(n + 1, np.int64), np.zeros(0, np.int64), np.zeros(0, np.float32))
