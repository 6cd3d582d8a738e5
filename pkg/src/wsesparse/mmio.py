"""Matrix Market reading and writing through scipy.io."""
from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse

from .formats import CsrMatrix, DenseMatrix, csr_from_scipy, csr_to_scipy


def read_matrix(path):
    """Load a Matrix Market file as CsrMatrix (coordinate) or DenseMatrix (array)."""
    m = scipy.io.mmread(str(path))
    if scipy.sparse.issparse(m):
        return csr_from_scipy(m)
    return DenseMatrix(np.asarray(m, dtype=np.float32))


def write_matrix(path, m, comment: str = "") -> None:
    """Write a CsrMatrix or DenseMatrix; float32 values round-trip at 9 digits."""
    if isinstance(m, CsrMatrix):
        obj = csr_to_scipy(m).tocoo()
    elif isinstance(m, DenseMatrix):
        obj = m.data
    else:
        obj = m
    scipy.io.mmwrite(str(path), obj, comment=comment, precision=9)
