"""Footprint accounting: Table-style formulas and streaming stream-pair counts."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .formats import (
    GIB,
    PAIR_BYTES,
    CsrMatrix,
    StreamStats,
    csr_footprint_bytes,
    csr_valued_footprint_bytes,
    dense_footprint_bytes,
)
from .oracle import RowBlock, iter_random_blocks


@dataclass(frozen=True)
class GraphRow:
    name: str
    nodes: int
    edges: int
    dense_gb: float
    csr_gb: float


# Node/edge counts as rounded in the published table, with its GB columns.
TABLE1 = (
    GraphRow("cora", 2710, 10900, 2.73e-2, 5.05e-5),
    GraphRow("pubmed", 19700, 108000, 1.45e0, 4.77e-4),
    GraphRow("arxiv", 169000, 1170000, 1.07e2, 4.98e-3),
    GraphRow("products", 2450000, 61900000, 2.23e4, 2.40e-1),
)


def table1_rows(rows=TABLE1):
    """Recompute both GB columns and their relative error against the table."""
    out = []
    for g in rows:
        dense = dense_footprint_bytes(g.nodes) / GIB
        csr = csr_footprint_bytes(g.nodes, g.edges) / GIB
        out.append(
            {
                "graph": g.name,
                "nodes": g.nodes,
                "edges": g.edges,
                "dense_gb": dense,
                "csr_gb": csr,
                "dense_gb_table": g.dense_gb,
                "csr_gb_table": g.csr_gb,
                "dense_rel_err": abs(dense - g.dense_gb) / g.dense_gb,
                "csr_rel_err": abs(csr - g.csr_gb) / g.csr_gb,
            }
        )
    return out


class SellpackCounter:
    """Accumulates stream lengths of the chunked encoding from row blocks.

    Each (chunk, window) stream holds ``nnz + distinct_rows + lead`` pairs
    where ``lead`` is 1 when the first nonempty row is not the chunk's first
    row (or the stream has no nonzeros at all). Streams of a chunk are padded
    to the longest one.
    """

    def __init__(self, n_rows: int, n_cols: int, max_y_chunk: int, max_v_per_pe: int):
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.myc = max_y_chunk
        self.mvpp = max_v_per_pe
        self.n_windows = -(-n_cols // max_v_per_pe) if n_cols else 0
        self.n_chunks = -(-n_rows // max_y_chunk) if n_rows else 0
        w = self.n_windows
        self._nnz = np.zeros((self.n_chunks, w), dtype=np.int64)
        self._rows = np.zeros((self.n_chunks, w), dtype=np.int64)
        self._first = np.full((self.n_chunks, w), np.iinfo(np.int64).max, dtype=np.int64)
        self._seen = np.zeros(self.n_chunks, dtype=np.int64)
        self.nnz = 0

    def add_block(self, row0: int, row_ptr: np.ndarray, col_idx: np.ndarray):
        n_local = row_ptr.size - 1
        rows = row0 + np.repeat(np.arange(n_local, dtype=np.int64), np.diff(row_ptr))
        win = col_idx.astype(np.int64) // self.mvpp
        chunk = rows // self.myc
        local = rows - chunk * self.myc
        flat = chunk * self.n_windows + win
        size = self.n_chunks * self.n_windows
        self._nnz.reshape(-1)[:] += np.bincount(flat, minlength=size)
        # distinct (row, window) pairs; entries arrive sorted by row then column
        rw = rows * self.n_windows + win
        first = np.ones(rw.size, dtype=bool)
        if rw.size > 1:
            srt = np.sort(rw)
            first[1:] = srt[1:] != srt[:-1]
            rw = srt
        uniq = rw[first]
        urows = uniq // self.n_windows
        uflat = (urows // self.myc) * self.n_windows + uniq % self.n_windows
        self._rows.reshape(-1)[:] += np.bincount(uflat, minlength=size)
        np.minimum.at(self._first.reshape(-1), flat, local)
        self._seen += np.bincount(np.arange(row0, row0 + n_local) // self.myc,
                                  minlength=self.n_chunks)
        self.nnz += int(col_idx.size)

    def add_matrix(self, a: CsrMatrix):
        self.add_block(0, a.row_ptr, a.col_idx)

    def lengths(self) -> np.ndarray:
        """Unpadded stream lengths, shape ``(chunks, windows)``."""
        lead = (self._first > 0).astype(np.int64)  # also true for empty streams
        return self._nnz + self._rows + lead

    def stats(self) -> StreamStats:
        lengths = self.lengths()
        if lengths.size == 0:
            return StreamStats(0, 0, 0, 0)
        padded = lengths.max(axis=1)
        total = int(padded.sum()) * self.n_windows
        endrow = int((self._rows + (self._first > 0)).sum())
        nnz = int(self._nnz.sum())
        return StreamStats(total, nnz, endrow, total - nnz - endrow)


def count_sellpack(source, n: int, max_y_chunk: int, max_v_per_pe: int) -> StreamStats:
    """Stream statistics of a matrix given as a ``CsrMatrix`` or iterable of row blocks."""
    counter = SellpackCounter(n, n, max_y_chunk, max_v_per_pe)
    if isinstance(source, CsrMatrix):
        counter.add_matrix(source)
    else:
        for blk in source:
            counter.add_block(blk.row0, blk.row_ptr, blk.col_idx)
    return counter.stats()


@dataclass(frozen=True)
class FootprintRecord:
    n: int
    nnz: int
    density: float
    myc: int
    mvpp: int
    seed: int
    total_pairs: int
    ratio: float
    bytes: int
    csr_bytes: int
    csr_valued_bytes: int
    dense_bytes: int

    def to_dict(self) -> dict:
        return asdict(self)


def random_footprint(n: int, density: float, seed: int, mycs: Iterable[int],
                     mvpp: int = 64) -> list:
    """Count stream footprints of one seeded random matrix for several chunk sizes.

    The matrix is generated block by block once; every chunk size shares the pass.
    """
    mycs = list(mycs)
    counters = [SellpackCounter(n, n, m, mvpp) for m in mycs]
    for blk in iter_random_blocks(n, density, seed, with_values=False):
        for c in counters:
            c.add_block(blk.row0, blk.row_ptr, blk.col_idx)
    out = []
    for m, c in zip(mycs, counters):
        st = c.stats()
        out.append(
            FootprintRecord(
                n=n, nnz=c.nnz, density=density, myc=m, mvpp=mvpp, seed=seed,
                total_pairs=st.total_pairs, ratio=st.ratio(c.nnz),
                bytes=st.total_pairs * PAIR_BYTES,
                csr_bytes=csr_footprint_bytes(n, c.nnz),
                csr_valued_bytes=csr_valued_footprint_bytes(n, c.nnz),
                dense_bytes=dense_footprint_bytes(n) if n else 0,
            )
        )
    return out
