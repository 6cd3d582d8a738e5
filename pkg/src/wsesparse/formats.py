"""Sparse and dense matrix containers, the chunked streaming encoding and COO tiling.

Sentinel words
--------------
``NULL`` (0xFFFFFFFF) pads streams and tiles, ``END_ROW`` (0xFFFFFFFE) marks
row terminations and ``DONE`` (0xFFFF) is the 16-bit token routers hand to
workers. An END_ROW pair carries its run length as a raw ``uint32`` in the
value word. Column indices stay below all three sentinels, so the router
comparison ``col_idx > last_col_idx`` keeps working for sentinel words.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .config import KernelConfig
from .errors import ConfigError, CorruptStreamError, DimensionError, TileOverflowError

NULL = 0xFFFFFFFF
END_ROW = 0xFFFFFFFE
DONE = 0xFFFF
MAX_INDEX = END_ROW - 1

GIB = 2**30
MIB = 2**20
PAIR_BYTES = 8
_INT64_MAX = np.iinfo(np.int64).max


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable and arr.base is not None:
        arr = arr.copy()
    arr.setflags(write=False)
    return arr


def f32_bits(x) -> np.ndarray:
    """View float32 data as raw uint32 words."""
    return np.ascontiguousarray(x, dtype=np.float32).view(np.uint32)


def bits_f32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.uint32).view(np.float32)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with float32 values.

    Arrays are validated and frozen on construction. Equality is exact and
    compares value bit patterns.
    """

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.n_rows < 0 or self.n_cols < 0:
            raise DimensionError("matrix dimensions must be non-negative")
        if self.n_cols > MAX_INDEX + 1:
            raise DimensionError("column count exceeds the 32-bit index space")
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64 if self.n_cols > 2**31 - 1 else np.int32)
        values = np.asarray(self.values, dtype=np.float32)
        if row_ptr.shape != (self.n_rows + 1,):
            raise ValueError(f"row_ptr must have length n_rows+1={self.n_rows + 1}")
        if col_idx.ndim != 1 or values.shape != col_idx.shape:
            raise ValueError("col_idx and values must be 1-D arrays of equal length")
        if row_ptr[0] != 0 or row_ptr[-1] != col_idx.size:
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(row_ptr) < 0):
            raise ValueError("row_ptr must be non-decreasing")
        if col_idx.size:
            if col_idx.min() < 0 or col_idx.max() >= self.n_cols:
                raise ValueError("column index out of range")
            steps = np.diff(col_idx.astype(np.int64))
            starts = np.zeros(col_idx.size, dtype=bool)
            starts[row_ptr[:-1][row_ptr[:-1] < col_idx.size]] = True
            if np.any(steps[~starts[1:]] <= 0):
                raise ValueError("column indices must be strictly increasing within a row")
        object.__setattr__(self, "row_ptr", _frozen(row_ptr))
        object.__setattr__(self, "col_idx", _frozen(col_idx))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.size)

    @property
    def density(self) -> float:
        cells = self.n_rows * self.n_cols
        return self.nnz / cells if cells else 0.0

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def row_indices(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_lengths())

    def row(self, i: int):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float32)
        out[self.row_indices(), self.col_idx] = self.values
        return out

    def with_values(self, values) -> "CsrMatrix":
        return CsrMatrix(self.n_rows, self.n_cols, self.row_ptr, self.col_idx, values)

    def column_panel(self, c0: int, c1: int) -> "CsrMatrix":
        """Columns ``[c0, c1)`` re-indexed from zero."""
        keep = (self.col_idx >= c0) & (self.col_idx < c1)
        rows = self.row_indices()[keep]
        counts = np.bincount(rows, minlength=self.n_rows)
        ptr = np.concatenate(([0], np.cumsum(counts)))
        return CsrMatrix(self.n_rows, c1 - c0, ptr, self.col_idx[keep] - c0, self.values[keep])

    def same_pattern(self, other: "CsrMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
        )

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return self.same_pattern(other) and np.array_equal(
            f32_bits(self.values), f32_bits(other.values)
        )

    def __hash__(self):
        return hash((self.shape, self.nnz))

    def __repr__(self):
        return f"CsrMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Row-major float32 matrix."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise DimensionError(f"dense data must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "data", _frozen(arr))

    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> "DenseMatrix":
        return cls(np.zeros((n_rows, n_cols), dtype=np.float32))

    @property
    def n_rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(
            f32_bits(self.data), f32_bits(other.data)
        )

    def __hash__(self):
        return hash(self.shape)

    def __repr__(self):
        return f"DenseMatrix({self.n_rows}x{self.n_cols})"


def _as_array(m) -> np.ndarray:
    return m.data if isinstance(m, DenseMatrix) else np.asarray(m, dtype=np.float32)


def csr_from_dense(m, eps: float = 0.0) -> CsrMatrix:
    """Keep entries with ``|value| > eps``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    arr = _as_array(m)
    if arr.ndim != 2:
        raise DimensionError("expected a 2-D matrix")
    mask = np.abs(arr) > eps
    rows, cols = np.nonzero(mask)
    ptr = np.concatenate(([0], np.cumsum(mask.sum(axis=1))))
    return CsrMatrix(arr.shape[0], arr.shape[1], ptr, cols, arr[rows, cols])


def dense_from_csr(a: CsrMatrix) -> DenseMatrix:
    return DenseMatrix(a.to_dense())


def csr_from_coo(n_rows, n_cols, rows, cols, values, sum_duplicates=False) -> CsrMatrix:
    """Build a CSR matrix from unsorted coordinates."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float32)
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
        raise ValueError("row index out of range")
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    if rows.size > 1:
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if dup.any():
            if not sum_duplicates:
                raise ValueError("duplicate coordinates")
            first = np.concatenate(([True], ~dup))
            groups = np.cumsum(first) - 1
            summed = np.zeros(int(first.sum()), dtype=np.float64)
            np.add.at(summed, groups, values)
            rows, cols, values = rows[first], cols[first], summed.astype(np.float32)
    counts = np.bincount(rows, minlength=n_rows)
    ptr = np.concatenate(([0], np.cumsum(counts)))
    return CsrMatrix(n_rows, n_cols, ptr, cols, values)


def csr_to_scipy(a: CsrMatrix):
    import scipy.sparse as sp

    return sp.csr_matrix((a.values, a.col_idx, a.row_ptr), shape=a.shape)


def csr_from_scipy(m) -> CsrMatrix:
    m = m.tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return CsrMatrix(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)


# ---------------------------------------------------------------------------
# footprints
# ---------------------------------------------------------------------------


def _checked(nbytes: int) -> int:
    if nbytes > _INT64_MAX:
        raise OverflowError(f"footprint {nbytes} B does not fit a signed 64-bit count")
    return nbytes


def dense_footprint_bytes(n: int) -> int:
    """Bytes of an n x n float32 matrix."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    return _checked(4 * n * n)


def csr_footprint_bytes(n: int, nnz: int) -> int:
    """Bytes of a binary CSR adjacency: row pointers plus column indices."""
    n, nnz = int(n), int(nnz)
    if n < 0 or nnz < 0 or nnz > n * n:
        raise ValueError(f"need 0 <= nnz <= n^2, got n={n}, nnz={nnz}")
    return _checked(4 * (n + 1) + 4 * nnz)


def csr_valued_footprint_bytes(n: int, nnz: int) -> int:
    """Bytes of a CSR matrix that also stores one float32 per nonzero."""
    return _checked(csr_footprint_bytes(n, nnz) + 4 * int(nnz))


def to_gib(nbytes) -> float:
    return nbytes / GIB


# ---------------------------------------------------------------------------
# SELLPACK-like stream image
# ---------------------------------------------------------------------------


class StreamStats(NamedTuple):
    total_pairs: int
    nnz_pairs: int
    endrow_pairs: int
    null_pairs: int

    @property
    def bytes(self) -> int:
        return PAIR_BYTES * self.total_pairs

    def ratio(self, nnz=None) -> float:
        """Streamed pairs per source nonzero."""
        nnz = self.nnz_pairs if nnz is None else nnz
        return self.total_pairs / nnz if nnz else float("inf")

    def __add__(self, other):
        return StreamStats(*(a + b for a, b in zip(self, other)))


@dataclass(frozen=True, eq=False)
class SellpackImage:
    """Chunked per-window pair streams.

    ``chunks[c]`` is a ``uint32`` array of shape ``(n_windows, stream_len[c], 2)``
    whose last axis holds the (index, value) words of each pair. Window ``w``
    owns global columns ``[w*max_v_per_pe, (w+1)*max_v_per_pe)``.
    """

    n_rows: int
    n_cols: int
    max_y_chunk: int
    max_v_per_pe: int
    chunks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        chunks = tuple(_frozen(np.asarray(c, dtype=np.uint32)) for c in self.chunks)
        for c in chunks:
            if c.ndim != 3 or c.shape[2] != 2 or c.shape[0] != self.n_windows:
                raise CorruptStreamError(
                    f"chunk array must have shape ({self.n_windows}, L, 2), got {c.shape}"
                )
        object.__setattr__(self, "chunks", chunks)

    @property
    def n_windows(self) -> int:
        return -(-self.n_cols // self.max_v_per_pe) if self.n_cols else 0

    @property
    def chunk_count(self) -> int:
        return len(self.chunks)

    @property
    def stream_len(self) -> tuple:
        return tuple(int(c.shape[1]) for c in self.chunks)

    def chunk_rows(self, c: int) -> int:
        return max(0, min(self.max_y_chunk, self.n_rows - c * self.max_y_chunk))

    def stream(self, chunk: int, window: int) -> np.ndarray:
        return self.chunks[chunk][window]

    def __eq__(self, other):
        if not isinstance(other, SellpackImage):
            return NotImplemented
        head = (self.n_rows, self.n_cols, self.max_y_chunk, self.max_v_per_pe)
        if head != (other.n_rows, other.n_cols, other.max_y_chunk, other.max_v_per_pe):
            return False
        return len(self.chunks) == len(other.chunks) and all(
            np.array_equal(a, b) for a, b in zip(self.chunks, other.chunks)
        )

    __hash__ = None


def _stream_layout(local_rows, windows, n_windows, rows_in_chunk):
    """Pair positions of one chunk's nonzeros plus its END_ROW pairs.

    Inputs are the chunk's nonzeros sorted by (window, row, col). Returns the
    nonzero positions, the END pairs as (window, position, run) arrays, and the
    per-window stream lengths.
    """
    m = local_rows.size
    lengths = np.ones(n_windows, dtype=np.int64)
    if m == 0:
        w = np.arange(n_windows, dtype=np.int64)
        return (np.empty(0, np.int64), w, np.zeros(n_windows, np.int64),
                np.full(n_windows, rows_in_chunk, np.int64), lengths)
    idx = np.arange(m, dtype=np.int64)
    new_group = np.ones(m, dtype=bool)
    new_group[1:] = windows[1:] != windows[:-1]
    new_row = new_group.copy()
    new_row[1:] |= local_rows[1:] != local_rows[:-1]
    last_row = np.ones(m, dtype=bool)
    last_row[:-1] = new_row[1:]
    last_group = np.ones(m, dtype=bool)
    last_group[:-1] = new_group[1:]

    gstart = np.maximum.accumulate(np.where(new_group, idx, 0))
    row_ordinal = np.cumsum(new_row)
    rows_before = row_ordinal - row_ordinal[gstart]  # completed rows before the entry's row
    lead = (local_rows[gstart] > 0).astype(np.int64)
    pos = (idx - gstart) + rows_before + lead

    # END pair after the last entry of each (window, row)
    e = np.nonzero(last_row)[0]
    next_row = np.where(last_group[e], rows_in_chunk, local_rows[np.minimum(e + 1, m - 1)])
    end_w = windows[e]
    end_pos = pos[e] + 1
    end_run = next_row - local_rows[e]

    # leading END pair when the first nonempty row is not row 0
    g = np.nonzero(new_group)[0]
    has_lead = local_rows[g] > 0
    lead_w = windows[g][has_lead]
    lead_run = local_rows[g][has_lead]

    occupied = np.zeros(n_windows, dtype=bool)
    occupied[windows[g]] = True
    empty_w = np.nonzero(~occupied)[0]

    lengths[windows[g]] = pos[e[last_group[e]]] + 2
    end_w_all = np.concatenate((end_w, lead_w, empty_w))
    end_pos_all = np.concatenate((end_pos, np.zeros(lead_w.size + empty_w.size, np.int64)))
    end_run_all = np.concatenate((end_run, lead_run, np.full(empty_w.size, rows_in_chunk, np.int64)))
    return pos, end_w_all, end_pos_all, end_run_all, lengths


def _chunk_entries(a: CsrMatrix, c: int, myc: int, mvpp: int):
    """Nonzeros of chunk ``c`` sorted by (window, row, col)."""
    r0 = c * myc
    r1 = min(a.n_rows, r0 + myc)
    lo, hi = int(a.row_ptr[r0]), int(a.row_ptr[r1])
    rows = np.repeat(np.arange(r1 - r0, dtype=np.int64), np.diff(a.row_ptr[r0 : r1 + 1]))
    cols = a.col_idx[lo:hi].astype(np.int64)
    vals = a.values[lo:hi]
    windows = cols // mvpp
    order = np.argsort(windows, kind="stable")
    return r1 - r0, rows[order], cols[order], vals[order], windows[order]


def _check_encoding_cfg(a: CsrMatrix, cfg: KernelConfig):
    if a.n_rows != a.n_cols:
        raise DimensionError(f"matrix must be square, got {a.shape}")
    if a.n_rows != cfg.n:
        raise DimensionError(f"matrix is {a.n_rows}x{a.n_cols} but cfg.n={cfg.n}")
    if cfg.max_y_chunk & (cfg.max_y_chunk - 1):
        raise ConfigError("max_y_chunk must be a power of two")
    cfg.check_chunking()


def sellpack_encode(a: CsrMatrix, cfg: KernelConfig) -> SellpackImage:
    """Encode ``a`` into per-chunk, per-window pair streams."""
    _check_encoding_cfg(a, cfg)
    return encode_streams(a, cfg.max_y_chunk, cfg.max_v_per_pe)


def encode_streams(a: CsrMatrix, myc: int, mvpp: int) -> SellpackImage:
    """Encoding core; also accepts rectangular matrices such as column panels."""
    n_windows = -(-a.n_cols // mvpp) if a.n_cols else 0
    chunks = []
    for c in range(-(-a.n_rows // myc) if a.n_rows else 0):
        rows_c, rows, cols, vals, windows = _chunk_entries(a, c, myc, mvpp)
        pos, ew, ep, er, lengths = _stream_layout(rows, windows, n_windows, rows_c)
        length = int(lengths.max()) if n_windows else 0
        img = np.full((n_windows, length, 2), NULL, dtype=np.uint32)
        img[windows, pos, 0] = cols
        img[windows, pos, 1] = f32_bits(vals)
        img[ew, ep, 0] = END_ROW
        img[ew, ep, 1] = er
        chunks.append(img)
    return SellpackImage(a.n_rows, a.n_cols, myc, mvpp, tuple(chunks))


def decode_stream(stream: np.ndarray, window: int, mvpp: int, rows_in_chunk: int):
    """Decode one pair stream into (local_rows, cols, value_bits).

    Raises :class:`CorruptStreamError` on any sentinel inconsistency.
    """
    idx = stream[:, 0]
    val = stream[:, 1]
    is_null = idx == NULL
    if is_null.any():
        first_null = int(np.argmax(is_null))
        if not is_null[first_null:].all():
            raise CorruptStreamError(f"window {window}: data after NULL padding")
        if np.any(val[first_null:] != NULL):
            raise CorruptStreamError(f"window {window}: NULL index with non-NULL value")
        idx, val = idx[:first_null], val[:first_null]
    is_end = idx == END_ROW
    runs = np.where(is_end, val, 0).astype(np.int64)
    if np.any(runs[is_end] == 0):
        raise CorruptStreamError(f"window {window}: END_ROW with zero run length")
    total = int(runs.sum())
    if total != rows_in_chunk:
        raise CorruptStreamError(
            f"window {window}: terminations sum to {total}, expected {rows_in_chunk}"
        )
    row_of = np.cumsum(runs) - runs
    data = ~is_end
    cols = idx[data].astype(np.int64)
    lo, hi = window * mvpp, (window + 1) * mvpp
    if cols.size and (cols.min() < lo or cols.max() >= hi):
        raise CorruptStreamError(f"window {window}: index outside [{lo}, {hi - 1}]")
    rows = row_of[data]
    if rows.size and rows.max() >= rows_in_chunk:
        raise CorruptStreamError(f"window {window}: nonzero after the final termination")
    return rows, cols, val[data]


def sellpack_decode(img: SellpackImage, cfg: KernelConfig | None = None) -> CsrMatrix:
    """Rebuild the source matrix from a stream image."""
    if cfg is not None and (cfg.max_y_chunk != img.max_y_chunk or cfg.max_v_per_pe != img.max_v_per_pe):
        raise ConfigError("image was encoded with a different max_y_chunk/max_v_per_pe")
    expected_chunks = -(-img.n_rows // img.max_y_chunk) if img.n_rows else 0
    if img.chunk_count != expected_chunks:
        raise CorruptStreamError(f"expected {expected_chunks} chunks, image has {img.chunk_count}")
    all_rows, all_cols, all_bits = [], [], []
    for c, chunk in enumerate(img.chunks):
        rows_c = img.chunk_rows(c)
        for w in range(img.n_windows):
            rows, cols, bits = decode_stream(chunk[w], w, img.max_v_per_pe, rows_c)
            all_rows.append(rows + c * img.max_y_chunk)
            all_cols.append(cols)
            all_bits.append(bits)
    if not all_rows:
        return CsrMatrix(img.n_rows, img.n_cols, np.zeros(img.n_rows + 1), [], [])
    rows = np.concatenate(all_rows)
    cols = np.concatenate(all_cols)
    bits = np.concatenate(all_bits).astype(np.uint32)
    order = np.lexsort((cols, rows))
    rows, cols, bits = rows[order], cols[order], bits[order]
    if rows.size > 1 and np.any((rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])):
        raise CorruptStreamError("duplicate (row, col) entries")
    ptr = np.concatenate(([0], np.cumsum(np.bincount(rows, minlength=img.n_rows))))
    return CsrMatrix(img.n_rows, img.n_cols, ptr, cols, bits.view(np.float32))


def sellpack_stream_stats(img: SellpackImage) -> StreamStats:
    total = nnz = end = null = 0
    for chunk in img.chunks:
        idx = chunk[:, :, 0]
        total += idx.size
        e = int(np.count_nonzero(idx == END_ROW))
        z = int(np.count_nonzero(idx == NULL))
        end += e
        null += z
        nnz += idx.size - e - z
    return StreamStats(total, nnz, end, null)


def stream_lengths(a: CsrMatrix, myc: int, mvpp: int) -> list:
    """Per-chunk arrays of unpadded per-window stream lengths, without building the image."""
    n_windows = -(-a.n_cols // mvpp) if a.n_cols else 0
    out = []
    for c in range(-(-a.n_rows // myc) if a.n_rows else 0):
        rows_c, rows, _, _, windows = _chunk_entries(a, c, myc, mvpp)
        out.append(_stream_layout(rows, windows, n_windows, rows_c)[4])
    return out


# ---------------------------------------------------------------------------
# COO tiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CooTileSet:
    """Grid of NULL-padded COO tiles.

    ``row_idx``, ``col_idx`` and ``values`` have shape
    ``(tile_rows, tile_cols, max_nonzeros)`` and dtype ``uint32``; ``values``
    holds float32 bit patterns. ``counts`` holds the real entry count per tile.
    """

    n: int
    local_height: int
    local_width: int
    max_nonzeros: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        for name in ("row_idx", "col_idx", "values", "counts"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def tile_rows(self) -> int:
        return int(self.row_idx.shape[0])

    @property
    def tile_cols(self) -> int:
        return int(self.row_idx.shape[1])

    @property
    def nnz(self) -> int:
        return int(self.counts.sum())

    def tile(self, r: int, c: int):
        k = int(self.counts[r, c])
        return (self.row_idx[r, c, :k], self.col_idx[r, c, :k],
                self.values[r, c, :k].view(np.float32))

    def entries(self):
        """Global (rows, cols, values) of every real entry, tile by tile."""
        valid = np.arange(self.max_nonzeros)[None, None, :] < self.counts[:, :, None]
        tr, tc, _ = np.nonzero(valid)
        rows = tr.astype(np.int64) * self.local_height + self.row_idx[valid]
        cols = tc.astype(np.int64) * self.local_width + self.col_idx[valid]
        return rows, cols, self.values[valid].view(np.float32)

    def to_csr(self) -> CsrMatrix:
        rows, cols, vals = self.entries()
        return csr_from_coo(self.n, self.n, rows, cols, vals)


def coo_tiles(a: CsrMatrix, cfg: KernelConfig) -> CooTileSet:
    """Split ``a`` into ``local_height x local_width`` COO tiles."""
    if a.n_rows != a.n_cols or a.n_rows != cfg.n:
        raise DimensionError(f"matrix {a.shape} does not match cfg.n={cfg.n}")
    cfg.validate_sddmm()
    lh, lw, mnz = cfg.local_height, cfg.local_width, cfg.max_nonzeros
    tr_n, tc_n = cfg.tile_rows, cfg.tile_cols
    rows = a.row_indices()
    cols = a.col_idx.astype(np.int64)
    key = (rows // lh) * tc_n + cols // lw
    counts = np.bincount(key, minlength=tr_n * tc_n)
    if counts.size and counts.max() > mnz:
        k = int(np.argmax(counts > mnz))
        raise TileOverflowError((k // tc_n, k % tc_n), int(counts[k]), mnz)
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    starts = np.concatenate(([0], np.cumsum(counts)))[:-1]
    slot = np.arange(key_s.size) - starts[key_s]
    shape = (tr_n, tc_n, mnz)
    row_idx = np.full(shape, NULL, dtype=np.uint32)
    col_idx = np.full(shape, NULL, dtype=np.uint32)
    values = np.full(shape, NULL, dtype=np.uint32)
    ti, tj = key_s // tc_n, key_s % tc_n
    row_idx[ti, tj, slot] = rows[order] % lh
    col_idx[ti, tj, slot] = cols[order] % lw
    values[ti, tj, slot] = f32_bits(a.values[order])
    return CooTileSet(cfg.n, lh, lw, mnz, row_idx, col_idx, values,
                      counts.reshape(tr_n, tc_n).astype(np.int64))


def max_tile_count(a: CsrMatrix, local_height: int, local_width: int) -> int:
    """Largest per-tile nonzero count for a given tile shape."""
    if a.nnz == 0:
        return 0
    tc_n = -(-a.n_cols // local_width)
    key = (a.row_indices() // local_height) * tc_n + a.col_idx.astype(np.int64) // local_width
    return int(np.bincount(key).max())
