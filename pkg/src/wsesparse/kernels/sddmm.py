"""SDDMM kernel: placement, host script and both simulation engines.

Grid layout (row, col) for ``Tr x Tc`` tiles:

* north routers at ``(0, 1+c)``, chained west to east and fed one C row per
  step from channel ``N0``;
* west routers at ``(1+r, 0)``, each fed its slice of one B column per step
  from channel ``B{r}``;
* workers at ``(1+r, 1+c)``, draining to the east edge on channel ``E{r}``.

The host issues the B and C copies of a step together, waits on a barrier
raised by the south-east worker, and after the last step reads every output
buffer, NULL padding included, in one copy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from ..config import FabricConfig, KernelConfig
from ..errors import DimensionError, MemoryBudgetError, PlacementError, TileOverflowError
from ..fabric.core import Barrier, D2HCopy, Fabric, H2DCopy, HostSink, Placement, Route
from ..fabric.report import SimReport
from ..formats import NULL, CooTileSet, CsrMatrix, DenseMatrix, coo_tiles, f32_bits, max_tile_count
from .sddmm_programs import STEP_SIGNAL, NorthRouter, SddmmWorker, WestRouter


@dataclass(frozen=True)
class SddmmGeometry:
    n: int
    d: int
    local_height: int
    local_width: int
    max_nonzeros: int
    tile_rows: int
    tile_cols: int
    hop: int
    fmac_cycles: int
    worker_memory: int

    @property
    def grid_shape(self):
        return (1 + self.tile_rows, 1 + self.tile_cols)

    @property
    def worker_count(self) -> int:
        return self.tile_rows * self.tile_cols

    @property
    def pe_count(self) -> int:
        return self.worker_count + self.tile_rows + self.tile_cols


def sddmm_geometry(cfg: KernelConfig, fabric: Optional[FabricConfig] = None) -> SddmmGeometry:
    fabric = fabric or FabricConfig()
    cfg.validate_sddmm()
    tr, tc = cfg.tile_rows, cfg.tile_cols
    if 1 + tr > fabric.grid_rows or 1 + tc > fabric.grid_cols:
        raise PlacementError(
            f"{tr}x{tc} tiles plus router fringes exceed the {fabric.grid_rows}x{fabric.grid_cols} grid"
        )
    mem = 4 * (4 * cfg.max_nonzeros + cfg.local_height + cfg.local_width)
    if mem > fabric.pe_memory_bytes:
        raise MemoryBudgetError((1, 1), mem, fabric.pe_memory_bytes)
    return SddmmGeometry(
        n=cfg.n, d=cfg.d, local_height=cfg.local_height, local_width=cfg.local_width,
        max_nonzeros=cfg.max_nonzeros, tile_rows=tr, tile_cols=tc, hop=fabric.hop_cycles,
        fmac_cycles=fabric.fmac_cycles, worker_memory=mem,
    )


def fit_tiles(a: CsrMatrix, max_nonzeros: int, max_side: int = 64, min_side: int = 1):
    """Largest square power-of-two tile side whose tiles all fit ``max_nonzeros``.

    Returns ``(local_height, local_width)``; raises TileOverflowError when
    even ``min_side`` overflows.
    """
    side = 1 << (max(1, max_side).bit_length() - 1)
    worst = None
    while side >= min_side:
        if a.n_rows % side == 0:
            count = max_tile_count(a, side, side)
            if count <= max_nonzeros:
                return side, side
            worst = ((0, 0), count)
        side //= 2
    count = worst[1] if worst else a.nnz
    raise TileOverflowError((0, 0), count, max_nonzeros)


def build_sddmm(cfg: KernelConfig, a: Optional[CsrMatrix] = None,
                fabric: Optional[FabricConfig] = None, tiles: Optional[CooTileSet] = None,
                geometry: Optional[SddmmGeometry] = None) -> Placement:
    """Place fringe routers and one worker per COO tile of ``a``."""
    geo = geometry or sddmm_geometry(cfg, fabric)
    if tiles is None:
        if a is None:
            a = CsrMatrix(cfg.n, cfg.n, np.zeros(cfg.n + 1, np.int64), np.zeros(0, np.int64),
                          np.zeros(0, np.float32))
        tiles = coo_tiles(a, cfg)
    hop, tr, tc = geo.hop, geo.tile_rows, geo.tile_cols
    lh, lw = geo.local_height, geo.local_width
    pl = Placement(meta={"kernel": "sddmm", "geometry": geo})
    for c in range(tc):
        pl.programs[(0, 1 + c)] = NorthRouter(lw, geo.n - c * lw)
        if c < tc - 1:
            pl.connect((0, 1 + c), "E", (0, 2 + c), "W", hop)
        for r in range(tr):
            pl.connect((0, 1 + c), "S", (1 + r, 1 + c), "N", hop * (1 + r))
    for r in range(tr):
        pl.programs[(1 + r, 0)] = WestRouter()
        pl.h2d_channels[f"B{r}"] = [Route((1 + r, 0), "W", hop)]
        pl.d2h_channels.append(f"E{r}")
        for c in range(tc):
            pl.connect((1 + r, 0), "E", (1 + r, 1 + c), "W", hop * (1 + c))
            coord = (1 + r, 1 + c)
            pl.programs[coord] = SddmmWorker(
                tiles.row_idx[r, c], tiles.col_idx[r, c], tiles.values[r, c],
                tiles.counts[r, c], lh, lw, geo.d,
                signal=(r == tr - 1 and c == tc - 1), fmac_cycles=geo.fmac_cycles,
            )
            pl.sinks[(coord, "host")] = HostSink(f"E{r}", hop * (tc - c), geo.max_nonzeros)
    pl.h2d_channels["N0"] = [Route((0, 1), "W", hop)]
    return pl


def host_script(geo: SddmmGeometry, b: np.ndarray, c: np.ndarray):
    ops = []
    lh = geo.local_height
    for t in range(geo.d):
        col = f32_bits(np.ascontiguousarray(b[:, t]))
        ops.append(H2DCopy(f"b{t}", {f"B{r}": (col[r * lh : (r + 1) * lh], None)
                                     for r in range(geo.tile_rows)}, nonblocking=True))
        ops.append(H2DCopy(f"c{t}", {"N0": (f32_bits(np.ascontiguousarray(c[t])), None)},
                           nonblocking=True))
        ops.append(Barrier(f"step{t}", STEP_SIGNAL, t + 1))
    per_channel = geo.tile_cols * geo.max_nonzeros
    ops.append(D2HCopy("y", {f"E{r}": per_channel for r in range(geo.tile_rows)}, nonblocking=False))
    return ops


def assemble_output(a: CsrMatrix, tiles: CooTileSet, op: D2HCopy) -> CsrMatrix:
    """Rebuild the sampled matrix from the words read back, dropping NULL slots."""
    rows, cols, vals = [], [], []
    lh, lw = tiles.local_height, tiles.local_width
    for ch, recs in op.received.items():
        r = int(ch[1:])
        slot = {}
        for (_, pc), word in recs:
            c = pc - 1
            k = slot.get(c, 0)
            slot[c] = k + 1
            if word == NULL:
                continue
            rows.append(r * lh + int(tiles.row_idx[r, c, k]))
            cols.append(c * lw + int(tiles.col_idx[r, c, k]))
            vals.append(word)
    out = np.zeros(a.nnz, dtype=np.uint32)
    if rows:
        key = np.asarray(rows, np.int64) * a.n_cols + np.asarray(cols, np.int64)
        ref = a.row_indices() * a.n_cols + a.col_idx.astype(np.int64)
        pos = np.searchsorted(ref, key)
        if np.any(pos >= ref.size) or np.any(ref[np.minimum(pos, ref.size - 1)] != key):
            raise DimensionError("device returned entries outside the sampling pattern")
        out[pos] = np.asarray(vals, dtype=np.uint32)
    return a.with_values(out.view(np.float32))


def run_cycle(geo: SddmmGeometry, a: CsrMatrix, tiles: CooTileSet, b, c, cfg,
              fabric_cfg: FabricConfig, trace: Optional[TextIO] = None):
    pl = build_sddmm(cfg, a, fabric_cfg, tiles=tiles, geometry=geo)
    ops = host_script(geo, b, c)
    fab = Fabric(fabric_cfg, trace=trace)
    fab.load_program(pl)
    rep = fab.run(ops)
    return assemble_output(a, tiles, ops[-1]), rep


def _serve_unit(arrival: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Start cycles of unit-service items sorted along the last axis."""
    k = np.arange(arrival.shape[-1], dtype=np.int64)
    return k + np.maximum(free[..., None], np.maximum.accumulate(arrival - k, axis=-1))


def run_stream(geo: SddmmGeometry, a: CsrMatrix, tiles: CooTileSet, b, c):
    """Closed-form timing and vectorized numerics for unbounded FIFOs."""
    h, fc = geo.hop, geo.fmac_cycles
    tr, tc, lh, lw, mnz, n = (geo.tile_rows, geo.tile_cols, geo.local_height,
                              geo.local_width, geo.max_nonzeros, geo.n)
    cc = np.arange(tc, dtype=np.int64)[None, :]
    rr = np.arange(tr, dtype=np.int64)[:, None]
    nnz = tiles.counts.astype(np.int64)
    compute_svc = nnz * fc + 1
    # Sorting 2*arrival + port rank merges the two inputs oldest first, west on ties.
    off_b = 2 * (h * (2 + cc) + np.arange(lh, dtype=np.int64)[:, None, None])
    off_c = 2 * (cc * lw + h * (2 + cc + rr) + np.arange(lw, dtype=np.int64)[:, None, None]) + 1
    keys = np.concatenate([np.broadcast_to(off_b, (lh, tr, tc)), np.broadcast_to(off_c, (lw, tr, tc))])
    merged = np.sort(np.moveaxis(keys, 0, -1), axis=-1) // 2  # (tr, tc, lh+lw), relative to S

    free = np.zeros((tr, tc), dtype=np.int64)
    S = 0
    inject = []
    completes = []
    for _ in range(geo.d):
        p = _serve_unit(merged + S, free)
        free = p[..., -1] + 1 + compute_svc
        inject.append((S, S + n))
        completes += [S + lh, S + n]
        S = max(S + n, int(free[-1, -1]))
        completes.append(S)

    drain = free + nnz * fc + 1
    ready = drain[..., None] + np.arange(mnz, dtype=np.int64) + h * (tc - cc)[..., None]
    order = np.argsort((ready * tc + cc[..., None]).reshape(tr, -1), axis=-1, kind="stable")
    ready = np.take_along_axis(ready.reshape(tr, -1), order, axis=-1)
    m = np.arange(ready.shape[-1], dtype=np.int64)
    reads = m + np.maximum(S, np.maximum.accumulate(ready - m, axis=-1))
    d2h_done = int(reads[:, -1].max()) + 1 if reads.size else S
    completes.append(d2h_done)
    total = int(max(completes + [int((drain + mnz).max())]))

    in_mask = np.zeros(total + 1, dtype=bool)
    for s0, s1 in inject:
        in_mask[s0:s1] = True
    out_mask = np.zeros(total + 1, dtype=bool)
    out_mask[reads.reshape(-1)] = True
    n_in = int(in_mask.sum())
    n_out = int((out_mask & ~in_mask).sum())

    rows = a.row_indices()
    y = np.zeros(a.nnz, dtype=np.float32)
    for t in range(geo.d):
        y = y + b[rows, t] * c[t, a.col_idx]
    y = y * a.values

    busy = {}
    fmacs_by_pe = {}
    worker_busy = geo.d * (lh + lw + compute_svc) + nnz * fc + 1 + mnz
    for r in range(tr):
        busy[(1 + r, 0)] = geo.d * lh
        for col in range(tc):
            busy[(1 + r, 1 + col)] = int(worker_busy[r, col])
            fmacs_by_pe[(1 + r, 1 + col)] = int(nnz[r, col]) * geo.d
    for col in range(tc):
        busy[(0, 1 + col)] = geo.d * (n - col * lw)
    rep = SimReport(
        total_cycles=total, stream_in_cycles=n_in, compute_cycles=total - n_in - n_out,
        stream_out_cycles=n_out, h2d_words=2 * n * geo.d, d2h_words=geo.worker_count * mnz,
        fmacs=int(nnz.sum()) * geo.d, fmuls=int(nnz.sum()),
        peak_pe_memory_bytes=geo.worker_memory, pe_count=geo.pe_count, grid_shape=geo.grid_shape,
        busy_cycles=busy, fmacs_by_pe=fmacs_by_pe, engine="stream",
    )
    return a.with_values(y), rep
