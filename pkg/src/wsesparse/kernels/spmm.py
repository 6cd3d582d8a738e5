"""SpMM kernel variants: geometry, placement, host scripts and the driver.

Grid layout (row, col):

* routers in column 0, rows ``0..R-1``;
* workers at ``(r, 1+j)`` for ``j < W = d / mcpp``;
* accumulators below the workers: one row for V1/V2, one row per chunk for V3.

V1 feeds router 0 through a single channel. V2/V3 split the routers into
``C`` contiguous groups, each fed by its own channel that round-robins the
group's streams pair by pair. Routes carry latencies in hops scaled by
``hop_cycles``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..config import FabricConfig, KernelConfig
from ..errors import ConfigError, DimensionError, MemoryBudgetError, PlacementError
from ..fabric.core import D2HCopy, Fabric, H2DCopy, HostSink, Placement, Route
from ..fabric.report import SimReport
from ..formats import END_ROW, CsrMatrix, DenseMatrix, SellpackImage, encode_streams, f32_bits
from .spmm_programs import Accumulator, RouterV1, RouterV2, SpmmWorker

VARIANTS = ("v1", "v2", "v3")


def _variant(v) -> str:
    v = str(v).lower()
    if v not in VARIANTS:
        raise ConfigError(f"unknown SpMM variant {v!r}; expected one of {VARIANTS}")
    return v


@dataclass(frozen=True)
class SpmmGeometry:
    """Placement facts shared by both simulation engines."""

    variant: str
    n: int
    d: int
    worker_rows: int
    worker_cols: int
    max_y_chunk: int
    max_v_per_pe: int
    max_col_per_pe: int
    panel_width: int
    panel_count: int
    chunk_rows: tuple
    acc_rows: int
    groups: tuple
    hop: int
    fmac_cycles: int
    worker_memory: int
    acc_memory: int

    @property
    def grid_shape(self):
        return (self.worker_rows + self.acc_rows, 1 + self.worker_cols)

    @property
    def pe_count(self):
        return self.worker_rows * (1 + self.worker_cols) + self.acc_rows * self.worker_cols

    @property
    def channels(self) -> int:
        return len(self.groups)


def spmm_geometry(variant, cfg: KernelConfig, fabric: Optional[FabricConfig] = None) -> SpmmGeometry:
    """Validate a configuration against the grid and PE memory, and lay it out."""
    variant = _variant(variant)
    fabric = fabric or FabricConfig()
    cfg.validate_spmm()
    if cfg.n < 1:
        raise ConfigError("n must be >= 1")
    R, W, myc = cfg.worker_rows, cfg.worker_cols, cfg.max_y_chunk
    chunk_rows = tuple(cfg.chunk_rows(c) for c in range(cfg.chunk_count))
    acc_rows = len(chunk_rows) if variant == "v3" else 1
    if 1 + W > fabric.grid_cols:
        raise PlacementError(
            f"{W} worker columns plus the router column exceed the grid width "
            f"{fabric.grid_cols}; raise max_col_per_pe"
        )
    if R + acc_rows > fabric.grid_rows:
        if variant == "v3":
            need = math.ceil(cfg.n / max(1, fabric.grid_rows - R))
            hint = 1 << max(0, (need - 1).bit_length())
            raise PlacementError(
                f"V3 needs {acc_rows} accumulator rows below {R} worker rows but the grid "
                f"has {fabric.grid_rows} rows; raise max_y_chunk to at least {hint}"
            )
        raise PlacementError(f"{R} worker rows do not fit {fabric.grid_rows} grid rows")
    mcpp = cfg.max_col_per_pe
    worker_mem = 4 * (myc * mcpp + cfg.max_v_per_pe * mcpp)
    acc_mem = 4 * myc * mcpp
    if worker_mem > fabric.pe_memory_bytes:
        raise MemoryBudgetError((0, 1), worker_mem, fabric.pe_memory_bytes)
    if variant == "v1":
        groups = (tuple(range(R)),)
    else:
        groups = tuple(tuple(int(r) for r in g) for g in np.array_split(np.arange(R), cfg.channel_count))
    return SpmmGeometry(
        variant=variant, n=cfg.n, d=cfg.d, worker_rows=R, worker_cols=W,
        max_y_chunk=myc, max_v_per_pe=cfg.max_v_per_pe, max_col_per_pe=mcpp,
        panel_width=cfg.max_rows, panel_count=cfg.panel_count, chunk_rows=chunk_rows,
        acc_rows=acc_rows, groups=groups, hop=fabric.hop_cycles,
        fmac_cycles=fabric.fmac_cycles, worker_memory=worker_mem, acc_memory=acc_mem,
    )


def _h_slices(geo: SpmmGeometry, h_panel: Optional[np.ndarray]):
    """Per-worker H slices of shape (mvpp, mcpp), zero padded past the matrix edge."""
    R, W, mvpp, mcpp = geo.worker_rows, geo.worker_cols, geo.max_v_per_pe, geo.max_col_per_pe
    full = np.zeros((R * mvpp, W * mcpp), dtype=np.float32)
    if h_panel is not None:
        full[: h_panel.shape[0]] = h_panel
    return full.reshape(R, mvpp, W, mcpp).transpose(0, 2, 1, 3)


def build_spmm(variant, cfg: KernelConfig, h=None, fabric: Optional[FabricConfig] = None,
               geometry: Optional[SpmmGeometry] = None) -> Placement:
    """Place routers, workers and accumulators for one SpMM variant.

    ``h`` (the panel of H matching the routers' windows) is preloaded into the
    workers; without it they hold zeros.
    """
    geo = geometry or spmm_geometry(variant, cfg, fabric)
    hop = geo.hop
    R, W, myc, mvpp = geo.worker_rows, geo.worker_cols, geo.max_y_chunk, geo.max_v_per_pe
    h_arr = None if h is None else (h.data if isinstance(h, DenseMatrix) else np.asarray(h, np.float32))
    xs = _h_slices(geo, h_arr)
    pl = Placement(meta={"variant": geo.variant, "geometry": geo})
    v3 = geo.variant == "v3"

    for r in range(R):
        first, last = r * mvpp, (r + 1) * mvpp - 1
        if geo.variant == "v1":
            pl.programs[(r, 0)] = RouterV1(first, last, has_south=r < R - 1)
            if r < R - 1:
                pl.connect((r, 0), "S", (r + 1, 0), "N", hop)
        else:
            pl.programs[(r, 0)] = RouterV2(first, last)
        for j in range(W):
            pl.connect((r, 0), "E", (r, 1 + j), "W", hop * (1 + j))
            last_row = r == R - 1
            if last_row and v3:
                south = lambda chunk: f"acc{chunk}"
            else:
                south = lambda chunk: "S"
            pl.programs[(r, 1 + j)] = SpmmWorker(
                xs[r, j], geo.chunk_rows, top=r == 0, max_y_chunk=myc,
                south_port=south, fmac_cycles=geo.fmac_cycles,
            )
            if not last_row:
                pl.connect((r, 1 + j), "S", (r + 1, 1 + j), "N", hop)
            elif v3:
                for k in range(geo.acc_rows):
                    pl.connect((r, 1 + j), f"acc{k}", (R + k, 1 + j), "N", hop * (1 + k))
            else:
                pl.connect((r, 1 + j), "S", (R, 1 + j), "N", hop)

    for k in range(geo.acc_rows):
        ch = f"E{k}"
        pl.d2h_channels.append(ch)
        for j in range(W):
            coord = (R + k, 1 + j)
            pl.programs[coord] = Accumulator(myc, geo.max_col_per_pe)
            pl.sinks[(coord, "host")] = HostSink(ch, hop * (W - j), myc * geo.max_col_per_pe)

    if geo.variant == "v1":
        pl.h2d_channels["W0"] = [Route((0, 0), "W", hop)]
    else:
        for g, grp in enumerate(geo.groups):
            entry = grp[0]
            pl.h2d_channels[f"W{g}"] = [Route((r, 0), "W", hop * (1 + r - entry)) for r in grp]
    return pl


def build_spmm_v1(cfg: KernelConfig, h=None, fabric=None) -> Placement:
    return build_spmm("v1", cfg, h, fabric)


def build_spmm_v2(cfg: KernelConfig, h=None, fabric=None) -> Placement:
    return build_spmm("v2", cfg, h, fabric)


def build_spmm_v3(cfg: KernelConfig, h=None, fabric=None) -> Placement:
    return build_spmm("v3", cfg, h, fabric)


# ---------------------------------------------------------------------------
# host-side stream construction
# ---------------------------------------------------------------------------


def csr_chunk_stream(a: CsrMatrix, r0: int, r1: int) -> np.ndarray:
    """Interleaved (col, value) words of rows ``[r0, r1)``, one (END_ROW, 1) pair per row."""
    lo, hi = int(a.row_ptr[r0]), int(a.row_ptr[r1])
    rows = r1 - r0
    counts = np.diff(a.row_ptr[r0 : r1 + 1])
    out = np.empty(2 * (hi - lo + rows), dtype=np.uint32)
    local_rows = np.repeat(np.arange(rows), counts)
    pos = 2 * (np.arange(hi - lo) + local_rows)
    out[pos] = a.col_idx[lo:hi]
    out[pos + 1] = f32_bits(a.values[lo:hi])
    end_pos = 2 * (np.cumsum(counts) + np.arange(rows))
    out[end_pos] = END_ROW
    out[end_pos + 1] = 1
    return out


def group_stream(chunk: np.ndarray, group) -> tuple:
    """Round-robin the group's streams pair by pair; returns (words, route index per word)."""
    g = len(group)
    sub = chunk[list(group)]  # (g, L, 2)
    L = sub.shape[1]
    words = np.ascontiguousarray(sub.transpose(1, 0, 2)).reshape(-1)
    targets = np.repeat(np.tile(np.arange(g), L), 2)
    return words, targets


def host_script(geo: SpmmGeometry, a_panel: CsrMatrix, image: Optional[SellpackImage]):
    """Ordered copy operations for one pass."""
    ops = []
    d = geo.d
    for c, rows in enumerate(geo.chunk_rows):
        r0 = c * geo.max_y_chunk
        if geo.variant == "v1":
            streams = {"W0": (csr_chunk_stream(a_panel, r0, r0 + rows), None)}
        else:
            streams = {f"W{g}": group_stream(image.chunks[c], grp) for g, grp in enumerate(geo.groups)}
        ops.append(H2DCopy(f"h2d{c}", streams, nonblocking=True))
        if geo.variant != "v3":
            ops.append(D2HCopy(f"d2h{c}", {"E0": rows * d}, nonblocking=True))
    if geo.variant == "v3":
        ops.append(D2HCopy("d2h", {f"E{k}": rows * d for k, rows in enumerate(geo.chunk_rows)},
                           nonblocking=False))
    return ops


def _assemble(geo: SpmmGeometry, ops) -> np.ndarray:
    """Place words read by the host into Y using their source accumulator column."""
    y = np.zeros((geo.n, geo.d), dtype=np.float32)
    mcpp = geo.max_col_per_pe
    for op in ops:
        if not isinstance(op, D2HCopy):
            continue
        for ch, recs in op.received.items():
            if geo.variant == "v3":
                chunk = int(ch[1:])
            else:
                chunk = int(op.name[3:])
            r0 = chunk * geo.max_y_chunk
            seen = {}
            for (row, col), word in recs:
                j = col - 1
                k = seen.get(j, 0)
                seen[j] = k + 1
                y[r0 + k // mcpp, j * mcpp + k % mcpp] = np.uint32(word).view(np.float32)
    return y


# ---------------------------------------------------------------------------
# panels
# ---------------------------------------------------------------------------


def iter_panels(a: CsrMatrix, h: np.ndarray, cfg: KernelConfig):
    """Column panels of A (width ``max_rows``) with the matching rows of H."""
    width = cfg.max_rows
    for p in range(cfg.panel_count):
        c0 = p * width
        c1 = min(cfg.n, c0 + width)
        if cfg.panel_count == 1:
            a_p = a
        else:
            sub = a.column_panel(c0, c1)
            a_p = CsrMatrix(sub.n_rows, width, sub.row_ptr, sub.col_idx, sub.values)
        yield p, a_p, h[c0:c1]


def check_operands(a: CsrMatrix, h, cfg: KernelConfig) -> np.ndarray:
    h_arr = h.data if isinstance(h, DenseMatrix) else np.asarray(h, dtype=np.float32)
    if a.n_rows != a.n_cols:
        raise DimensionError(f"A must be square, got {a.shape}")
    if a.n_rows != cfg.n:
        raise DimensionError(f"A is {a.shape} but cfg.n={cfg.n}")
    if h_arr.ndim != 2 or h_arr.shape != (cfg.n, cfg.d):
        raise DimensionError(f"H must be {cfg.n}x{cfg.d}, got {h_arr.shape}")
    return h_arr


def run_cycle_pass(geo, a_panel, h_panel, cfg, fabric_cfg, trace=None):
    pl = build_spmm(geo.variant, cfg, h_panel, fabric_cfg, geometry=geo)
    image = None if geo.variant == "v1" else encode_streams(a_panel, geo.max_y_chunk, geo.max_v_per_pe)
    ops = host_script(geo, a_panel, image)
    fab = Fabric(fabric_cfg, trace=trace)
    fab.load_program(pl)
    rep = fab.run(ops)
    return _assemble(geo, ops), rep
