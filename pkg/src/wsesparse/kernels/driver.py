"""Host drivers running the kernels on either simulation engine."""
from __future__ import annotations

from typing import Optional, TextIO

import numpy as np

from ..config import FabricConfig, KernelConfig
from ..fabric.report import SimReport
from ..errors import ConfigError, DimensionError
from ..formats import CsrMatrix, DenseMatrix, coo_tiles, encode_streams
from . import sddmm as _sddmm
from . import spmm as _spmm
from .spmm_stream import run_stream_pass

ENGINES = ("stream", "cycle")


def resolve_engine(engine: str, fabric: Optional[FabricConfig]) -> FabricConfig:
    """Default fabric settings per engine; the stream engine needs unbounded FIFOs."""
    if engine not in ENGINES:
        raise ConfigError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    if engine == "stream":
        fabric = fabric or FabricConfig(fifo_capacity=None)
        if fabric.fifo_capacity is not None:
            raise ConfigError(
                "the stream engine models unbounded FIFOs; use engine='cycle' for "
                f"fifo_capacity={fabric.fifo_capacity}"
            )
        if fabric.channel_bandwidth != 1:
            raise ConfigError("the stream engine models one word per cycle per channel")
        return fabric
    return fabric or FabricConfig()


def spmm(variant, a: CsrMatrix, h, cfg: KernelConfig, fabric: Optional[FabricConfig] = None,
         engine: str = "stream", trace: Optional[TextIO] = None):
    """Run one SpMM variant; returns ``(Y, SimReport)``.

    Matrices wider than ``max_rows`` run as column panels whose partial
    outputs the host adds in panel order.
    """
    fabric = resolve_engine(engine, fabric)
    h_arr = _spmm.check_operands(a, h, cfg)
    geo = _spmm.spmm_geometry(variant, cfg, fabric)
    y = None
    report = None
    for p, a_p, h_p in _spmm.iter_panels(a, h_arr, cfg):
        if engine == "cycle":
            y_p, rep = _spmm.run_cycle_pass(geo, a_p, h_p, cfg, fabric, trace)
        else:
            image = None if geo.variant == "v1" else encode_streams(a_p, geo.max_y_chunk, geo.max_v_per_pe)
            y_p, rep = run_stream_pass(geo, a_p, h_p, image)
        y = y_p if y is None else y + y_p
        report = rep if report is None else report.merge(rep)
    report.variant = geo.variant
    report.engine = engine
    report.extra.update(
        {
            "worker_rows": geo.worker_rows,
            "worker_cols": geo.worker_cols,
            "chunks": len(geo.chunk_rows),
            "h2d_channels": 1 if geo.variant == "v1" else geo.channels,
            "d2h_channels": geo.acc_rows,
        }
    )
    return DenseMatrix(y), report


def _dense(x) -> np.ndarray:
    arr = x.data if isinstance(x, DenseMatrix) else np.asarray(x, dtype=np.float32)
    return arr.astype(np.float32, copy=False)


def sddmm(a: CsrMatrix, b, c, cfg: KernelConfig, fabric: Optional[FabricConfig] = None,
          engine: str = "stream", trace: Optional[TextIO] = None):
    """Run the SDDMM kernel ``(B @ C) * A`` sampled at A's pattern; returns ``(Y, SimReport)``."""
    fabric = resolve_engine(engine, fabric)
    b_arr, c_arr = _dense(b), _dense(c)
    if a.n_rows != a.n_cols or a.n_rows != cfg.n:
        raise DimensionError(f"A is {a.shape} but cfg.n={cfg.n}")
    if b_arr.shape != (cfg.n, cfg.d):
        raise DimensionError(f"B must be {cfg.n}x{cfg.d}, got {b_arr.shape}")
    if c_arr.shape != (cfg.d, cfg.n):
        raise DimensionError(f"C must be {cfg.d}x{cfg.n}, got {c_arr.shape}")
    geo = _sddmm.sddmm_geometry(cfg, fabric)
    tiles = coo_tiles(a, cfg)
    if engine == "cycle":
        y, rep = _sddmm.run_cycle(geo, a, tiles, b_arr, c_arr, cfg, fabric, trace)
    else:
        y, rep = _sddmm.run_stream(geo, a, tiles, b_arr, c_arr)
    rep.variant = "sddmm"
    rep.engine = engine
    rep.extra.update({
        "tile_rows": geo.tile_rows,
        "tile_cols": geo.tile_cols,
        "local_height": geo.local_height,
        "local_width": geo.local_width,
        "max_nonzeros": geo.max_nonzeros,
        "h2d_channels": geo.tile_rows + 1,
        "d2h_channels": geo.tile_rows,
    })
    return y, rep
