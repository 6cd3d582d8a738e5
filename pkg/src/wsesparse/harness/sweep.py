"""Sweep specifications: parameter axes and their validated cross-product."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional

from ..config import FabricConfig, KernelConfig
from ..errors import ConfigError, WseSimError
from ..kernels.sddmm import sddmm_geometry
from ..kernels.spmm import VARIANTS, spmm_geometry

KINDS = ("footprint", "spmm", "sddmm")

# Default grids per kind, used by ``sweep`` when an axis is not given.
DEFAULT_AXES = {
    "footprint": {"n": [2048, 4096, 8192, 16384, 32768, 65536],
                  "density": [1e-4, 1e-3, 1e-2, 1e-1, 0.3], "myc": [256, 1024]},
    "spmm": {"n": [2048, 4096], "density": [1e-4, 1e-3, 1e-2, 1e-1, 0.3], "d": [256],
             "myc": [512, 2048]},
    "sddmm": {"n": [2048, 4096], "density": [1e-4, 1e-3, 1e-2, 1e-1, 0.3], "d": [2],
              "mnz": [512, 1024]},
}


@dataclass
class SweepSpec:
    """Axes of a sweep. Every list is one axis of the cross-product."""

    kind: str = "spmm"
    n: List[int] = field(default_factory=lambda: [1024])
    density: List[float] = field(default_factory=lambda: [0.05])
    myc: List[int] = field(default_factory=lambda: [64])
    mvpp: List[int] = field(default_factory=lambda: [64])
    mcpp: List[int] = field(default_factory=lambda: [1])
    mnz: List[int] = field(default_factory=lambda: [512])
    d: List[int] = field(default_factory=lambda: [256])
    seeds: List[int] = field(default_factory=lambda: [0])
    variants: List[str] = field(default_factory=lambda: list(VARIANTS))
    io_channels: Optional[int] = None
    local_size: Optional[int] = None
    engine: str = "stream"
    fifo_capacity: Optional[int] = None
    verify: bool = False
    out: Optional[str] = None
    fmt: str = "json"

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        spec = cls(**data)
        for name in ("n", "density", "myc", "mvpp", "mcpp", "mnz", "d", "seeds", "variants"):
            v = getattr(spec, name)
            if not isinstance(v, (list, tuple)):
                setattr(spec, name, [v])
        return spec

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def fabric(self) -> FabricConfig:
        if self.engine == "stream":
            return FabricConfig(fifo_capacity=None)
        return FabricConfig(fifo_capacity=self.fifo_capacity or FabricConfig().fifo_capacity)

    def points(self) -> list:
        """Every run point as a dict, in axis order."""
        if self.kind == "footprint":
            return [dict(kind="footprint", n=n, density=p, mvpp=v, seed=s)
                    for n, p, v, s in itertools.product(self.n, self.density, self.mvpp, self.seeds)]
        if self.kind == "spmm":
            return [dict(kind="spmm", n=n, density=p, d=d, myc=m, mvpp=v, mcpp=c, seed=s,
                         variant=var, io_channels=self.io_channels)
                    for n, p, d, m, v, c, s, var in itertools.product(
                        self.n, self.density, self.d, self.myc, self.mvpp, self.mcpp,
                        self.seeds, self.variants)]
        return [dict(kind="sddmm", n=n, density=p, d=d, mnz=z, seed=s, local_size=self.local_size)
                for n, p, d, z, s in itertools.product(self.n, self.density, self.d, self.mnz, self.seeds)]

    def validate(self) -> list:
        """Check every point before anything runs; returns the points."""
        if self.kind not in KINDS:
            raise ConfigError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.fmt not in ("json", "csv"):
            raise ConfigError(f"unknown format {self.fmt!r}")
        if self.engine not in ("stream", "cycle"):
            raise ConfigError(f"unknown engine {self.engine!r}")
        for p in self.density:
            if not 0.0 < float(p) <= 1.0:
                raise ConfigError(f"density must lie in (0, 1], got {p}")
        for s in self.seeds:
            if int(s) < 0:
                raise ConfigError(f"seeds must be non-negative, got {s}")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; expected a subset of {VARIANTS}")
        if self.kind == "footprint":
            for n, m, v in itertools.product(self.n, self.myc, self.mvpp):
                KernelConfig(n=n, max_y_chunk=m, max_v_per_pe=v)
            return self.points()
        fabric = self.fabric()
        pts = self.points()
        for pt in pts:
            try:
                if pt["kind"] == "spmm":
                    cfg = spmm_config(pt)
                    spmm_geometry(pt["variant"], cfg, fabric)
                else:
                    side = pt["local_size"] or default_tile_side(pt["n"])
                    sddmm_geometry(sddmm_config(pt, side), fabric)
            except WseSimError as exc:
                raise ConfigError(f"{_label(pt)}: {exc}") from exc
        return pts


def spmm_config(pt: dict) -> KernelConfig:
    return KernelConfig(n=pt["n"], d=pt["d"], max_y_chunk=pt["myc"], max_v_per_pe=pt["mvpp"],
                        max_col_per_pe=pt["mcpp"], io_channels=pt.get("io_channels"))


def sddmm_config(pt: dict, side: int) -> KernelConfig:
    return KernelConfig(n=pt["n"], d=pt["d"], max_nonzeros=pt["mnz"],
                        local_height=side, local_width=side)


def _label(pt: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in pt.items() if v is not None)


def default_tile_side(n: int, max_side: int = 64) -> int:
    """Largest power of two up to ``max_side`` dividing ``n``."""
    side = max_side
    while side > 1 and n % side:
        side //= 2
    return side
