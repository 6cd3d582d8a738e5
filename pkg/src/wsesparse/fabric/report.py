"""Simulation result record."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


@dataclass
class SimReport:
    """Cycle and traffic statistics of one simulated run.

    The three phase counters partition ``total_cycles``: a cycle counts as
    stream-in when any host-to-device word is injected, as stream-out when a
    device-to-host word is read and nothing is injected, and as compute
    otherwise.
    """

    total_cycles: int = 0
    stream_in_cycles: int = 0
    compute_cycles: int = 0
    stream_out_cycles: int = 0
    h2d_words: int = 0
    d2h_words: int = 0
    fmacs: int = 0
    fmuls: int = 0
    peak_pe_memory_bytes: int = 0
    pe_count: int = 0
    grid_shape: tuple = (0, 0)
    busy_cycles: dict = field(default_factory=dict)
    fmacs_by_pe: dict = field(default_factory=dict)
    panel_passes: int = 1
    engine: str = ""
    variant: str = ""
    residual_words: int = 0
    events: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def phases_ok(self) -> bool:
        return self.stream_in_cycles + self.compute_cycles + self.stream_out_cycles == self.total_cycles

    def busy_histogram(self, bins: int = 10):
        """Histogram (counts, edges) of per-PE busy cycles."""
        vals = np.fromiter(self.busy_cycles.values(), dtype=np.int64, count=len(self.busy_cycles))
        if vals.size == 0:
            return np.zeros(bins, dtype=np.int64), np.zeros(bins + 1)
        return np.histogram(vals, bins=bins)

    def merge(self, other: "SimReport") -> "SimReport":
        """Combine two sequential passes (e.g. column panels) into one report."""
        out = SimReport(
            total_cycles=self.total_cycles + other.total_cycles,
            stream_in_cycles=self.stream_in_cycles + other.stream_in_cycles,
            compute_cycles=self.compute_cycles + other.compute_cycles,
            stream_out_cycles=self.stream_out_cycles + other.stream_out_cycles,
            h2d_words=self.h2d_words + other.h2d_words,
            d2h_words=self.d2h_words + other.d2h_words,
            fmacs=self.fmacs + other.fmacs,
            fmuls=self.fmuls + other.fmuls,
            peak_pe_memory_bytes=max(self.peak_pe_memory_bytes, other.peak_pe_memory_bytes),
            pe_count=max(self.pe_count, other.pe_count),
            grid_shape=tuple(max(a, b) for a, b in zip(self.grid_shape, other.grid_shape)),
            panel_passes=self.panel_passes + other.panel_passes,
            engine=self.engine or other.engine,
            variant=self.variant or other.variant,
            residual_words=self.residual_words + other.residual_words,
        )
        for src in (self.busy_cycles, other.busy_cycles):
            for k, v in src.items():
                out.busy_cycles[k] = out.busy_cycles.get(k, 0) + v
        for src in (self.fmacs_by_pe, other.fmacs_by_pe):
            for k, v in src.items():
                out.fmacs_by_pe[k] = out.fmacs_by_pe.get(k, 0) + v
        out.extra = {**self.extra, **other.extra}
        return out

    def cycles_dict(self) -> dict:
        return {
            "in": self.stream_in_cycles,
            "compute": self.compute_cycles,
            "out": self.stream_out_cycles,
            "total": self.total_cycles,
        }

    def to_dict(self, include_pe_stats: bool = False) -> dict:
        d = {
            "engine": self.engine,
            "variant": self.variant,
            "cycles": self.cycles_dict(),
            "h2d_words": self.h2d_words,
            "d2h_words": self.d2h_words,
            "fmacs": self.fmacs,
            "fmuls": self.fmuls,
            "peak_pe_memory_bytes": self.peak_pe_memory_bytes,
            "pe_count": self.pe_count,
            "grid_shape": list(self.grid_shape),
            "panel_passes": self.panel_passes,
            "residual_words": self.residual_words,
        }
        counts, edges = self.busy_histogram()
        d["busy_histogram"] = {"counts": counts.tolist(), "edges": [float(e) for e in edges]}
        if include_pe_stats:
            d["busy_cycles"] = {f"{r},{c}": v for (r, c), v in sorted(self.busy_cycles.items())}
        d.update({k: v for k, v in self.extra.items() if _jsonable(v)})
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), sort_keys=True)


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False
