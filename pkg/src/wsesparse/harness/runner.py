"""Execution of single sweep points into flat, JSON-ready run records."""
from __future__ import annotations

from functools import lru_cache

from ..footprint import random_footprint
from ..kernels import fit_tiles, sddmm, spmm
from ..oracle import checksum, compare, random_dense, random_sparse, sddmm_ref, spmm_ref
from .sweep import SweepSpec, default_tile_side, sddmm_config, spmm_config

# Seed offsets deriving dense operands from the point seed.
H_SEED, B_SEED, C_SEED = 1, 2, 3


@lru_cache(maxsize=2)
def sparse_operand(n: int, density: float, seed: int):
    return random_sparse(n, density, seed)


@lru_cache(maxsize=2)
def dense_operand(rows: int, cols: int, seed: int):
    return random_dense(rows, cols, seed)


@lru_cache(maxsize=2)
def spmm_oracle(n: int, density: float, d: int, seed: int):
    return spmm_ref(sparse_operand(n, density, seed), dense_operand(n, d, seed + H_SEED))


def _cycle_fields(rep) -> dict:
    return {
        "cycles": rep.cycles_dict(),
        "h2d_words": rep.h2d_words,
        "d2h_words": rep.d2h_words,
        "fmacs": rep.fmacs,
        "engine": rep.engine,
    }


def run_spmm_point(pt: dict, spec: SweepSpec, trace=None) -> dict:
    cfg = spmm_config(pt)
    a = sparse_operand(pt["n"], pt["density"], pt["seed"])
    h = dense_operand(pt["n"], pt["d"], pt["seed"] + H_SEED)
    y, rep = spmm(pt["variant"], a, h, cfg, spec.fabric(), engine=spec.engine, trace=trace)
    rec = {
        "kind": "spmm", "variant": pt["variant"], "n": pt["n"], "d": pt["d"],
        "density": pt["density"], "seed": pt["seed"], "nnz": a.nnz, "myc": pt["myc"],
        "mvpp": pt["mvpp"], "mcpp": pt["mcpp"], "io_channels": rep.extra.get("h2d_channels"),
        **_cycle_fields(rep),
        "oracle_pass": None,
        "checksum": checksum(y),
    }
    if spec.verify:
        rec["oracle_pass"] = compare(y, spmm_oracle(pt["n"], pt["density"], pt["d"], pt["seed"])).passed
    return rec


def run_sddmm_point(pt: dict, spec: SweepSpec, trace=None) -> dict:
    a = sparse_operand(pt["n"], pt["density"], pt["seed"])
    b = dense_operand(pt["n"], pt["d"], pt["seed"] + B_SEED)
    c = dense_operand(pt["d"], pt["n"], pt["seed"] + C_SEED)
    side = pt["local_size"]
    if side is None:
        side, _ = fit_tiles(a, pt["mnz"], max_side=default_tile_side(pt["n"]))
    cfg = sddmm_config(pt, side)
    y, rep = sddmm(a, b, c, cfg, spec.fabric(), engine=spec.engine, trace=trace)
    rec = {
        "kind": "sddmm", "variant": "sddmm", "n": pt["n"], "d": pt["d"],
        "density": pt["density"], "seed": pt["seed"], "nnz": a.nnz, "mnz": pt["mnz"],
        "local_height": side, "local_width": side,
        **_cycle_fields(rep),
        "oracle_pass": None,
        "checksum": checksum(y),
    }
    if spec.verify:
        rec["oracle_pass"] = compare(y, sddmm_ref(a, b, c)).passed
    return rec


def run_footprint_point(pt: dict, spec: SweepSpec) -> list:
    recs = random_footprint(pt["n"], pt["density"], pt["seed"], spec.myc, mvpp=pt["mvpp"])
    return [{"kind": "footprint", **r.to_dict()} for r in recs]


def run_point(pt: dict, spec: SweepSpec, trace=None) -> list:
    if pt["kind"] == "footprint":
        return run_footprint_point(pt, spec)
    if pt["kind"] == "spmm":
        return [run_spmm_point(pt, spec, trace)]
    return [run_sddmm_point(pt, spec, trace)]
