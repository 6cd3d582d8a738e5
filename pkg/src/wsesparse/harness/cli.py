"""Command-line front end: footprint counts, kernel runs and parameter sweeps.

Examples::

    wsesparse footprint --n 65536 --density 1e-4,1e-2 --myc 256,1024 --format csv
    wsesparse footprint --table1
    wsesparse spmm --variant v1,v2,v3 --n 1024 --density 0.05 --verify
    wsesparse sddmm --n 1024 --d 2 --mnz 512 --verify
    wsesparse sweep --kind spmm --config grid.json --out results.csv --format csv
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor

from ..errors import WseSimError
from ..footprint import table1_rows
from .runner import run_point
from .sweep import DEFAULT_AXES, KINDS, SweepSpec

log = logging.getLogger("wsesparse")

OUT_ENV = "WSESPARSE_OUT"

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2

_AXES = {
    "n": int, "density": float, "myc": int, "mvpp": int, "mcpp": int,
    "mnz": int, "d": int, "seed": int,
}


def _list_of(conv):
    def parse(text: str):
        try:
            return [conv(tok) for tok in text.split(",") if tok.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    parse.__name__ = f"list[{conv.__name__}]"
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    for name, conv in _AXES.items():
        common.add_argument(f"--{name}", type=_list_of(conv), default=None,
                            help=f"comma-separated {name} values")
    common.add_argument("--repeat", type=int, default=None,
                        help="runs per seed; seeds become seed..seed+repeat-1")
    common.add_argument("--variant", type=_list_of(str), default=None, help="SpMM variants, e.g. v1,v3")
    common.add_argument("--io-channels", type=int, default=None, help="V2/V3 host channel count")
    common.add_argument("--local-size", type=int, default=None,
                        help="SDDMM tile side; default fits the largest power of two up to 64")
    common.add_argument("--engine", choices=("stream", "cycle"), default=None)
    common.add_argument("--fifo-capacity", type=int, default=None, help="cycle engine FIFO depth")
    common.add_argument("--verify", action="store_true", help="compare against the oracle")
    common.add_argument("--out", default=None, help=f"output file (default: ${OUT_ENV}/<kind>.<fmt> or stdout)")
    common.add_argument("--format", dest="fmt", choices=("csv", "json"), default=None)
    common.add_argument("--trace", default=None, help="wavelet trace CSV (cycle engine, single run)")
    common.add_argument("--config", default=None, help="JSON file with SweepSpec fields")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wsesparse", description="Sparse kernel simulator harness")
    sub = parser.add_subparsers(dest="command", required=True)
    fp = sub.add_parser("footprint", parents=[common], help="stream footprint counts")
    fp.add_argument("--table1", action="store_true", help="graph-dataset CSR/dense footprints")
    sub.add_parser("spmm", parents=[common], help="run SpMM variants")
    sub.add_parser("sddmm", parents=[common], help="run SDDMM")
    sw = sub.add_parser("sweep", parents=[common], help="default grid per kind, overridable")
    sw.add_argument("--kind", choices=KINDS, default="spmm")
    return parser


def spec_from_args(args) -> SweepSpec:
    kind = args.kind if args.command == "sweep" else args.command
    data = {"kind": kind}
    if kind == "sddmm":
        data["d"] = [2]
    elif kind == "footprint":
        data["myc"] = [256, 1024]
    if args.command == "sweep":
        data.update(DEFAULT_AXES[kind])
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
        data["kind"] = kind
    for name in _AXES:
        val = getattr(args, name)
        if val is not None:
            data["seeds" if name == "seed" else name] = val
    if args.repeat is not None:
        base = data.get("seeds", [0])
        data["seeds"] = [s + i for s in base for i in range(args.repeat)]
    if args.variant is not None:
        data["variants"] = [v.lower() for v in args.variant]
    for name in ("io_channels", "local_size", "engine", "fifo_capacity", "out", "fmt"):
        val = getattr(args, name)
        if val is not None:
            data[name] = val
    if args.verify:
        data["verify"] = True
    return SweepSpec.from_dict(data)


def _flatten(rec: dict) -> dict:
    out = {}
    for k, v in rec.items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                out[f"{k}_{kk}"] = vv
        else:
            out[k] = v
    return out


def render(records: list, fmt: str) -> str:
    if fmt == "json":
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    rows = [_flatten(r) for r in records]
    rows.sort(key=lambda r: (r.get("n", 0), r.get("density", 0.0), r.get("myc", 0)))
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _destination(spec: SweepSpec):
    if spec.out:
        return spec.out
    root = os.environ.get(OUT_ENV)
    if root:
        os.makedirs(root, exist_ok=True)
        return os.path.join(root, f"{spec.kind}.{spec.fmt}")
    return None


def _run_one(job):
    pt, spec = job
    return run_point(pt, spec)


def execute(spec: SweepSpec, trace_path=None, jobs: int = 1) -> list:
    """Validate the whole sweep, then run it; records come back in point order."""
    points = spec.validate()
    if trace_path:
        if spec.engine != "cycle" or len(points) != 1:
            raise WseSimError("--trace needs --engine cycle and exactly one run")
        with open(trace_path, "w") as fh:
            fh.write("cycle,pe_row,pe_col,port,word_hex,task\n")
            return run_point(points[0], spec, trace=fh)
    records = []
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_run_one, [(p, spec) for p in points]):
                records += recs
    else:
        for i, pt in enumerate(points):
            log.info("point %d/%d %s", i + 1, len(points), pt)
            records += run_point(pt, spec)
    return records


def verification_failures(records: list) -> list:
    """Records failing the oracle, plus SpMM groups whose variants disagree."""
    bad = [r for r in records if r.get("oracle_pass") is False]
    groups = defaultdict(set)
    for r in records:
        if r.get("kind") == "spmm":
            key = tuple(r[k] for k in ("n", "density", "d", "seed", "myc", "mvpp", "mcpp"))
            groups[key].add(r["checksum"])
    bad += [{"kind": "spmm", "group": list(k), "checksums": sorted(v)}
            for k, v in groups.items() if len(v) > 1]
    return bad


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "footprint" and args.table1:
        fmt = args.fmt or "json"
        text = render(table1_rows(), fmt) if fmt == "json" else _table1_csv()
        _emit(text, args.out or _destination(SweepSpec(kind="footprint", fmt=fmt)))
        return EXIT_OK
    try:
        spec = spec_from_args(args)
        records = execute(spec, args.trace, args.jobs)
    except (WseSimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(render(records, spec.fmt), _destination(spec))
    if spec.verify:
        bad = verification_failures(records)
        if bad:
            for b in bad:
                print(f"verification failed: {json.dumps(b, sort_keys=True)}", file=sys.stderr)
            return EXIT_VERIFY
    return EXIT_OK


def _table1_csv() -> str:
    rows = table1_rows()
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w") as fh:
        fh.write(text)


if __name__ == "__main__":
    sys.exit(main())
