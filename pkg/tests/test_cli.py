import csv
import io
import json

import pytest

from wsesparse.errors import ConfigError
from wsesparse.harness import SweepSpec
from wsesparse.harness.cli import OUT_ENV, main, verification_failures


def records(text):
    return [json.loads(line) for line in text.splitlines()]


def run_json(capsys, argv):
    rc = main(argv)
    out = capsys.readouterr()
    return rc, records(out.out), out.err


class TestExamples:
    def test_spmm_three_variants(self, capsys):
        rc, recs, _ = run_json(capsys, ["spmm", "--variant", "v1,v2,v3", "--n", "1024",
                                        "--density", "0.05", "--verify"])
        assert rc == 0
        assert [r["variant"] for r in recs] == ["v1", "v2", "v3"]
        assert all(r["oracle_pass"] for r in recs)
        assert len({r["checksum"] for r in recs}) == 1
        assert recs[0]["fmacs"] == recs[0]["nnz"] * recs[0]["d"]

    def test_sddmm_verify(self, capsys):
        rc, recs, _ = run_json(capsys, ["sddmm", "--n", "1024", "--d", "2", "--mnz", "512", "--verify"])
        assert rc == 0 and len(recs) == 1
        r = recs[0]
        assert r["oracle_pass"] and r["mnz"] == 512
        assert {"local_width", "local_height", "d2h_words"} <= set(r)

    def test_bad_chunk_rejected(self, capsys):
        rc = main(["spmm", "--myc", "100"])
        assert rc == 2
        assert "power of two" in capsys.readouterr().err


class TestOutput:
    def test_footprint_csv_sorted(self, capsys):
        rc = main(["footprint", "--n", "2048,512", "--density", "0.01,0.001",
                   "--myc", "64,16", "--format", "csv"])
        assert rc == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 8
        keys = [(int(r["n"]), float(r["density"]), int(r["myc"])) for r in rows]
        assert keys == sorted(keys)
        assert {"nnz", "total_pairs", "ratio", "bytes"} <= set(rows[0])

    def test_table1_csv(self, capsys):
        assert main(["footprint", "--table1", "--format", "csv"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 4
        assert all(float(r["csr_rel_err"]) < 0.02 for r in rows)

    def test_env_output_dir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(OUT_ENV, str(tmp_path / "runs"))
        assert main(["footprint", "--n", "256", "--density", "0.01"]) == 0
        assert capsys.readouterr().out == ""
        recs = records((tmp_path / "runs" / "footprint.json").read_text())
        assert [r["myc"] for r in recs] == [256, 1024]

    def test_explicit_out(self, tmp_path, capsys):
        out = tmp_path / "x.csv"
        assert main(["sddmm", "--n", "128", "--density", "0.05", "--out", str(out),
                     "--format", "csv"]) == 0
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert len(rows) == 1 and rows[0]["kind"] == "sddmm"

    def test_rerun_identical(self, capsys):
        argv = ["spmm", "--variant", "v2", "--n", "256", "--density", "0.02", "--d", "8"]
        _, a, _ = run_json(capsys, argv)
        _, b, _ = run_json(capsys, argv)
        assert a == b

    def test_repeat_adds_seeds(self, capsys):
        _, recs, _ = run_json(capsys, ["footprint", "--n", "128", "--density", "0.05",
                                       "--myc", "64", "--seed", "10", "--repeat", "3"])
        assert [r["seed"] for r in recs] == [10, 11, 12]
        assert len({r["nnz"] for r in recs}) > 1

    def test_trace_written(self, tmp_path, capsys):
        path = tmp_path / "t.csv"
        rc = main(["spmm", "--variant", "v1", "--n", "32", "--d", "2", "--myc", "16",
                   "--engine", "cycle", "--trace", str(path)])
        assert rc == 0
        lines = path.read_text().splitlines()
        assert lines[0] == "cycle,pe_row,pe_col,port,word_hex,task"
        assert len(lines) > 10

    def test_trace_needs_cycle_engine(self, tmp_path, capsys):
        assert main(["spmm", "--n", "32", "--trace", str(tmp_path / "t.csv")]) == 2


class TestConfig:
    def test_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "grid.json"
        cfg.write_text(json.dumps({"n": [64, 128], "density": [0.05], "d": [4],
                                   "variants": ["v1", "v3"], "myc": [32]}))
        rc, recs, _ = run_json(capsys, ["sweep", "--kind", "spmm", "--config", str(cfg), "--verify"])
        assert rc == 0
        assert [(r["n"], r["variant"]) for r in recs] == [(64, "v1"), (64, "v3"), (128, "v1"), (128, "v3")]

    def test_flags_override_config(self, tmp_path, capsys):
        cfg = tmp_path / "grid.json"
        cfg.write_text(json.dumps({"n": [64], "density": [0.05], "d": [4], "myc": [32]}))
        _, recs, _ = run_json(capsys, ["spmm", "--config", str(cfg), "--n", "128", "--variant", "v1"])
        assert [r["n"] for r in recs] == [128]

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "grid.json"
        cfg.write_text(json.dumps({"sizes": [64]}))
        assert main(["spmm", "--config", str(cfg)]) == 2

    def test_validation_precedes_execution(self):
        spec = SweepSpec(kind="spmm", n=[64, 64], myc=[32, 100], density=[0.1], d=[4])
        with pytest.raises(ConfigError, match="max_y_chunk"):
            spec.validate()

    @pytest.mark.parametrize("field, value", [("density", [0.0]), ("variants", ["v9"]),
                                              ("fmt", "xml"), ("engine", "fast")])
    def test_bad_axes(self, field, value):
        spec = SweepSpec.from_dict({"kind": "spmm", field: value})
        with pytest.raises(ConfigError):
            spec.validate()

    def test_spec_round_trip(self, tmp_path):
        spec = SweepSpec(kind="sddmm", n=[256], d=[1, 2], mnz=[512])
        path = tmp_path / "s.json"
        path.write_text(json.dumps(spec.to_dict()))
        assert SweepSpec.from_json(path) == spec


class TestVerification:
    def test_checksum_disagreement_flagged(self):
        base = {"kind": "spmm", "n": 8, "density": 0.1, "d": 4, "seed": 0, "myc": 8,
                "mvpp": 8, "mcpp": 1, "oracle_pass": True}
        recs = [dict(base, variant="v1", checksum="a"), dict(base, variant="v2", checksum="b")]
        assert len(verification_failures(recs)) == 1
        recs[1]["checksum"] = "a"
        assert verification_failures(recs) == []

    def test_oracle_failure_flagged(self):
        assert verification_failures([{"kind": "sddmm", "oracle_pass": False}])
