import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import empty_csr
from wsesparse.config import FabricConfig, KernelConfig
from wsesparse.errors import ConfigError, DimensionError, PlacementError
from wsesparse.fabric import D2HCopy, H2DCopy
from wsesparse.formats import END_ROW, csr_from_dense, encode_streams
from wsesparse.kernels import VARIANTS, build_spmm, spmm, spmm_geometry
from wsesparse.kernels.spmm import host_script
from wsesparse.oracle import bitwise_equal, compare, random_dense, random_sparse, spmm_ref

CYCLE_UNBOUNDED = FabricConfig(fifo_capacity=None)


def run_all(a, h, cfg, engine="stream", fabric=None):
    return {v: spmm(v, a, h, cfg, fabric=fabric, engine=engine) for v in VARIANTS}


class TestExamples:
    @pytest.mark.parametrize("variant", VARIANTS)
    @pytest.mark.parametrize("engine", ["stream", "cycle"])
    def test_identity_exact(self, variant, engine):
        a = csr_from_dense(np.eye(256, dtype=np.float32))
        h = random_dense(256, 4, seed=1)
        cfg = KernelConfig(n=256, d=4, max_y_chunk=64, max_v_per_pe=64)
        y, rep = spmm(variant, a, h, cfg, engine=engine)
        assert y == spmm_ref(a, h) == h
        assert rep.fmacs == 256 * 4

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_zero_matrix_no_work(self, variant):
        cfg = KernelConfig(n=64, d=4, max_y_chunk=16, max_v_per_pe=16)
        y, rep = spmm(variant, empty_csr(64), random_dense(64, 4, 2), cfg, engine="cycle")
        assert not y.data.any()
        assert rep.fmacs == 0
        assert all(v == 0 for v in rep.fmacs_by_pe.values())

    def test_seeded_2048_all_variants(self):
        a = random_sparse(2048, 0.05, seed=3)
        h = random_dense(2048, 8, seed=4)
        cfg = KernelConfig(n=2048, d=8, max_y_chunk=256)
        ref = spmm_ref(a, h)
        out = run_all(a, h, cfg)
        for v, (y, rep) in out.items():
            assert compare(y, ref, rel_tol=1e-4).passed, v
            assert rep.fmacs == a.nnz * 8
        assert bitwise_equal(out["v1"][0], out["v2"][0])
        assert bitwise_equal(out["v2"][0], out["v3"][0])
        assert out["v2"][1].stream_in_cycles <= out["v1"][1].stream_in_cycles
        assert out["v3"][1].total_cycles <= out["v2"][1].total_cycles <= out["v1"][1].total_cycles

    def test_only_empty_rows(self):
        cfg = KernelConfig(n=32, d=2, max_y_chunk=16, max_v_per_pe=8)
        img = encode_streams(empty_csr(32), 16, 8)
        for chunk in img.chunks:
            assert chunk.shape[1] == 1
            assert np.all(chunk[:, 0, 0] == END_ROW) and np.all(chunk[:, 0, 1] == 16)
        y, _ = spmm("v2", empty_csr(32), random_dense(32, 2, 1), cfg, engine="cycle")
        assert not y.data.any()

    def test_single_chunk_v3_matches_v2_phases(self):
        a = random_sparse(64, 0.1, seed=5)
        h = random_dense(64, 4, seed=6)
        cfg = KernelConfig(n=64, d=4, max_y_chunk=64, max_v_per_pe=16)
        _, r2 = spmm("v2", a, h, cfg)
        _, r3 = spmm("v3", a, h, cfg)
        assert r2.cycles_dict() == r3.cycles_dict()
        assert r3.grid_shape == (r2.grid_shape[0], r2.grid_shape[1])

    def test_v1_identity_small_chunks(self):
        a = csr_from_dense(np.eye(128, dtype=np.float32))
        h = random_dense(128, 4, seed=8)
        y, _ = spmm("v1", a, h, KernelConfig(n=128, d=4, max_y_chunk=32))
        assert y == h

    def test_v2_4096_d256(self):
        a = random_sparse(4096, 0.01, seed=9)
        h = random_dense(4096, 256, seed=10)
        cfg = KernelConfig(n=4096, d=256, max_y_chunk=512, max_v_per_pe=64, max_col_per_pe=1)
        y, rep = spmm("v2", a, h, cfg)
        assert compare(y, spmm_ref(a, h), rel_tol=1e-4).passed
        assert rep.fmacs == a.nnz * 256

    @pytest.mark.slow
    def test_v3_column_panels(self):
        n = 131072
        a = random_sparse(n, 1e-3, seed=0)
        h = random_dense(n, 16, seed=1)
        y, rep = spmm("v3", a, h, KernelConfig(n=n, d=16, max_y_chunk=1024))
        assert rep.panel_passes == 2
        assert compare(y, spmm_ref(a, h), rel_tol=1e-4).passed


class TestProperties:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_mcpp_neutral(self, variant):
        a = random_sparse(256, 0.1, seed=11)
        h = random_dense(256, 8, seed=12, low=-1.0)
        outs = [spmm(variant, a, h, KernelConfig(n=256, d=8, max_y_chunk=64, max_col_per_pe=m))[0]
                for m in (1, 2, 4, 8)]
        assert all(bitwise_equal(outs[0], o) for o in outs[1:])

    def test_chunk_synchronization(self):
        a = random_sparse(96, 0.15, seed=13)
        h = random_dense(96, 4, seed=14)
        cfg = KernelConfig(n=96, d=4, max_y_chunk=16, max_v_per_pe=16, max_col_per_pe=2)
        for variant in VARIANTS:
            _, rep = spmm(variant, a, h, cfg, engine="cycle")
            done, first = {}, {}
            for t, coord, (kind, chunk) in rep.events:
                if kind == "reduce_done":
                    done[(coord, chunk)] = t
                elif kind == "first_fmac":
                    first[(coord, chunk)] = t
            assert done and first
            for (coord, chunk), t in first.items():
                if chunk > 0:
                    assert t > done[(coord, chunk - 1)], (variant, coord, chunk)

    @given(
        st.integers(1, 120),
        st.sampled_from([0.02, 0.1, 0.4]),
        st.sampled_from([1, 2, 4]),
        st.sampled_from([1, 2]),
        st.sampled_from([2, 4, 16]),
        st.sampled_from([3, 8, 32]),
        st.integers(0, 1000),
    )
    def test_engines_agree_and_match_oracle(self, n, p, d_per, mcpp, myc, mvpp, seed):
        d = d_per * mcpp
        a = random_sparse(n, p, seed)
        h = random_dense(n, d, seed + 1, low=-1.0)
        cfg = KernelConfig(n=n, d=d, max_y_chunk=myc, max_v_per_pe=mvpp, max_col_per_pe=mcpp)
        ref = spmm_ref(a, h)
        first = None
        for variant in VARIANTS:
            ys, rs = spmm(variant, a, h, cfg, engine="stream")
            yc, rc = spmm(variant, a, h, cfg, fabric=CYCLE_UNBOUNDED, engine="cycle")
            assert bitwise_equal(ys, yc)
            assert rs.cycles_dict() == rc.cycles_dict()
            assert rs.busy_cycles == rc.busy_cycles
            assert (rs.h2d_words, rs.d2h_words, rs.fmacs) == (rc.h2d_words, rc.d2h_words, rc.fmacs)
            assert rs.fmacs == a.nnz * d
            assert compare(ys, ref, rel_tol=1e-4, abs_tol=1e-5).passed
            first = ys if first is None else first
            assert bitwise_equal(first, ys)

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_finite_fifos_same_output(self, variant):
        a = random_sparse(100, 0.2, seed=15)
        h = random_dense(100, 8, seed=16)
        cfg = KernelConfig(n=100, d=8, max_y_chunk=16, max_v_per_pe=16, max_col_per_pe=2)
        y_inf, r_inf = spmm(variant, a, h, cfg)
        for cap in (1, 2, 4):
            y, rep = spmm(variant, a, h, cfg, fabric=FabricConfig(fifo_capacity=cap, debug=True),
                          engine="cycle")
            assert bitwise_equal(y, y_inf)
            assert rep.total_cycles >= r_inf.total_cycles
            assert rep.residual_words == 0

    def test_deterministic_reports(self):
        a = random_sparse(64, 0.1, seed=17)
        h = random_dense(64, 4, seed=18)
        cfg = KernelConfig(n=64, d=4, max_y_chunk=16, max_v_per_pe=16)
        r1 = spmm("v2", a, h, cfg, engine="cycle")[1].to_dict(include_pe_stats=True)
        r2 = spmm("v2", a, h, cfg, engine="cycle")[1].to_dict(include_pe_stats=True)
        assert r1 == r2


class TestHostPlan:
    def cfg(self, **kw):
        return KernelConfig(n=256, d=4, max_y_chunk=64, max_v_per_pe=32, **kw)

    def test_v1_one_channel(self):
        geo = spmm_geometry("v1", self.cfg())
        ops = host_script(geo, random_sparse(256, 0.05, 1), None)
        assert {ch for op in ops if isinstance(op, H2DCopy) for ch in op.streams} == {"W0"}
        assert sum(isinstance(op, D2HCopy) for op in ops) == 4

    @pytest.mark.parametrize("io, expected", [(None, 8), (3, 3), (100, 8)])
    def test_v2_channel_count(self, io, expected):
        geo = spmm_geometry("v2", self.cfg(io_channels=io))
        assert geo.channels == expected
        pl = build_spmm("v2", self.cfg(io_channels=io))
        assert len(pl.h2d_channels) == expected

    def test_v3_single_d2h(self):
        geo = spmm_geometry("v3", self.cfg())
        a = random_sparse(256, 0.05, 1)
        ops = host_script(geo, a, encode_streams(a, 64, 32))
        d2h = [op for op in ops if isinstance(op, D2HCopy)]
        assert len(d2h) == 1 and not d2h[0].nonblocking
        assert len(d2h[0].words) == 4

    def test_geometry_counts(self):
        geo = spmm_geometry("v3", KernelConfig(n=1000, d=8, max_y_chunk=128, max_v_per_pe=64,
                                                max_col_per_pe=2))
        assert geo.worker_rows == 16 and geo.worker_cols == 4
        assert geo.chunk_rows == (128,) * 7 + (104,)
        assert geo.grid_shape == (16 + 8, 5)


class TestErrors:
    def test_mcpp_must_divide_d(self):
        with pytest.raises(ConfigError):
            spmm("v1", random_sparse(8, 0.5, 0), random_dense(8, 6, 0),
                 KernelConfig(n=8, d=6, max_col_per_pe=4))

    def test_h_shape(self):
        with pytest.raises(DimensionError):
            spmm("v1", random_sparse(8, 0.5, 0), random_dense(8, 3, 0), KernelConfig(n=8, d=4))

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            spmm("v4", random_sparse(8, 0.5, 0), random_dense(8, 4, 0), KernelConfig(n=8, d=4))

    def test_myc_power_of_two(self):
        with pytest.raises(ConfigError):
            KernelConfig(n=8, max_y_chunk=100)

    def test_v3_grid_overflow_hint(self):
        with pytest.raises(PlacementError, match="max_y_chunk"):
            spmm_geometry("v3", KernelConfig(n=65536, d=4, max_y_chunk=64))

    def test_too_many_worker_columns(self):
        with pytest.raises(PlacementError):
            spmm_geometry("v2", KernelConfig(n=64, d=1024))

    def test_stream_engine_refuses_finite_fifos(self):
        with pytest.raises(ConfigError):
            spmm("v1", random_sparse(8, 0.5, 0), random_dense(8, 4, 0), KernelConfig(n=8, d=4),
                 fabric=FabricConfig(fifo_capacity=4), engine="stream")
