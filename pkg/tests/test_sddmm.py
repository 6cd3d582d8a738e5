import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import empty_csr
from wsesparse.config import FabricConfig, KernelConfig
from wsesparse.errors import ConfigError, DimensionError, TileOverflowError
from wsesparse.fabric import Barrier, D2HCopy
from wsesparse.formats import csr_from_dense
from wsesparse.kernels import build_sddmm, fit_tiles, sddmm, sddmm_geometry
from wsesparse.kernels.sddmm import host_script
from wsesparse.oracle import bitwise_equal, compare, random_dense, random_sparse, sddmm_ref


def cfg_for(n, d, mnz=512, side=64):
    return KernelConfig(n=n, d=d, max_nonzeros=mnz, local_height=side, local_width=side)


def operands(n, d, seed):
    return random_dense(n, d, seed, low=-1.0), random_dense(d, n, seed + 1, low=-1.0)


class TestExamples:
    def test_unit_valued_pattern(self):
        a = random_sparse(128, 0.05, seed=1)
        a = a.with_values(np.ones(a.nnz, np.float32))
        b, c = operands(128, 2, 2)
        y, rep = sddmm(a, b, c, cfg_for(128, 2))
        assert rep.extra["tile_rows"] == rep.extra["tile_cols"] == 2
        dense = b.data.astype(np.float64) @ c.data.astype(np.float64)
        assert np.allclose(y.values, dense[a.row_indices(), a.col_idx], rtol=1e-5, atol=1e-6)
        assert compare(y, sddmm_ref(a, b, c), rel_tol=1e-4).passed

    @pytest.mark.parametrize("engine", ["stream", "cycle"])
    def test_zero_matrix(self, engine):
        b, c = operands(128, 2, 3)
        y, rep = sddmm(empty_csr(128), b, c, cfg_for(128, 2), engine=engine)
        assert y.nnz == 0 and rep.fmacs == 0
        assert rep.d2h_words == 4 * 512

    def test_seeded_1024(self):
        a = random_sparse(1024, 0.02, seed=4)
        b, c = operands(1024, 2, 5)
        y, rep = sddmm(a, b, c, cfg_for(1024, 2))
        assert compare(y, sddmm_ref(a, b, c), rel_tol=1e-4).passed
        assert rep.fmacs == 2 * a.nnz

    def test_forced_arithmetic(self):
        a = random_sparse(64, 0.1, seed=6)
        a = a.with_values(np.full(a.nnz, 2.0, np.float32))
        ones_b, ones_c = np.ones((64, 1), np.float32), np.ones((1, 64), np.float32)
        y, _ = sddmm(a, ones_b, ones_c, cfg_for(64, 1, side=32), engine="cycle")
        assert np.all(y.values == 2.0)

    def test_mnz_changes_traffic_not_values(self):
        a = random_sparse(2048, 0.05, seed=7)
        b, c = operands(2048, 2, 8)
        y1, r1 = sddmm(a, b, c, cfg_for(2048, 2, 512))
        y2, r2 = sddmm(a, b, c, cfg_for(2048, 2, 1024))
        assert bitwise_equal(y1, y2)
        assert r2.d2h_words == 2 * r1.d2h_words
        assert compare(y1, sddmm_ref(a, b, c), rel_tol=1e-4).passed

    @pytest.mark.parametrize("engine", ["stream", "cycle"])
    def test_single_tile(self, engine):
        a = random_sparse(32, 0.3, seed=9)
        b, c = operands(32, 2, 10)
        y, rep = sddmm(a, b, c, cfg_for(32, 2, 512, side=32), engine=engine)
        assert rep.extra["tile_rows"] == 1 and rep.grid_shape == (2, 2)
        dense = (b.data.astype(np.float64) @ c.data.astype(np.float64)) * a.to_dense()
        assert compare(y.to_dense(), dense, rel_tol=1e-4).passed


class TestProperties:
    @given(
        st.sampled_from([8, 16, 32, 48]),
        st.sampled_from([0.02, 0.2, 0.6]),
        st.sampled_from([1, 2, 3]),
        st.sampled_from([4, 8, 16]),
        st.integers(0, 1000),
    )
    def test_engines_agree(self, n, p, d, side, seed):
        if n % side:
            side = 8
        a = random_sparse(n, p, seed)
        a = a.with_values(random_dense(1, max(a.nnz, 1), seed + 7, low=-1.0).data[0, : a.nnz])
        b, c = operands(n, d, seed)
        cfg = cfg_for(n, d, side * side, side)
        ys, rs = sddmm(a, b, c, cfg, engine="stream")
        yc, rc = sddmm(a, b, c, cfg, fabric=FabricConfig(fifo_capacity=None), engine="cycle")
        assert bitwise_equal(ys, yc)
        assert rs.cycles_dict() == rc.cycles_dict()
        assert rs.busy_cycles == rc.busy_cycles
        assert (rs.h2d_words, rs.d2h_words, rs.fmacs) == (rc.h2d_words, rc.d2h_words, rc.fmacs)
        assert ys.same_pattern(a)
        assert rs.fmacs == a.nnz * d
        assert rs.d2h_words == (n // side) ** 2 * side * side
        assert compare(ys, sddmm_ref(a, b, c), rel_tol=1e-4, abs_tol=1e-5).passed

    @pytest.mark.parametrize("cap", [1, 3])
    def test_finite_fifos_same_output(self, cap):
        a = random_sparse(64, 0.2, seed=11)
        b, c = operands(64, 2, 12)
        cfg = cfg_for(64, 2, 256, 16)
        y_inf, r_inf = sddmm(a, b, c, cfg)
        y, rep = sddmm(a, b, c, cfg, fabric=FabricConfig(fifo_capacity=cap, debug=True), engine="cycle")
        assert bitwise_equal(y, y_inf)
        assert rep.total_cycles >= r_inf.total_cycles

    @pytest.mark.parametrize("density", [0.001, 0.01, 0.1])
    def test_d2h_independent_of_density(self, density):
        a = random_sparse(256, density, seed=13)
        b, c = operands(256, 1, 14)
        _, rep = sddmm(a, b, c, cfg_for(256, 1, 512, 32))
        assert rep.d2h_words == 64 * 512
        assert rep.h2d_words == 2 * 256


class TestHostPlan:
    def test_step_structure(self):
        cfg = cfg_for(64, 3, 64, 16)
        geo = sddmm_geometry(cfg)
        ops = host_script(geo, np.zeros((64, 3), np.float32), np.zeros((3, 64), np.float32))
        kinds = [type(op).__name__ for op in ops]
        assert kinds == ["H2DCopy", "H2DCopy", "Barrier"] * 3 + ["D2HCopy"]
        assert all(op.count == t + 1 for t, op in enumerate(o for o in ops if isinstance(o, Barrier)))
        d2h = ops[-1]
        assert isinstance(d2h, D2HCopy) and set(d2h.words) == {f"E{r}" for r in range(4)}
        assert all(w == 4 * 64 for w in d2h.words.values())

    def test_placement_layout(self):
        pl = build_sddmm(cfg_for(64, 2, 64, 16))
        assert set(pl.h2d_channels) == {"N0", "B0", "B1", "B2", "B3"}
        assert len(pl.programs) == 16 + 4 + 4

    def test_geometry_memory(self):
        geo = sddmm_geometry(cfg_for(128, 2, 1024, 64))
        assert geo.worker_memory == 4 * (4 * 1024 + 128)
        assert geo.grid_shape == (3, 3) and geo.pe_count == 8


class TestFitTiles:
    def test_largest_fitting_side(self):
        a = random_sparse(256, 0.3, seed=15)
        lh, lw = fit_tiles(a, 512)
        assert lh == lw and lh * lh * 0.3 < 512 * 1.2
        assert fit_tiles(a, 512, max_side=lh * 2) == (lh, lw)

    def test_empty_uses_max_side(self):
        assert fit_tiles(empty_csr(128), 1) == (64, 64)

    def test_overflow(self):
        with pytest.raises(TileOverflowError):
            fit_tiles(csr_from_dense(np.ones((8, 8), np.float32)), 0, min_side=2)


class TestErrors:
    def test_tile_overflow(self):
        a = csr_from_dense(np.ones((16, 16), np.float32))
        with pytest.raises(TileOverflowError):
            sddmm(a, *operands(16, 1, 0), cfg_for(16, 1, 10, 16))

    def test_b_shape(self):
        with pytest.raises(DimensionError):
            sddmm(empty_csr(16), np.ones((16, 2)), np.ones((1, 16)), cfg_for(16, 2, 8, 8))

    def test_a_shape(self):
        with pytest.raises(DimensionError):
            sddmm(empty_csr(32), *operands(16, 1, 0), cfg_for(16, 1, 8, 8))

    def test_indivisible_tiles(self):
        with pytest.raises(ConfigError):
            sddmm(empty_csr(24), *operands(24, 1, 0), cfg_for(24, 1, 8, 16))
