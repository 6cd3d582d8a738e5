import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wsesparse.formats import GIB, PAIR_BYTES, encode_streams, sellpack_stream_stats
from wsesparse.footprint import (
    TABLE1,
    SellpackCounter,
    count_sellpack,
    random_footprint,
    table1_rows,
)
from wsesparse.oracle import iter_random_blocks, random_sparse


class TestTable1:
    @pytest.mark.parametrize("row", table1_rows(), ids=[g.name for g in TABLE1])
    def test_within_two_percent(self, row):
        assert row["dense_rel_err"] < 0.02
        assert row["csr_rel_err"] < 0.02


class TestCounter:
    @given(st.integers(0, 10_000), st.sampled_from([0.01, 0.05, 0.3]),
           st.sampled_from([1, 4, 16, 64]), st.sampled_from([3, 8, 32]))
    def test_counter_matches_encoder(self, seed, density, myc, mvpp):
        a = random_sparse(97, density, seed)
        assert count_sellpack(a, 97, myc, mvpp) == sellpack_stream_stats(encode_streams(a, myc, mvpp))

    def test_blocks_match_whole_matrix(self):
        n = 3000  # spans three generator blocks
        a = random_sparse(n, 0.01, seed=4)
        c = SellpackCounter(n, n, 256, 64)
        for blk in iter_random_blocks(n, 0.01, 4, with_values=False):
            c.add_block(blk.row0, blk.row_ptr, blk.col_idx)
        assert c.stats() == sellpack_stream_stats(encode_streams(a, 256, 64))

    def test_random_footprint_record(self):
        recs = random_footprint(2048, 1e-3, seed=0, mycs=[256, 1024])
        a = random_sparse(2048, 1e-3, 0)
        for r in recs:
            stats = sellpack_stream_stats(encode_streams(a, r.myc, 64))
            assert r.nnz == a.nnz and r.total_pairs == stats.total_pairs
            assert r.bytes == PAIR_BYTES * stats.total_pairs
            assert r.ratio == pytest.approx(stats.total_pairs / a.nnz)
        assert recs[0].total_pairs >= recs[1].total_pairs

    def test_frozen_counts(self):
        # Counted without materializing; encode_streams on the full matrix agrees.
        recs = random_footprint(4096, 1e-3, seed=0, mycs=[256, 1024])
        assert [(r.nnz, r.total_pairs) for r in recs] == [(16873, 54336), (16873, 42880)]

    def test_valued_csr_is_larger(self):
        r = random_footprint(1024, 0.01, 0, [64])[0]
        assert r.csr_valued_bytes - r.csr_bytes == 4 * r.nnz
        assert r.dense_bytes == 4 * 1024 * 1024
        assert r.to_dict()["myc"] == 64
        assert r.bytes / GIB < 1
