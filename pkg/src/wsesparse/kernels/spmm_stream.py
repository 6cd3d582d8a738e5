"""Vectorized SpMM timing and numerics, exact for unbounded link FIFOs.

With unbounded FIFOs no PE ever stalls on output, so every queue is a
single FIFO server: routers handle each wavelet in its arrival cycle, a
worker starts item ``k`` at ``max(arrival_k, start_{k-1} + service_{k-1})``,
and a host channel reads word ``m`` at ``max(ready_m, read_{m-1} + 1)``.
These recurrences have closed forms as (segmented) running maxima, which is
what this module evaluates chunk by chunk. Worker ``(r, j)`` sees exactly the
timeline of ``(r, 0)`` shifted by ``j`` hops, so one column stands in for the row.
"""
from __future__ import annotations

import numpy as np

from ..fabric.report import SimReport
from ..formats import END_ROW, NULL, CsrMatrix, SellpackImage, bits_f32

_BIG = np.int64(1) << np.int64(42)
# Output columns per accumulation pass; keeps the accumulator cache-resident.
_COL_BLOCK = 32
# (row, window) segments per accumulation block.
_GROUP_BLOCK = 8192


def serve(seg: np.ndarray, arrival: np.ndarray, service: np.ndarray, ready: np.ndarray):
    """Start times of a FIFO server per segment.

    ``seg`` must be non-decreasing; ``ready[s]`` is when segment ``s``'s
    server becomes free.
    """
    if seg.size == 0:
        return np.empty(0, dtype=np.int64)
    cs = np.cumsum(service)
    excl = cs - service
    first = np.ones(seg.size, dtype=bool)
    first[1:] = seg[1:] != seg[:-1]
    base = np.maximum.accumulate(np.where(first, np.arange(seg.size), 0))
    P = excl - excl[base]
    x = arrival - P + seg * _BIG
    cm = np.maximum.accumulate(x) - seg * _BIG
    return P + np.maximum(cm, ready[seg])


def channel_reads(ready: np.ndarray, start: int) -> np.ndarray:
    """Read cycles of words with non-decreasing ready times on one channel."""
    m = np.arange(ready.size, dtype=np.int64)
    return m + np.maximum(start, np.maximum.accumulate(ready - m))


class _Items:
    """Worker input items of one chunk, grouped by worker row."""

    __slots__ = ("seg", "arrival", "service", "nz_row", "nz_win", "nz_local", "nz_val")


def _v1_chunk(a: CsrMatrix, r0: int, rows: int, S: int, geo, fs: int):
    """Items and router load when one chunk of CSR rows enters router 0 at cycle S."""
    R, mvpp, h = geo.worker_rows, geo.max_v_per_pe, geo.hop
    lo, hi = int(a.row_ptr[r0]), int(a.row_ptr[r0 + rows])
    counts = np.diff(a.row_ptr[r0 : r0 + rows + 1]).astype(np.int64)
    li = np.repeat(np.arange(rows, dtype=np.int64), counts)
    cols = a.col_idx[lo:hi].astype(np.int64)
    win = cols // mvpp
    k_idx = 2 * (np.arange(hi - lo, dtype=np.int64) + li)
    t_idx = S + k_idx + h * (win + 2)

    per = np.bincount(li * R + win, minlength=rows * R).reshape(rows, R)
    le = np.cumsum(per, axis=1)  # entries of row i with window <= r
    row_start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    rr = np.arange(R, dtype=np.int64)
    pos_done = 2 * (row_start[:, None] + le + np.arange(rows)[:, None])
    t_done = S + pos_done + h * (rr[None, :] + 2)

    seg = np.concatenate((win, win, np.broadcast_to(rr, (rows, R)).reshape(-1)))
    arr = np.concatenate((t_idx, t_idx + 1, t_done.reshape(-1)))
    svc = np.concatenate((np.ones_like(win), np.full_like(win, fs), np.ones(rows * R, np.int64)))
    order = np.argsort(seg * _BIG + arr, kind="stable")
    it = _Items()
    it.seg, it.arrival, it.service = seg[order], arr[order], svc[order]
    it.nz_row, it.nz_win, it.nz_local = li, win, cols - win * mvpp
    it.nz_val = a.values[lo:hi]

    words = 2 * (hi - lo + rows)
    # router r sees every index beyond window r-1 and every END_ROW, with values
    beyond = np.bincount(win, minlength=R)[::-1].cumsum()[::-1]
    router_words = 2 * (beyond + rows)
    router_last = S + words - 1 + h * (1 + rr) + 1
    return it, words, router_words, router_last


def _v2_chunk(chunk: np.ndarray, rows: int, S: int, geo, fs: int):
    """Items and router load for one chunk of the stream image starting at cycle S."""
    R, mvpp, h = geo.worker_rows, geo.max_v_per_pe, geo.hop
    L = chunk.shape[1]
    g_of = np.empty(R, dtype=np.int64)
    o_of = np.empty(R, dtype=np.int64)
    for grp in geo.groups:
        g_of[list(grp)] = len(grp)
        o_of[list(grp)] = np.arange(len(grp))
    p = np.arange(L, dtype=np.int64)
    tau = S + 2 * (p[None, :] * g_of[:, None] + o_of[:, None]) + h * (1 + o_of[:, None])
    idx = chunk[:, :, 0]
    val = chunk[:, :, 1]
    nz = (idx != NULL) & (idx != END_ROW)
    end = idx == END_ROW
    valid = np.stack((nz, nz | end), axis=2)
    t = np.stack((tau + h, tau + 1 + h), axis=2)
    s = np.stack((np.ones_like(tau), np.where(nz, fs, 1)), axis=2)
    segs = np.broadcast_to(np.arange(R, dtype=np.int64)[:, None, None], valid.shape)
    it = _Items()
    it.seg, it.arrival, it.service = segs[valid], t[valid], s[valid]

    runs = np.where(end, val, 0).astype(np.int64)
    row_of = np.cumsum(runs, axis=1) - runs
    it.nz_row = row_of[nz]
    it.nz_win = np.broadcast_to(np.arange(R, dtype=np.int64)[:, None], nz.shape)[nz]
    it.nz_local = idx[nz].astype(np.int64) - it.nz_win * mvpp
    it.nz_val = bits_f32(val[nz])
    # chunk-major order of the nonzeros: by local row, then window, then stream order
    order = np.lexsort((it.nz_win, it.nz_row))
    for name in ("nz_row", "nz_win", "nz_local", "nz_val"):
        setattr(it, name, getattr(it, name)[order])

    chan_len = 2 * L * g_of.max() if R else 0
    router_words = np.full(R, 2 * L, dtype=np.int64)
    last_m = 2 * ((L - 1) * g_of + o_of) + 1
    router_last = S + last_m + h * (1 + o_of) + 1
    return it, int(chan_len), router_words, router_last


def _segment_sums(key, val, hrow, h_panel, out):
    """Sequential float32 sums of ``val * h_panel[hrow]`` per run of equal ``key``.

    Segments are ordered by decreasing length so that the segments still
    active at rank ``k`` form a prefix of the accumulator.
    """
    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    gstart = np.nonzero(first)[0]
    glen = np.diff(np.append(gstart, key.size))
    gorder = np.argsort(-glen, kind="stable")
    gstart, glen = gstart[gorder], glen[gorder]
    active = np.searchsorted(-glen, -np.arange(1, int(glen[0]) + 1), side="right")
    d = h_panel.shape[1]
    for c0 in range(0, d, _COL_BLOCK):
        hb = np.ascontiguousarray(h_panel[:, c0 : c0 + _COL_BLOCK])
        acc = np.zeros((gstart.size, hb.shape[1]), dtype=np.float32)
        for k in range(int(glen[0])):
            n_k = int(active[k])
            e = gstart[:n_k] + k
            acc[:n_k] += val[e][:, None] * hb[hrow[e]]
        out[key[gstart], c0 : c0 + _COL_BLOCK] = acc


def chunk_partials(it, rows: int, geo, h_panel: np.ndarray) -> np.ndarray:
    """Chunk output: per (row, window) sequential FMAC sums, reduced north to south."""
    R, mvpp, d = geo.worker_rows, geo.max_v_per_pe, geo.d
    y = np.empty((rows, d), dtype=np.float32)
    block = max(1, _GROUP_BLOCK // R)
    bounds = np.searchsorted(it.nz_row, np.arange(0, rows + block, block))
    for b, r0 in enumerate(range(0, rows, block)):
        nb = min(block, rows - r0)
        lo, hi = bounds[b], bounds[b + 1]
        P = np.zeros((nb * R, d), dtype=np.float32)
        if hi > lo:
            key = (it.nz_row[lo:hi] - r0) * R + it.nz_win[lo:hi]
            hrow = it.nz_win[lo:hi] * mvpp + it.nz_local[lo:hi]
            _segment_sums(key, it.nz_val[lo:hi], hrow, h_panel, P)
        # accumulate is a left-to-right recurrence, i.e. the north-to-south order
        y[r0 : r0 + nb] = np.add.accumulate(P.reshape(nb, R, d), axis=1)[:, -1]
    return y


def run_stream_pass(geo, a_panel: CsrMatrix, h_panel: np.ndarray, image: SellpackImage | None):
    """Simulate one pass (one column panel); returns (Y, SimReport)."""
    R, W, h, mcpp, myc, d = (geo.worker_rows, geo.worker_cols, geo.hop, geo.max_col_per_pe,
                             geo.max_y_chunk, geo.d)
    fs = geo.fmac_cycles * mcpp
    v1, v3 = geo.variant == "v1", geo.variant == "v3"
    hp = np.zeros((R * geo.max_v_per_pe, d), dtype=np.float32)
    hp[: h_panel.shape[0]] = h_panel
    rr = np.arange(R, dtype=np.int64)

    resume = np.zeros(R, dtype=np.int64)
    router_busy = np.zeros(R, dtype=np.int64)
    router_last = np.zeros(R, dtype=np.int64)
    worker_busy = np.zeros(R, dtype=np.int64)
    worker_fmacs = np.zeros(R, dtype=np.int64)
    acc_busy = np.zeros(geo.acc_rows, dtype=np.int64)
    acc_last = 0
    inject = []
    reads = []
    completes = []
    h2d_words = d2h_words = 0
    pending_d2h = []
    y = np.zeros((geo.n, d), dtype=np.float32)
    S = 0
    for c, rows in enumerate(geo.chunk_rows):
        r0 = c * myc
        if v1:
            it, length, rw, rl = _v1_chunk(a_panel, r0, rows, S, geo, fs)
        else:
            it, length, rw, rl = _v2_chunk(image.chunks[c], rows, S, geo, fs)
        h2d_done = S + length
        h2d_words += length if v1 else 2 * image.chunks[c].shape[1] * R
        if length:
            inject.append((S, h2d_done))
        completes.append(h2d_done)
        router_busy += rw
        router_last = np.maximum(router_last, rl)

        p = serve(it.seg, it.arrival, it.service, resume)
        ends = p + it.service
        seg_last = np.searchsorted(it.seg, rr, side="right") - 1
        T = ends[seg_last]
        worker_busy += np.bincount(it.seg, weights=it.service, minlength=R).astype(np.int64)
        worker_fmacs += np.bincount(it.nz_win, minlength=R) * mcpp

        Lw = rows * mcpp
        M = np.maximum.accumulate(T - h * rr)
        resume = (Lw - 1) + h * rr + M + 1
        worker_busy += Lw
        base = h * (R - 1) + M[-1]  # q_k of the last worker row is k + base
        kacc = c if v3 else 0
        acc_busy[kacc] += Lw
        acc_last = max(acc_last, base + Lw - 1 + h * (1 + kacc) + h * (W - 1) + 1)
        ready_k = base + np.arange(Lw, dtype=np.int64) + h * (1 + kacc + W)
        ready = np.repeat(ready_k, W)
        d2h_words += ready.size
        if v3:
            pending_d2h.append(ready)
            S = h2d_done
        else:
            r = channel_reads(ready, S)
            reads.append(r)
            d2h_done = int(r[-1]) + 1
            completes.append(d2h_done)
            S = max(h2d_done, d2h_done)

        y[r0 : r0 + rows] = chunk_partials(it, rows, geo, hp)

    if v3:
        start = max(completes) if completes else 0
        for ready in pending_d2h:
            r = channel_reads(ready, start)
            reads.append(r)
            completes.append(int(r[-1]) + 1)

    worker_last = int(resume.max()) + h * (W - 1) if R else 0
    total = int(max([0, acc_last, worker_last, int(router_last.max()) if R else 0] + completes))
    in_mask = np.zeros(total + 1, dtype=bool)
    for s0, s1 in inject:
        in_mask[s0:s1] = True
    out_mask = np.zeros(total + 1, dtype=bool)
    for r in reads:
        out_mask[r] = True
    n_in = int(in_mask.sum())
    n_out = int((out_mask & ~in_mask).sum())

    busy = {}
    fmacs_by_pe = {}
    for r in range(R):
        busy[(r, 0)] = int(router_busy[r])
        for j in range(W):
            busy[(r, 1 + j)] = int(worker_busy[r])
            fmacs_by_pe[(r, 1 + j)] = int(worker_fmacs[r])
    for k in range(geo.acc_rows):
        for j in range(W):
            busy[(R + k, 1 + j)] = int(acc_busy[k])

    rep = SimReport(
        total_cycles=total,
        stream_in_cycles=n_in,
        compute_cycles=total - n_in - n_out,
        stream_out_cycles=n_out,
        h2d_words=int(h2d_words),
        d2h_words=int(d2h_words),
        fmacs=int(worker_fmacs.sum()) * W,
        peak_pe_memory_bytes=max(geo.worker_memory, geo.acc_memory),
        pe_count=geo.pe_count,
        grid_shape=geo.grid_shape,
        busy_cycles=busy,
        fmacs_by_pe=fmacs_by_pe,
        engine="stream",
    )
    return y, rep
