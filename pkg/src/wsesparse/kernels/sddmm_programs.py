"""PE programs of the SDDMM kernel: fringe routers and tile workers."""
from __future__ import annotations

import numpy as np

from ..fabric.core import Program
from ..formats import NULL

STEP_SIGNAL = "sddmm_step"


class WestRouter(Program):
    """Forwards every B word east along its tile row."""

    kind = "router"
    memory_bytes = 16

    def on_wavelet(self, port, word, ctx):
        ctx.emit("E", word)
        return 1


class NorthRouter(Program):
    """One of a chain of routers splitting a C row by tile column.

    Each step the router sees the words of its own column range first and
    then those of every column range further east. It sends the first
    ``local_width`` south and passes the rest along the chain.
    """

    kind = "router"
    memory_bytes = 16

    def __init__(self, local_width: int, words_per_step: int):
        self.local_width = local_width
        self.words_per_step = words_per_step
        self.k = 0

    def on_wavelet(self, port, word, ctx):
        ctx.emit("S" if self.k < self.local_width else "E", word)
        self.k = (self.k + 1) % self.words_per_step
        return 1

    def idle(self):
        return self.k == 0


class SddmmWorker(Program):
    """Holds one COO tile and its sampled output buffer.

    Each step captures ``local_height`` B words (west) and ``local_width`` C
    words (north); a full slab gates its port. With both slabs full one
    activation accumulates ``y[k] += b[i_k] * c[j_k]`` over the real entries.
    After ``d`` steps the buffer is scaled by A's values and streamed to the
    host one word per cycle, NULL slots included.
    """

    kind = "worker"

    def __init__(self, row_idx, col_idx, value_bits, count: int, local_height: int,
                 local_width: int, d: int, signal: bool = False, fmac_cycles: int = 1):
        self.mnz = len(row_idx)
        self.count = int(count)
        self.ri = np.asarray(row_idx[: self.count], dtype=np.int64)
        self.ci = np.asarray(col_idx[: self.count], dtype=np.int64)
        self.v = np.asarray(value_bits[: self.count], dtype=np.uint32).view(np.float32)
        self.lh, self.lw, self.d = local_height, local_width, d
        self.signal = signal
        self.fmac_cycles = fmac_cycles
        self.memory_bytes = 4 * (4 * self.mnz + local_height + local_width)
        self.b = np.zeros(local_height, dtype=np.float32)
        self.c = np.zeros(local_width, dtype=np.float32)
        self.y = np.zeros(self.count, dtype=np.float32)
        self.nb = self.nc = 0
        self.step = 0
        self.finalized = False
        self.out = 0

    def enabled_ports(self):
        if self.step >= self.d:
            return ()
        ports = []
        if self.nb < self.lh:
            ports.append("W")
        if self.nc < self.lw:
            ports.append("N")
        return ports

    def on_wavelet(self, port, word, ctx):
        val = np.uint32(word).view(np.float32)
        if port == "W":
            self.b[self.nb] = val
            self.nb += 1
        else:
            self.c[self.nc] = val
            self.nc += 1
        return 1

    def has_local_work(self):
        if self.step < self.d:
            return self.nb == self.lh and self.nc == self.lw
        return self.out < self.mnz

    def idle(self):
        return self.step >= self.d and self.out == self.mnz

    def local_step(self, ctx):
        if self.step < self.d:
            self.y = self.y + self.b[self.ri] * self.c[self.ci]
            ctx.fmac(self.count)
            self.nb = self.nc = 0
            self.step += 1
            svc = self.count * self.fmac_cycles + 1
            if self.signal:
                ctx.signal(STEP_SIGNAL, delay=svc - 1)
            return svc
        if not self.finalized:
            self.y = self.y * self.v
            ctx.fmul(self.count)
            self.finalized = True
            return self.count * self.fmac_cycles + 1
        k = self.out
        word = int(self.y[k : k + 1].view(np.uint32)[0]) if k < self.count else NULL
        ctx.emit("host", word)
        self.out += 1
        return 1
