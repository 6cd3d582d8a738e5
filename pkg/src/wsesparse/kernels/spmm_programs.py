"""PE programs of the SpMM kernels: routers, workers and accumulators."""
from __future__ import annotations

import numpy as np

from ..errors import CorruptStreamError
from ..fabric.core import Program
from ..formats import DONE, END_ROW, NULL

COMPUTE = "compute"
REDUCE = "reduce"


def done_word(run: int) -> int:
    """DONE token with its run length packed in the upper 16 bits."""
    if not 1 <= run <= 0xFFFF:
        raise ValueError(f"DONE run length {run} does not fit 16 bits")
    return (run << 16) | DONE


def is_done(word: int) -> bool:
    return (word & 0xFFFF) == DONE


def to_f32(word: int) -> np.float32:
    return np.array([word], dtype=np.uint32).view(np.float32)[0]


def to_word(x) -> int:
    return int(np.array([x], dtype=np.float32).view(np.uint32)[0])


class RouterV1(Program):
    """Single-stream router of the base design.

    Pairs inside ``[first, last]`` go east with a localized index. The first
    index beyond ``last`` in a row triggers one DONE east; such pairs (and
    END_ROW) continue south so later routers see them. The DONE goes out
    before the south forward in the same task.
    """

    kind = "router"
    memory_bytes = 16

    def __init__(self, first: int, last: int, has_south: bool):
        self.first = first
        self.last = last
        self.has_south = has_south
        self.row_end = False
        self._value_dest = None

    def on_wavelet(self, port, word, ctx):
        if self._value_dest is None:
            col = word
            if col > self.last:
                if not self.row_end:
                    ctx.emit("E", done_word(1))
                    self.row_end = True
                if col == END_ROW:
                    self.row_end = False
                if self.has_south:
                    ctx.emit("S", col)
                    self._value_dest = "S"
                else:
                    self._value_dest = "drop"
            elif col >= self.first:
                ctx.emit("E", col - self.first)
                self._value_dest = "E"
            else:
                raise CorruptStreamError(
                    f"router window [{self.first}, {self.last}] received index {col}"
                )
        else:
            if self._value_dest != "drop":
                ctx.emit(self._value_dest, word)
            self._value_dest = None
        return 1

    def idle(self):
        return self._value_dest is None


class RouterV2(Program):
    """Router fed directly by its own chunked stream.

    NULL pairs are dropped. An END_ROW pair becomes one DONE carrying the run
    length read from its value word. Other pairs go east with a localized index.
    """

    kind = "router"
    memory_bytes = 16

    def __init__(self, first: int, last: int):
        self.first = first
        self.last = last
        self._pending = None

    def on_wavelet(self, port, word, ctx):
        if self._pending is None:
            if word == NULL:
                self._pending = "null"
            elif word == END_ROW:
                self._pending = "end"
            else:
                if not self.first <= word <= self.last:
                    raise CorruptStreamError(
                        f"router window [{self.first}, {self.last}] received index {word}"
                    )
                ctx.emit("E", word - self.first)
                self._pending = "pair"
        else:
            if self._pending == "end":
                ctx.emit("E", done_word(word))
            elif self._pending == "pair":
                ctx.emit("E", word)
            self._pending = None
        return 1

    def idle(self):
        return self._pending is None


class SpmmWorker(Program):
    """Multiply-accumulate worker holding ``mcpp`` columns of an H slice.

    In compute mode an index costs one cycle, a value costs ``mcpp`` FMAC
    cycles and a DONE advances the output slot by its run length. Once a
    chunk's rows are complete the worker reduces: the top row emits its
    buffer south, other rows add the word from the north to their own and
    forward the sum. Input from the west is gated until the reduction ends.
    """

    kind = "worker"

    def __init__(self, x: np.ndarray, chunk_rows, top: bool, max_y_chunk: int,
                 south_port=lambda chunk: "S", fmac_cycles: int = 1):
        self.x = np.ascontiguousarray(x, dtype=np.float32)
        self.mvpp, self.mcpp = self.x.shape
        self.chunk_rows = list(chunk_rows)
        self.top = top
        self.myc = max_y_chunk
        self.south_port = south_port
        self.fmac_cycles = fmac_cycles
        self.memory_bytes = 4 * (max_y_chunk * self.mcpp + self.mvpp * self.mcpp)
        self.y = np.zeros(max_y_chunk * self.mcpp, dtype=np.float32)
        self.mode = COMPUTE
        self.chunk = 0
        self.slot = 0
        self.k = 0
        self.pending = None
        self.started = False

    def enabled_ports(self):
        if self.mode == COMPUTE:
            return ("W",)
        return () if self.top else ("N",)

    def has_local_work(self):
        return self.mode == REDUCE and self.top

    def idle(self):
        return self.mode == COMPUTE and self.pending is None and self.slot == 0

    def _rows(self):
        return self.chunk_rows[self.chunk]

    def on_wavelet(self, port, word, ctx):
        if self.mode == REDUCE:
            north = to_f32(word)
            ctx.emit(self.south_port(self.chunk), to_word(north + self.y[self.k]))
            return self._advance_reduce(ctx)
        if self.pending is None:
            if is_done(word):
                self.slot += word >> 16
                if self.slot > self._rows():
                    raise CorruptStreamError("more row terminations than chunk rows")
                if self.slot == self._rows():
                    self.mode = REDUCE
                    self.k = 0
                    ctx.log(("reduce_start", self.chunk))
                return 1
            self.pending = word
            return 1
        if not self.started:
            ctx.log(("first_fmac", self.chunk))
            self.started = True
        v = to_f32(word)
        lo = self.slot * self.mcpp
        self.y[lo : lo + self.mcpp] = self.y[lo : lo + self.mcpp] + v * self.x[self.pending]
        ctx.fmac(self.mcpp)
        self.pending = None
        return self.mcpp * self.fmac_cycles

    def local_step(self, ctx):
        ctx.emit(self.south_port(self.chunk), to_word(self.y[self.k]))
        return self._advance_reduce(ctx)

    def _advance_reduce(self, ctx):
        self.k += 1
        if self.k == self._rows() * self.mcpp:
            ctx.log(("reduce_done", self.chunk))
            self.y[:] = 0
            self.slot = 0
            self.chunk += 1
            self.mode = COMPUTE
            self.started = False
        return 1


class Accumulator(Program):
    """Buffers reduced output words and hands them to its host channel."""

    kind = "accumulator"

    def __init__(self, max_y_chunk: int, mcpp: int):
        self.memory_bytes = 4 * max_y_chunk * mcpp

    def on_wavelet(self, port, word, ctx):
        ctx.emit("host", word)
        return 1
