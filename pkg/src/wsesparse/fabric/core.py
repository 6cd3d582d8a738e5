"""Cycle-stepped, wavelet-level simulator of a 2-D PE grid.

Each cycle runs five phases in a fixed order:

0. host script: copies whose ordering constraints are met start;
1. in-flight wavelets whose arrival cycle is reached enter input FIFOs;
2. host-to-device channels inject at most ``channel_bandwidth`` words each;
3. every idle PE (coordinate order) runs one task: pending local work first,
   otherwise the oldest queued wavelet among its enabled ports, ties broken
   west, north, east, south;
4. every output port forwards at most one wavelet, subject to credit;
5. device-to-host channels read at most ``channel_bandwidth`` ready words.

A link of latency ``L`` accepts a new wavelet only while
``queued + in_flight < fifo_capacity + L - 1``, so a full FIFO back-pressures
the sender, which stalls until its output drains.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from ..config import FabricConfig
from ..errors import DeadlockError, MemoryBudgetError, PlacementError
from .report import SimReport

Coord = Tuple[int, int]
PORT_ORDER = ("W", "N", "E", "S")


def port_rank(port: str) -> int:
    try:
        return PORT_ORDER.index(port)
    except ValueError:
        return len(PORT_ORDER)


class Program:
    """Base class of PE programs.

    Subclasses override :meth:`on_wavelet` (and optionally the local-work
    hooks). Handlers return the number of cycles the task occupies the PE.
    """

    kind = "pe"
    memory_bytes = 0

    def enabled_ports(self) -> Optional[Sequence[str]]:
        """Ports currently accepting wavelets; ``None`` means all."""
        return None

    def on_wavelet(self, port: str, word: int, ctx: "TaskContext") -> int:
        raise NotImplementedError

    def has_local_work(self) -> bool:
        return False

    def local_step(self, ctx: "TaskContext") -> int:
        raise NotImplementedError

    def idle(self) -> bool:
        """True when the program holds no unfinished internal work."""
        return not self.has_local_work()


@dataclass(frozen=True)
class Route:
    """Destination of an output port: a PE input port ``latency`` hops away."""

    dst: Coord
    port: str
    latency: int = 1


@dataclass(frozen=True)
class HostSink:
    """An output port draining into a device-to-host channel.

    ``distance`` is the hop count to the channel; ``capacity`` bounds the
    words buffered at the source awaiting a host read (``None``: unbounded).
    """

    channel: str
    distance: int = 1
    capacity: Optional[int] = None


@dataclass
class Placement:
    """Programs by coordinate plus the wiring between them and the host."""

    programs: Dict[Coord, Program] = field(default_factory=dict)
    routes: Dict[Tuple[Coord, str], List[Route]] = field(default_factory=dict)
    sinks: Dict[Tuple[Coord, str], HostSink] = field(default_factory=dict)
    h2d_channels: Dict[str, List[Route]] = field(default_factory=dict)
    d2h_channels: List[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def connect(self, src: Coord, port: str, dst: Coord, dst_port: str, latency: int = 1):
        self.routes.setdefault((src, port), []).append(Route(dst, dst_port, latency))

    @property
    def shape(self) -> Tuple[int, int]:
        if not self.programs:
            return (0, 0)
        rows = max(r for r, _ in self.programs) + 1
        cols = max(c for _, c in self.programs) + 1
        return rows, cols


@dataclass
class H2DCopy:
    """Stream words into the device.

    ``streams`` maps a channel name to ``(words, targets)`` where ``targets``
    indexes the channel's route list per word (``None`` sends everything to
    the first route).
    """

    name: str
    streams: Dict[str, tuple]
    nonblocking: bool = True

    @property
    def channels(self):
        return {("h2d", ch) for ch in self.streams}

    @property
    def word_count(self) -> int:
        return sum(len(w) for w, _ in self.streams.values())


@dataclass
class D2HCopy:
    """Read a fixed number of words from each listed channel."""

    name: str
    words: Dict[str, int]
    nonblocking: bool = True
    received: Dict[str, list] = field(default_factory=dict)

    @property
    def channels(self):
        return {("d2h", ch) for ch in self.words}


@dataclass
class Barrier:
    """Block the script until ``count`` signals named ``signal`` were raised."""

    name: str
    signal: str
    count: int
    nonblocking: bool = False

    @property
    def channels(self):
        return set()


def may_overlap(prev, nxt) -> bool:
    """Whether ``nxt`` may start before ``prev`` completes."""
    if isinstance(prev, Barrier) or isinstance(nxt, Barrier):
        return False
    if not (prev.nonblocking and nxt.nonblocking):
        return False
    if isinstance(prev, D2HCopy) and isinstance(nxt, H2DCopy):
        return False
    return not (prev.channels & nxt.channels)


class TaskContext:
    """Handle passed to program handlers for emitting wavelets and counters."""

    __slots__ = ("_fab", "pe", "t")

    def __init__(self, fab: "Fabric"):
        self._fab = fab
        self.pe = 0
        self.t = 0

    @property
    def coord(self) -> Coord:
        return self._fab._coords[self.pe]

    @property
    def cycle(self) -> int:
        return self.t

    def emit(self, port: str, word) -> None:
        self._fab._emit(self.pe, port, word)

    def fmac(self, n: int = 1) -> None:
        self._fab._fmacs[self.pe] += n

    def fmul(self, n: int = 1) -> None:
        self._fab._fmuls[self.pe] += n

    def signal(self, name: str, delay: int = 0) -> None:
        """Raise ``name``; ``delay`` dates it later in the current task, e.g. its last cycle."""
        self._fab._signals.setdefault(name, []).append(self.t + delay)

    def log(self, event) -> None:
        self._fab.events.append((self.t, self.coord, event))


class Fabric:
    """A grid of PEs wired by a :class:`Placement` and driven by a host script."""

    def __init__(self, config: Optional[FabricConfig] = None, trace: Optional[TextIO] = None):
        self.config = config or FabricConfig()
        self.trace = trace
        self.placement: Optional[Placement] = None
        self.events: list = []
        self.loaded = False

    # -- loading ---------------------------------------------------------
    def load_program(self, placement: Placement) -> None:
        cfg = self.config
        for coord, prog in placement.programs.items():
            r, c = coord
            if not (0 <= r < cfg.grid_rows and 0 <= c < cfg.grid_cols):
                raise PlacementError(
                    f"PE {coord} lies outside the {cfg.grid_rows}x{cfg.grid_cols} grid"
                )
            if prog.memory_bytes > cfg.pe_memory_bytes:
                raise MemoryBudgetError(coord, prog.memory_bytes, cfg.pe_memory_bytes)
        for (src, port), routes in placement.routes.items():
            if src not in placement.programs:
                raise PlacementError(f"route from unplaced PE {src}")
            for rt in routes:
                if rt.dst not in placement.programs:
                    raise PlacementError(f"route {src}:{port} targets unplaced PE {rt.dst}")
                if rt.latency < 1:
                    raise PlacementError("route latency must be >= 1")
        for ch, routes in placement.h2d_channels.items():
            for rt in routes:
                if rt.dst not in placement.programs:
                    raise PlacementError(f"channel {ch} targets unplaced PE {rt.dst}")
        for (src, port), sink in placement.sinks.items():
            if sink.channel not in placement.d2h_channels:
                raise PlacementError(f"sink {src}:{port} names unknown channel {sink.channel}")
        self.placement = placement
        self.loaded = True

    # -- internals used by TaskContext ------------------------------------
    def _emit(self, pe: int, port: str, word) -> None:
        key = (pe, port)
        if key not in self._out_routes and key not in self._out_sinks:
            raise PlacementError(f"PE {self._coords[pe]} emitted on unwired port {port!r}")
        q = self._outq[pe].get(port)
        if q is None:
            q = self._outq[pe][port] = deque()
        q.append(word)
        self._pending_out.add(key)

    def _credit(self, dst: int, port: str, latency: int) -> bool:
        cap = self.config.fifo_capacity
        if cap is None:
            return True
        q = self._inq[dst].get(port)
        queued = len(q) if q else 0
        return queued + self._inflight.get((dst, port), 0) < cap + latency - 1

    def _send(self, dst: int, port: str, latency: int, word, t: int) -> None:
        self._seq += 1
        heapq.heappush(self._arrivals, (t + latency, self._seq, dst, port, word))
        key = (dst, port)
        self._inflight[key] = self._inflight.get(key, 0) + 1

    def _trace(self, t, pe, port, word, task):
        if self.trace is None:
            return
        r, c = self._coords[pe] if pe >= 0 else (-1, -1)
        w = word if isinstance(word, (int, np.integer)) else 0
        self.trace.write(f"{t},{r},{c},{port},{int(w) & 0xFFFFFFFF:08x},{task}\n")

    # -- main loop ---------------------------------------------------------
    def run(self, script: Sequence) -> SimReport:
        if not self.loaded:
            raise PlacementError("load_program must be called before run")
        pl = self.placement
        cfg = self.config
        coords = sorted(pl.programs)
        index = {c: i for i, c in enumerate(coords)}
        self._coords = coords
        progs = [pl.programs[c] for c in coords]
        n = len(progs)
        self._inq = [dict() for _ in range(n)]
        self._outq = [dict() for _ in range(n)]
        self._inflight = {}
        self._arrivals = []
        self._seq = 0
        self._fmacs = [0] * n
        self._fmuls = [0] * n
        self._signals = {}
        self._pending_out = set()
        self.events = []
        busy_until = [0] * n
        busy_cycles = [0] * n
        self._out_routes = {
            (index[src], port): [(index[r.dst], r.port, r.latency) for r in routes]
            for (src, port), routes in pl.routes.items()
        }
        self._out_sinks = {(index[src], port): sink for (src, port), sink in pl.sinks.items()}
        held = {}  # (pe, port) -> words pushed to a sink and not yet read
        chan_targets = {
            ch: [(index[r.dst], r.port, r.latency) for r in routes]
            for ch, routes in pl.h2d_channels.items()
        }
        chan_heaps = {ch: [] for ch in pl.d2h_channels}
        ctx = TaskContext(self)
        bw = cfg.channel_bandwidth

        ops = list(script)
        for op in ops:
            if isinstance(op, H2DCopy):
                for ch in op.streams:
                    if ch not in chan_targets:
                        raise PlacementError(f"copy {op.name} uses unknown h2d channel {ch}")
            elif isinstance(op, D2HCopy):
                for ch in op.words:
                    if ch not in chan_heaps:
                        raise PlacementError(f"copy {op.name} uses unknown d2h channel {ch}")
                op.received = {ch: [] for ch in op.words}
        starts: List[Optional[int]] = [None] * len(ops)
        completes: List[Optional[int]] = [None] * len(ops)
        cursor = [dict() for _ in ops]  # h2d: channel -> next word; d2h: channel -> words read
        inject_cycles = set()
        read_cycles = set()
        h2d_words = d2h_words = 0
        active = set(range(n))
        t = 0
        next_op = 0
        max_cycles = cfg.max_cycles

        def op_start_bound(i):
            bound = 0
            for j in range(i):
                ref = starts[j] if may_overlap(ops[j], ops[i]) else completes[j]
                if ref is None:
                    return None
                bound = max(bound, ref)
            return bound

        while True:
            progressed = False
            # phase 0: host script
            for i in range(next_op):
                op = ops[i]
                if completes[i] is None and isinstance(op, Barrier):
                    sig = self._signals.get(op.signal, [])
                    if len(sig) >= op.count:
                        completes[i] = max(starts[i], sig[op.count - 1] + 1)
            while next_op < len(ops):
                bound = op_start_bound(next_op)
                if bound is None or bound > t:
                    break
                op = ops[next_op]
                starts[next_op] = t
                progressed = True
                if isinstance(op, H2DCopy):
                    cursor[next_op] = {ch: 0 for ch in op.streams}
                    if op.word_count == 0:
                        completes[next_op] = t
                elif isinstance(op, D2HCopy):
                    cursor[next_op] = {ch: 0 for ch in op.words}
                    if sum(op.words.values()) == 0:
                        completes[next_op] = t
                elif isinstance(op, Barrier):
                    sig = self._signals.get(op.signal, [])
                    if len(sig) >= op.count:
                        completes[next_op] = max(t, sig[op.count - 1] + 1)
                next_op += 1

            # phase 1: deliveries
            arrivals = self._arrivals
            while arrivals and arrivals[0][0] <= t:
                _, _, dst, port, word = heapq.heappop(arrivals)
                q = self._inq[dst].get(port)
                if q is None:
                    q = self._inq[dst][port] = deque()
                q.append((t, word))
                self._inflight[(dst, port)] -= 1
                active.add(dst)
                progressed = True

            # phase 2: host-to-device injection
            for i in range(next_op):
                op = ops[i]
                if completes[i] is not None or not isinstance(op, H2DCopy):
                    continue
                cur = cursor[i]
                finished = True
                for ch, (words, targets) in op.streams.items():
                    k = cur[ch]
                    for _ in range(bw):
                        if k >= len(words):
                            break
                        tgt = 0 if targets is None else int(targets[k])
                        dst, port, lat = chan_targets[ch][tgt]
                        if not self._credit(dst, port, lat):
                            break
                        word = int(words[k])
                        self._send(dst, port, lat, word, t)
                        self._trace(t, dst, f"h2d:{ch}", word, op.name)
                        k += 1
                        h2d_words += 1
                        inject_cycles.add(t)
                        progressed = True
                    cur[ch] = k
                    if k < len(words):
                        finished = False
                if finished:
                    completes[i] = t + 1

            # phase 3: PE tasks
            for pe in sorted(active):
                if busy_until[pe] > t:
                    continue
                outq = self._outq[pe]
                if any(outq.values()):
                    continue
                prog = progs[pe]
                ctx.pe = pe
                ctx.t = t
                if prog.has_local_work():
                    svc = prog.local_step(ctx)
                    self._trace(t, pe, "local", 0, prog.kind)
                else:
                    inq = self._inq[pe]
                    enabled = prog.enabled_ports()
                    best = None
                    for port, q in inq.items():
                        if not q or (enabled is not None and port not in enabled):
                            continue
                        key = (q[0][0], port_rank(port), port)
                        if best is None or key < best:
                            best = key
                    if best is None:
                        if not any(inq.values()) and prog.idle():
                            active.discard(pe)
                        continue
                    port = best[2]
                    _, word = inq[port].popleft()
                    svc = prog.on_wavelet(port, word, ctx)
                    self._trace(t, pe, port, word, prog.kind)
                if svc < 1:
                    raise ValueError(f"{prog.kind} task returned non-positive service time")
                busy_until[pe] = t + svc
                busy_cycles[pe] += svc
                progressed = True

            # phase 4: output drain
            for key in sorted(self._pending_out):
                pe, port = key
                q = self._outq[pe][port]
                if not q:
                    continue
                word = q[0]
                routes = self._out_routes.get(key)
                if routes is not None:
                    if not all(self._credit(d, p, lat) for d, p, lat in routes):
                        continue
                    q.popleft()
                    for d, p, lat in routes:
                        self._send(d, p, lat, word, t)
                else:
                    sink = self._out_sinks[key]
                    if sink.capacity is not None and held.get(key, 0) >= sink.capacity:
                        continue
                    q.popleft()
                    held[key] = held.get(key, 0) + 1
                    self._seq += 1
                    heapq.heappush(chan_heaps[sink.channel],
                                   (t + sink.distance, coords[pe][1], coords[pe][0], self._seq, pe, port, word))
                progressed = True
            self._pending_out = {k for k in self._pending_out if self._outq[k[0]][k[1]]}

            # phase 5: device-to-host reads
            for i in range(next_op):
                op = ops[i]
                if completes[i] is not None or not isinstance(op, D2HCopy):
                    continue
                cur = cursor[i]
                finished = True
                for ch, want in op.words.items():
                    heap = chan_heaps[ch]
                    got = cur[ch]
                    for _ in range(bw):
                        if got >= want or not heap or heap[0][0] > t:
                            break
                        entry = heapq.heappop(heap)
                        pe, port, word = entry[4], entry[5], entry[6]
                        held[(pe, port)] -= 1
                        active.add(pe)
                        op.received[ch].append((coords[pe], word))
                        self._trace(t, pe, f"d2h:{ch}", word, op.name)
                        got += 1
                        d2h_words += 1
                        read_cycles.add(t)
                        progressed = True
                    cur[ch] = got
                    if got < want:
                        finished = False
                if finished:
                    completes[i] = t + 1

            if cfg.debug:
                self._check_capacity()

            # termination and time advance
            if progressed:
                t += 1
            else:
                nxt = self._next_event(t, active, busy_until, progs, ops, next_op,
                                       completes, chan_heaps)
                if nxt is None:
                    if next_op == len(ops) and all(c is not None for c in completes) \
                            and self._quiescent(progs):
                        break
                    raise DeadlockError(self._diagnose(t, ops, starts, completes, progs))
                t = nxt
            if max_cycles is not None and t > max_cycles:
                raise DeadlockError(f"exceeded max_cycles={max_cycles}")

        total = max([0] + busy_until + [c for c in completes if c is not None])
        n_in = len(inject_cycles)
        n_out = len(read_cycles - inject_cycles)
        residual = sum(len(q) for d in self._inq for q in d.values())
        residual += sum(len(h) for h in chan_heaps.values())
        rep = SimReport(
            total_cycles=total,
            stream_in_cycles=n_in,
            compute_cycles=total - n_in - n_out,
            stream_out_cycles=n_out,
            h2d_words=h2d_words,
            d2h_words=d2h_words,
            fmacs=sum(self._fmacs),
            fmuls=sum(self._fmuls),
            peak_pe_memory_bytes=max([0] + [p.memory_bytes for p in progs]),
            pe_count=n,
            grid_shape=pl.shape,
            busy_cycles={coords[i]: busy_cycles[i] for i in range(n)},
            fmacs_by_pe={coords[i]: self._fmacs[i] for i in range(n)},
            engine="cycle",
            residual_words=residual,
            events=list(self.events),
        )
        rep.extra["op_times"] = [
            {"name": op.name, "start": s, "complete": c} for op, s, c in zip(ops, starts, completes)
        ]
        return rep

    def _next_event(self, t, active, busy_until, progs, ops, next_op, completes, chan_heaps):
        cands = []
        if self._arrivals:
            cands.append(self._arrivals[0][0])
        for pe in active:
            if busy_until[pe] > t:
                cands.append(busy_until[pe])
        for i in range(next_op):
            op = ops[i]
            if completes[i] is None and isinstance(op, D2HCopy):
                for ch in op.words:
                    heap = chan_heaps[ch]
                    if heap and heap[0][0] > t:
                        cands.append(heap[0][0])
            elif completes[i] is not None and completes[i] > t:
                cands.append(completes[i])
        return min(cands) if cands else None

    def _quiescent(self, progs) -> bool:
        if self._arrivals or any(self._outq[k[0]][k[1]] for k in self._pending_out):
            return False
        return all(p.idle() for p in progs)

    def _check_capacity(self):
        cap = self.config.fifo_capacity
        if cap is None:
            return
        limit = {}
        for routes in self._out_routes.values():
            for d, p, lat in routes:
                limit[(d, p)] = max(limit.get((d, p), 0), cap + lat - 1)
        for pe, ports in enumerate(self._inq):
            for port, q in ports.items():
                bound = limit.get((pe, port))
                if bound is not None and len(q) + self._inflight.get((pe, port), 0) > bound:
                    raise AssertionError(
                        f"FIFO overflow at {self._coords[pe]}:{port}: {len(q)} queued"
                    )

    def _diagnose(self, t, ops, starts, completes, progs) -> str:
        lines = [f"deadlock at cycle {t}"]
        for op, s, c in zip(ops, starts, completes):
            if c is None:
                state = "not started" if s is None else f"started at {s}"
                lines.append(f"  copy {op.name}: {state}")
        shown = 0
        for pe, ports in enumerate(self._inq):
            for port, q in ports.items():
                if q and shown < 8:
                    lines.append(
                        f"  PE {self._coords[pe]} ({progs[pe].kind}) holds {len(q)} word(s) "
                        f"on port {port}; enabled={progs[pe].enabled_ports()}"
                    )
                    shown += 1
        for pe, port in sorted(self._pending_out)[:8]:
            lines.append(f"  PE {self._coords[pe]} stalled sending on port {port}")
        for pe, prog in enumerate(progs):
            if not prog.idle() and shown < 16:
                lines.append(f"  PE {self._coords[pe]} ({prog.kind}) has unfinished work")
                shown += 1
        return "\n".join(lines)


def load_program(fabric: Fabric, placement: Placement) -> None:
    fabric.load_program(placement)


def run(fabric: Fabric, host_script: Sequence) -> SimReport:
    return fabric.run(host_script)
