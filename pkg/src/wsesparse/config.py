"""Kernel and fabric parameter bundles."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError

MAX_ROWS_CAP = 65536
PE_MEMORY_BYTES = 46 * 1024
GRID_ROWS = 1172
GRID_COLS = 762
DEFAULT_FIFO_CAPACITY = 4


def is_power_of_two(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def _check_int(name, value, minimum):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")


@dataclass(frozen=True)
class KernelConfig:
    """Parameters shared by the encoders and the SpMM/SDDMM kernels.

    ``max_y_chunk`` must be a power of two because the worker's row counter
    wraps with a bit mask. Derived geometry (worker rows, worker columns,
    chunk count) is exposed as properties.
    """

    n: int
    d: int = 1
    max_y_chunk: int = 64
    max_v_per_pe: int = 64
    max_col_per_pe: int = 1
    max_nonzeros: int = 512
    local_width: int = 64
    local_height: int = 64
    io_channels: Optional[int] = None
    allow_partial_chunk: bool = True

    def __post_init__(self):
        _check_int("n", self.n, 0)
        _check_int("d", self.d, 1)
        _check_int("max_y_chunk", self.max_y_chunk, 1)
        if not is_power_of_two(self.max_y_chunk):
            raise ConfigError(f"max_y_chunk must be a power of two, got {self.max_y_chunk}")
        _check_int("max_v_per_pe", self.max_v_per_pe, 1)
        # Local indices travel as 16-bit words and 0xFFFF is the DONE token.
        if self.max_v_per_pe > 0xFFFF:
            raise ConfigError("max_v_per_pe must fit a 16-bit local index (<= 65535)")
        _check_int("max_col_per_pe", self.max_col_per_pe, 1)
        _check_int("max_nonzeros", self.max_nonzeros, 1)
        _check_int("local_width", self.local_width, 1)
        _check_int("local_height", self.local_height, 1)
        if self.io_channels is not None:
            _check_int("io_channels", self.io_channels, 1)

    # -- SpMM geometry -------------------------------------------------
    @property
    def max_rows(self) -> int:
        return min(self.n, MAX_ROWS_CAP)

    @property
    def worker_rows(self) -> int:
        return max(1, math.ceil(self.max_rows / self.max_v_per_pe))

    @property
    def worker_cols(self) -> int:
        return self.d // self.max_col_per_pe

    @property
    def chunk_count(self) -> int:
        return math.ceil(self.n / self.max_y_chunk)

    @property
    def panel_count(self) -> int:
        return max(1, math.ceil(self.n / self.max_rows)) if self.n else 1

    def chunk_rows(self, chunk: int) -> int:
        """Row count of ``chunk``; only the last chunk may be partial."""
        start = chunk * self.max_y_chunk
        return max(0, min(self.max_y_chunk, self.n - start))

    @property
    def channel_count(self) -> int:
        """Host channels feeding the routers in the multi-channel variants."""
        io = self.worker_rows if self.io_channels is None else self.io_channels
        return min(self.worker_rows, io)

    def check_chunking(self):
        if self.n % self.max_y_chunk and not self.allow_partial_chunk:
            raise ConfigError(
                f"n={self.n} is not a multiple of max_y_chunk={self.max_y_chunk} "
                "and partial chunks are disabled"
            )

    def validate_spmm(self):
        if self.d % self.max_col_per_pe:
            raise ConfigError(
                f"d={self.d} is not divisible by max_col_per_pe={self.max_col_per_pe}"
            )
        self.check_chunking()

    # -- SDDMM geometry ------------------------------------------------
    @property
    def tile_rows(self) -> int:
        return self.n // self.local_height

    @property
    def tile_cols(self) -> int:
        return self.n // self.local_width

    def validate_sddmm(self):
        if self.n % self.local_height or self.n % self.local_width:
            raise ConfigError(
                f"local_height={self.local_height} and local_width={self.local_width} "
                f"must divide n={self.n}"
            )

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "KernelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown KernelConfig keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "KernelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_(self, **changes) -> "KernelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class FabricConfig:
    """Cost-model and capacity assumptions of the simulated grid.

    ``fifo_capacity=None`` models unbounded link queues, which is the regime
    in which the vectorized stream engine is exact.
    """

    fifo_capacity: Optional[int] = DEFAULT_FIFO_CAPACITY
    channel_bandwidth: int = 1
    hop_cycles: int = 1
    fmac_cycles: int = 1
    pe_memory_bytes: int = PE_MEMORY_BYTES
    grid_rows: int = GRID_ROWS
    grid_cols: int = GRID_COLS
    debug: bool = False
    max_cycles: Optional[int] = None

    def __post_init__(self):
        if self.fifo_capacity is not None:
            _check_int("fifo_capacity", self.fifo_capacity, 1)
        _check_int("channel_bandwidth", self.channel_bandwidth, 1)
        _check_int("hop_cycles", self.hop_cycles, 1)
        _check_int("fmac_cycles", self.fmac_cycles, 1)
        _check_int("pe_memory_bytes", self.pe_memory_bytes, 1)
        _check_int("grid_rows", self.grid_rows, 1)
        _check_int("grid_cols", self.grid_cols, 1)

    def unbounded(self) -> "FabricConfig":
        return replace(self, fifo_capacity=None)

    def to_dict(self) -> dict:
        return asdict(self)
