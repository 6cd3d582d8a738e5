"""Exception hierarchy shared by the formats, fabric and kernel layers."""


class WseSimError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(WseSimError, ValueError):
    """A kernel or fabric parameter violates its invariants."""


class DimensionError(WseSimError, ValueError):
    """Operand shapes are incompatible."""


class CorruptStreamError(WseSimError, ValueError):
    """A SELLPACK-like image does not satisfy its sentinel invariants."""


class TileOverflowError(WseSimError, ValueError):
    """A COO tile holds more nonzeros than ``max_nonzeros``."""

    def __init__(self, tile, count, capacity):
        self.tile = tile
        self.count = count
        self.capacity = capacity
        super().__init__(
            f"tile {tile} holds {count} nonzeros, exceeding max_nonzeros={capacity}"
        )


class PlacementError(WseSimError, ValueError):
    """A kernel does not fit on the simulated grid."""


class MemoryBudgetError(PlacementError):
    """A PE program declares more local memory than the PE provides."""

    def __init__(self, coord, needed, budget):
        self.coord = coord
        self.needed = needed
        self.budget = budget
        super().__init__(
            f"PE {coord} needs {needed} B of local memory, budget is {budget} B "
            f"(over by {needed - budget} B)"
        )


class DeadlockError(WseSimError, RuntimeError):
    """The fabric stopped making progress while work remained."""
