"""Wavelet-level PE grid simulator."""
from .core import (
    Barrier,
    D2HCopy,
    Fabric,
    H2DCopy,
    HostSink,
    Placement,
    Program,
    Route,
    TaskContext,
    load_program,
    run,
)
from .report import SimReport
