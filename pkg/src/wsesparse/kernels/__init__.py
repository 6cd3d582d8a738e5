"""SpMM and SDDMM kernels mapped onto the simulated fabric."""
from .driver import ENGINES, sddmm, spmm
from .sddmm import SddmmGeometry, build_sddmm, fit_tiles, sddmm_geometry
from .spmm import (
    VARIANTS,
    SpmmGeometry,
    build_spmm,
    build_spmm_v1,
    build_spmm_v2,
    build_spmm_v3,
    spmm_geometry,
)
