"""Joint transmit/reflective beamforming for IRS-aided sensing under
per-user SINR constraints, with a self-contained dense conic solver and
a Monte-Carlo experiment harness."""

__version__ = "0.1.0"

from .numerics import (
    DegenerateGeometry,
    InvalidInput,
    ReconstructionDegenerate,
    SingularMatrix,
)

__all__ = [
    "InvalidInput",
    "SingularMatrix",
    "DegenerateGeometry",
    "ReconstructionDegenerate",
    "__version__",
]
