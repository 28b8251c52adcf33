"""Finite-strain computational homogenization with an HDMR neural-network
energy surrogate.

Offline stage: :mod:`micro` solves periodic cell problems with an
FFT-Galerkin Newton-Krylov scheme, :mod:`dataset` samples macroscopic
deformations, :mod:`surrogate` fits the energy.  Online stage: :mod:`fem`
solves macroscopic plane-strain problems with the surrogate, nested
micro-solves or a direct material at each quadrature point.
"""
from . import dataset, fem, materials, micro, oracles, surrogate, tensor
from ._accel import USE_NUMBA
from .errors import (
    CgStalled,
    FormatError,
    HomogError,
    InsufficientData,
    NewtonDiverged,
    NonPositiveJacobian,
    RejectionOverflow,
    RootFindFailed,
    SingularTensor,
    TrainingDiverged,
)

__version__ = "0.1.0"
