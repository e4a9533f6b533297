"""Local trajectory null control of 2D Boussinesq flow with temperature-only controls.

Modules: :mod:`weights` (Carleman weights), :mod:`grid` (MAC discretization),
:mod:`forward`, :mod:`adjoint`, :mod:`hum` (penalized dual control),
:mod:`picard` (nonlinear fixed point), :mod:`verify` and :mod:`cli`.
"""
from .errors import (AdmissibilityError, CflViolation, NullCtrlError, OverflowPolicyError,
                     ParseError, PoissonNoConverge, StructureError, ValidationError)
from .grid import GridSpec
from .weights import DomainSpec, build_eta, build_time_profile, build_weights
from .hum import DualConfig, hum_solve
from .picard import PicardConfig, picard_control

__version__ = "0.1.0"
