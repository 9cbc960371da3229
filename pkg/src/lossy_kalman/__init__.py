"""Kalman filtering over lossy links: critical arrival probability and simulation.

>>> from lossy_kalman import LinearSystem, critical_value
>>> critical_value(LinearSystem(A=[[2.0]], C=[[1.0]])).exact
0.75
"""

from .critical import (
    AngleHintError,
    CriticalValueResult,
    RationalAngle,
    classify_angle,
    critical_value,
    modified_dirichlet,
    second_order_critical_value,
)
from .filtering import (
    ErasureTrace,
    FilterState,
    grammian_partial_sum,
    information_step,
    kalman_step,
    ml_covariance,
    riccati_step,
    riccati_trajectory,
)
from .harness import (
    SimulationSummary,
    SweepResult,
    TrialConfig,
    empirical_pc,
    estimate,
    simulate_trajectory,
)
from .kernels import BACKEND
from .spectral import DegeneracyReport, EquiBlock, SpectralForm, diagonalize, equi_blocks
from .system import (
    AngleHint,
    AssumptionError,
    DimensionError,
    LinearSystem,
    NumericError,
    SystemFileError,
    ValidationReport,
    load_system,
    save_system,
    validate,
)

__version__ = "0.1.0"
