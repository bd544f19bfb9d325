"""Compressed-sensing reconstruction of substance dynamics from
undersampled multi-spectral spectroscopic imaging signals."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DivergenceError,
    MrsiCsError,
    ParameterError,
    ScheduleError,
    ShapeError,
)
from .model import (
    AcquisitionGeometry,
    BaseSpectraSet,
    FactorizationCache,
    SamplePoint,
    SamplingSchedule,
    SignalSet,
    SubstanceDistribution,
    apply_adjoint,
    apply_forward,
    dft_spatial,
    dft_spectral,
    normal_matrix,
)
from .oracle import OracleConfig, kkt_residual, oracle_solve
from .phantom import (
    ConstantProfile,
    Peak,
    PhantomConfig,
    RampProfile,
    SubstanceSpec,
    acquire,
    make_base_spectra,
    make_phantom,
)
from .sampling import (
    SamplerConfig,
    build_schedule,
    default_psi,
    sobol_sequence,
    spectral_index_transform,
)
from .selection import CvPlan, cv_rmse, grid_search, split_readouts
from .solver import (
    BandCholesky,
    ResidualLog,
    SolverConfig,
    SolverState,
    band_cholesky,
    objective_value,
    project_constraint,
    soft_threshold,
    solve,
    update_h,
    update_x_frame,
)
