"""Extrinsic self-calibration of rigidly mounted IMUs.

Measurements are split into fixed-length segments; a subset is selected by
the information each segment adds about the extrinsics, and the extrinsics
are then estimated by nonlinear least squares over that subset.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    CsvFormatError,
    DegenerateMotionError,
    ImuCalError,
    InputError,
    NumericalError,
    SingularInformationError,
    StructuralError,
    UndefinedCorrelationError,
    UnobservableError,
)
from .estimation import LMOptions, calibrate  # noqa: E402
from .initialization import initial_state  # noqa: E402
from .selection import (  # noqa: E402
    run_policy,
    select_baseline,
    select_greedy_init_param,
    select_greedy_original,
    select_m_largest,
)
from .simulator import (  # noqa: E402
    EDGE_CASE_NOISE,
    MeasurementSet,
    NoiseSpec,
    RigConfig,
    load_csv,
    save_csv,
    simulate,
    simulate_edge_case,
)
from .state import CalibrationState  # noqa: E402

__all__ = [
    "__version__", "CalibrationState", "ConfigError", "CsvFormatError", "DegenerateMotionError",
    "EDGE_CASE_NOISE", "ImuCalError", "InputError", "LMOptions", "MeasurementSet", "NoiseSpec",
    "NumericalError", "RigConfig", "SingularInformationError", "StructuralError",
    "UndefinedCorrelationError", "UnobservableError", "calibrate", "initial_state", "load_csv",
    "run_policy", "save_csv", "select_baseline", "select_greedy_init_param", "select_greedy_original",
    "select_m_largest", "simulate", "simulate_edge_case",
]
