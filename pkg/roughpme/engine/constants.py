"""
Lab Constants and Defaults
"""

# Domain defaults
DEFAULT_LO = 0.0
DEFAULT_HI = 1.0
MIN_CELLS = 4

# Cutoff family
CUTOFF_QUADRATURE_NODES = 48

# Rough path metric
ALPHA_MIN = 1.0 / 3.0
DEFAULT_ALPHA = 0.4
GEOMETRICITY_TOL = 1e-12

# Characteristics
DEFAULT_FLOW_DT = 1e-3
DEFAULT_R0 = 50.0

# Solver
INNER_SOLVE_TOL = 1e-10
INNER_SOLVE_MAX_ITER = 200
DEFAULT_CFL_GUARD = 0.9
DEFAULT_THETA_REG = 1e-6
SUPPORT_THRESHOLD = 1e-8

# Kinetic module
DEFAULT_XI_BINS = 64
DEFAULT_XI_MARGIN = 0.25

# Experiments
OUTPUT_DIR_ENV = "ROUGHPME_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "results"
REPORT_FILE = "report.json"
SERIES_FILE = "series.csv"

# Exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2


def default_gamma(m: float) -> float:
    """Inner-layer exponent of the cutoff family, (m+2) min 3"""
    return min(m + 2.0, 3.0)


# Scenario kinds
class ScenarioKind:
    CONTRACTION = "contraction"
    POSITIVITY_MASS = "positivity-mass"
    COCYCLE = "cocycle"
    NOISE_CONTINUITY = "noise-continuity"
    VANISHING_VISCOSITY = "vanishing-viscosity"
    FLOW_STABILITY = "flow-stability"
    ESTIMATE_SUITE = "estimate-suite"
    HEAT_ORACLE = "heat-oracle"

    ALL = (
        CONTRACTION,
        POSITIVITY_MASS,
        COCYCLE,
        NOISE_CONTINUITY,
        VANISHING_VISCOSITY,
        FLOW_STABILITY,
        ESTIMATE_SUITE,
        HEAT_ORACLE,
    )


# Default per-check tolerances
DEFAULT_TOLERANCES = {
    'contraction': 0.02,
    'negativity': 1e-8,
    'mass_drift': 1e-8,
    'cocycle_factor': 10.0,
    'noise_finest_relative': 1e-2,
    'stability_factor': 2.0,
    'inverse_residual': 1e-8,
    'det_jacobian': 1e-6,
    'boundary_standstill': 1e-10,
    'boundary_flatness': 0.5,
    'perturbation_factor': 10.0,
    'poincare_relative': 1e-2,
    'residual_ratio_min': 1.5,
    'residual_ratio_max': 3.0,
    'heat_l2': 5e-4,
}
