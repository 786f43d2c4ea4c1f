"""
Config file for sampler defaults, suite defaults, tolerances, output names, etc.
"""

#=====Logging=====

LOG_LEVEL_ENV_VAR = "MIXBMA_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
LOG_DATE_FORMAT = "%H:%M:%S"

#=====Ensembles=====

PRIOR_WEIGHT_TOLERANCE = 1e-12

#=====Sampler=====

DEFAULT_BURN_IN_FRACTION = 0.1
DEFAULT_THIN = 1
MIN_RETAINED_DRAWS = 100
ADAPT_BLOCK_SIZE = 200 #iterations between two scale adaptations during burn-in
TARGET_ACCEPTANCE_WINDOW = (0.2, 0.8)
ADAPT_INCREASE_FACTOR = 2.0
ADAPT_DECREASE_FACTOR = 0.5

ACF_THRESHOLD = 0.05
MAX_SUGGESTED_THIN = 200

#=====Analysis=====

CI_Z_VALUE = 1.96
SUMMARY_QUANTILES = (0.025, 0.5, 0.975)
HISTOGRAM_BINS = 50
LOW_ESS_WARNING = 10
BOUND_TOLERANCE = 1e-9

#=====Poisson/Geometric suite=====

POISGEO_PRIOR_WEIGHTS = (0.5, 0.5)
POISGEO_ITERATIONS = 100_000
POISGEO_THIN = 50
POISGEO_PROPOSAL_SCALE = 0.5
POISGEO_SIMULATION = {"n": 10, "lambda": 1.0}

#=====Linear code suite=====

LINCODE_PRIOR_WEIGHTS = (0.5, 0.5)
LINCODE_ITERATIONS = 10_000
LINCODE_THIN = 10
KERNEL_GAMMA = 0.2
KERNEL_JITTER = 1e-8
KAPPA_GRID_SIZE = 2048
LINCODE_SIMULATION = {
    "n": 25,
    "theta": 2.0,
    "lambda": 0.1,
    "k": 25.0, #kappa = 0.04
}
PREDICTION_GRID_POINTS = 101

#=====Gaussian check suite=====

GAUSSIAN_PRIOR_WEIGHTS = (0.5, 0.5)
GAUSSIAN_ITERATIONS = 110_000
GAUSSIAN_PROPOSAL_SCALE = 1.0

#=====Oracle=====

QUAD_ABS_TOL = 1e-10
QUAD_REL_TOL = 1e-8
QUAD_LIMIT = 200
ETA_BOUND = 40.0 #truncation of the log-scale axis
CLOSED_FORM_REL_TOL = 1e-6
MC_SE_MULTIPLIER = 3.0

#=====Outputs=====

CHAIN_FILE = "chain.csv"
ACF_FILE = "acf.csv"
REPORT_FILE = "report.json"
ORACLE_FILE = "oracle.json"
TRUTH_FILE = "truth.json"
PREDICTION_FILE = "prediction.csv"
POISGEO_DATA_FILE = "counts.txt"
LINCODE_DATA_FILE = "data.csv"
FLOAT_FORMAT = "%.17g"
