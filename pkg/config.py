"""Configuration constants for the nh-sense simulator"""

import os

from dotenv import load_dotenv

load_dotenv()

APP_TITLE = "nh-sense"
APP_VERSION = "1.0.0"
NETLIST_HEADER = "# nh-sense netlist v1"

LOG_LEVEL = os.getenv("NH_SENSE_LOG_LEVEL", "INFO")
THREADS = int(os.getenv("NH_SENSE_THREADS", "1"))

# Linear algebra
MAX_MATRIX_DIM = 2000
CONDITION_LIMIT = 1e12  # eigenvalue condition number above which a plain solve is unreliable
GAUGE_RATIO_LIMIT = 1e12  # max_j r_j^(L_j - 1) above which solves are gauged
GAUGE_LOG_LIMIT = 700.0  # exp overflow guard for gauge factors
RESIDUAL_TOLERANCE = 1e-6
BIORTHOGONAL_TOLERANCE = 1e-6
CLUSTER_TOLERANCE = 1e-8  # eigenvalues closer than this times the matrix norm are paired as one block
ZERO_MODE_TOLERANCE = 1e-6

# Sensing
DEFAULT_DEVIATION_CAP = 0.10
# |dE| floor reproducing a lower limit of 1e-33 at r = 20, 13 x 13
DETECTION_THRESHOLD = 20.0 ** 12 / 49.0 * 1e-33
RANGE_BISECTION_TOL_DEX = 0.01
RANGE_BRACKET_LOW = 1e-8  # first-order |dE| / coupling scale at the lower bracket
RANGE_BRACKET_HIGH = 1e2

# Circuit
DEFAULT_C1 = 5e-12
DEFAULT_RATIO = 160.0
DEFAULT_C2 = DEFAULT_C1 / DEFAULT_RATIO
DEFAULT_GROUND_L = 1e-9
DEFAULT_GROUND_SCHEME = "redundant_capacitor"
GROUND_SCHEMES = ("redundant_capacitor", "negative_impedance")
MAX_UNITS = 12
UNIT_ROWS = 3
# offsets whose first-order estimate is within this many ulps of the gauged matrix norm skip the solve
SHIFT_RESOLUTION_FACTOR = 1e4

# Measurement
DEFAULT_DRIVE_AMPLITUDE = 0.1
DEFAULT_NOISE_FLOOR_DB = -80.0
COARSE_STEP_HZ = 1e6
FINE_STEP_HZ = 1e3
DEFAULT_SCAN_HALF_WIDTH_HZ = 5e6
IMPEDANCE_CAP_OHM = 1e12
CROSSTALK_TONES = 8
CROSSTALK_BANDWIDTH_HZ = FINE_STEP_HZ  # detector bandwidth the tone offsets fall in
CROSSTALK_STOP_WIDTH_HZ = 2e6  # half width of the LC stop band around f0
DEFAULT_F1_HZ = 1.27e9
GRID_RETRIES = 2

# Artifacts
OUTPUT_FORMATS = ("csv", "json", "svg")
DEFAULT_OUTPUT_DIR = "results"
ERROR_FILE = "error.json"
REPORT_FILE = "report.json"

# Plots
PLOT_WIDTH = 640
PLOT_HEIGHT = 420
PLOT_DPI = 100

MSG_RUN_SUCCESS = "Scenario completed"
MSG_VALIDATION_FAILED = "Scenario validation failed"
MSG_NUMERICAL_FAILURE = "Numerical failure"
MSG_SCENARIO_VALID = "Scenario is valid"
