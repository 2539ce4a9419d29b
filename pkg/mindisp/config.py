import os

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# --- Time discretization ---
SUBSTEPS_PER_KNOT = 5
KNOTS_PER_UNIT_TIME = 20
HORIZON = 6.0

# --- Control space ---
PENALTY_WEIGHT = 0.25  # λ in b·u + λ‖u‖²; not published, calibrated on the theta benchmark
GRID_RESOLUTION = 21  # points per axis for the grid-search minimizer
SEARCH_BOUND = 5.0  # half-width of the grid-search box when the space is unbounded

# --- Monte-Carlo sizes (operating configuration of the theta benchmark) ---
ADJOINT_PATHS = 100  # N
SYNTHESIS_PARTICLES = 1  # M
EVAL_PATHS = 1000  # test sample for the averaged performance
MAX_ITERS = 10
TOLERANCE = 1e-3  # ε on the best-so-far decrease
PATIENCE = 3
SEED = 20240501

# Finite differences: h_i = FD_RELATIVE_STEP * max(1, |x_i|)
FD_RELATIVE_STEP = 1e-3

# --- Theta model ---
THETA_BETA = 0.05
THETA_PHASE_MEAN = 3.141592653589793
THETA_PHASE_STD = 0.2
THETA_CURRENT_MEAN = -1.5  # excitable: the uncontrolled population rests below threshold
THETA_CURRENT_STD = 0.2
SPIKE_POWER = 1

# --- Output ---
OUTPUT_DIR = os.getenv("MINDISP_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("MINDISP_LOG_LEVEL", "INFO")
CSV_FLOAT_FORMAT = "%.17g"
PLOT_PATHS = 50  # particles in paths_initial.csv / paths_learned.csv

# --- Diagnostics ---
DIAGNOSE_PATHS = 10_000
DIAGNOSE_PARTICLES = 1000
DIAGNOSE_SIGMAS = 3.0
