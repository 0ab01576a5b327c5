import logging
import os

BASE_DIR = os.path.dirname(os.path.abspath(__file__))
OUTPUT_DIR = os.path.join(os.path.dirname(BASE_DIR), "Output")
LOG_FILE = os.environ.get("HARDHANK_LOG_FILE", os.path.join(BASE_DIR, "hardhank.log"))

# Worker fan-out for analysis jobs (irf states, sweeps)
MAX_WORKERS = max(1, int(os.environ.get("HARDHANK_THREADS", os.cpu_count() or 1)))

# Numerical tolerances
BINDING_TOL = 1e-12  # |w - bound| <= BINDING_TOL * max(1, |bound|) counts as binding
CLAMP_TOL = 1e-12  # final safety clamp moving a value further than this flags an edge case
ZLB_TOL = 1e-9  # R_prev <= 1 + ZLB_TOL is a zero-lower-bound episode
NORMALIZATION_FLOOR = 1e-14

# Network defaults (full-scale runs use 5 x 128 with 100 agents)
DEFAULT_HIDDEN_LAYERS = 3
DEFAULT_WIDTH = 64
DEFAULT_ACTIVATION = "tanh"
INIT_SCALE = 1e-2

# ADAM
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-12

# Training
DEFAULT_N_AGENTS = 10
MAX_FORWARD_SIMS = 20
DEFAULT_PENALTY_WEIGHT = 1e2
REPORT_WINDOW = 50  # loss statistics are averaged over the final 50 iterations
LEARNING_RATES = {
    "hard": 1e-4,
    "agg_hard": 1e-4,
    "soft": 1e-6,
    "idio_hard": 1e-6,
}

# Analysis defaults
NORM_PERIODS = 10_000
DEFAULT_BBAR = -0.05

# Structural parameters: name -> (baseline, min, max). Equal min and max means calibrated.
CALIBRATION = {
    "beta": (0.9975, 0.9975, 0.9975),
    "sigma": (1.0, 1.0, 1.0),
    "eta": (1.0, 1.0, 1.0),
    "epsilon": (11.0, 11.0, 11.0),
    "chi": (0.91, 0.91, 0.91),
    "habit": (0.0, 0.0, 0.0),
    "phi": (1000.0, 700.0, 1300.0),
    "theta_pi": (2.0, 1.5, 2.5),
    "theta_y": (0.25, 0.05, 0.5),
    "pi_bar": (1.005, 1.005, 1.005),
    "y_bar": (1.0, 1.0, 1.0),
    "b_min": (-0.05, -0.5, -0.01),
    "rho_psi": (0.7, 0.5, 0.9),
    "rho_s": (0.8, 0.7, 0.9),
    "rho_a": (0.8, 0.7, 0.9),
    "rho_r": (0.25, 0.1, 0.5),
    "sigma_psi": (0.03, 0.01, 0.05),
    "sigma_s": (0.05, 0.01, 0.08),
    "sigma_a": (0.008, 0.003, 0.012),
    "sigma_mp": (0.005, 0.001, 0.008),
}
PARAM_NAMES = tuple(CALIBRATION)


def setup_logging() -> logging.Logger:
    """Configure and return the package logger."""
    logger = logging.getLogger("hardhank")
    if logger.handlers:
        return logger

    logger.setLevel(logging.INFO)
    file_handler = logging.FileHandler(LOG_FILE, encoding="utf-8")
    formatter = logging.Formatter("%(asctime)s %(levelname)s %(name)s - %(message)s")
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    return logger


logger = setup_logging()

__all__ = [
    "BASE_DIR",
    "OUTPUT_DIR",
    "LOG_FILE",
    "MAX_WORKERS",
    "BINDING_TOL",
    "CLAMP_TOL",
    "ZLB_TOL",
    "NORMALIZATION_FLOOR",
    "DEFAULT_HIDDEN_LAYERS",
    "DEFAULT_WIDTH",
    "DEFAULT_ACTIVATION",
    "INIT_SCALE",
    "ADAM_BETA1",
    "ADAM_BETA2",
    "ADAM_EPS",
    "DEFAULT_N_AGENTS",
    "MAX_FORWARD_SIMS",
    "DEFAULT_PENALTY_WEIGHT",
    "REPORT_WINDOW",
    "LEARNING_RATES",
    "NORM_PERIODS",
    "DEFAULT_BBAR",
    "CALIBRATION",
    "PARAM_NAMES",
    "logger",
    "setup_logging",
]
