"""
Runtime Configuration

Handles thread counts, output locations and inner-solver budgets.
Values come from the environment (optionally a .env file) so that sweeps
can be tuned per machine without editing experiment files.
"""

import os
from dotenv import load_dotenv

load_dotenv(override=True)

# Execution
DEFAULT_THREADS = int(os.getenv("PNP_THREADS", str(os.cpu_count() or 1)))
DEFAULT_OUTPUT_DIR = os.getenv("PNP_OUTPUT_DIR", ".tmp")
LOG_LEVEL = os.getenv("PNP_LOG_LEVEL", "INFO")

# TV prox inner budget (per outer iteration)
DEFAULT_TV_MAX_ITER = int(os.getenv("PNP_TV_MAX_ITER", "50"))
DEFAULT_TV_TOL = float(os.getenv("PNP_TV_TOL", "1e-5"))

# External denoiser process
DEFAULT_EXTERNAL_TIMEOUT = float(os.getenv("PNP_EXTERNAL_TIMEOUT", "60"))

# Metrics
DEFAULT_BORDER = int(os.getenv("PNP_BORDER", "20"))


def get_runtime_config():
    """Get current runtime configuration."""
    return {
        "threads": DEFAULT_THREADS,
        "output_dir": DEFAULT_OUTPUT_DIR,
        "log_level": LOG_LEVEL,
        "tv_max_iter": DEFAULT_TV_MAX_ITER,
        "tv_tol": DEFAULT_TV_TOL,
        "external_timeout": DEFAULT_EXTERNAL_TIMEOUT,
        "border": DEFAULT_BORDER,
    }
