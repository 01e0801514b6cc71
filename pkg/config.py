"""
Configuration settings for the Stateful Online Recommender Lab
"""

import os
from dotenv import load_dotenv
from typing import Dict, List

# Load environment variables
load_dotenv()

# Directory Paths
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
OUTPUT_DIR = os.getenv("OUTPUT_DIR", os.path.join(BASE_DIR, "runs"))
LOGS_DIR = os.path.join(BASE_DIR, "logs")

# Tool identity (written into every run manifest)
TOOL_NAME = "stateful-online-recs"
TOOL_VERSION = "1.0.0"

# Model Configuration
DEFAULT_EMBEDDING_DIM = 4
DEFAULT_LEARNING_RATE = 0.05
DEFAULT_L2_REG = 0.0
DEFAULT_INIT_SCALE = 0.1
DEFAULT_BUCKETS = 4096
DEFAULT_SEED = 0
LOSS_CLAMP = 1e-7

# Pre-training Configuration
PRETRAIN_TOLERANCE = 1e-3
PRETRAIN_MAX_PASSES = 10

# Convergence reporting
CONVERGENCE_TOLERANCE = 0.05

# Synthetic Stream Configuration
SECONDS_PER_DAY = 86400
STREAM_START_TS = 1609459200  # 2021-01-01T00:00:00Z, day aligned
DEFAULT_USERS = 20
DEFAULT_ITEMS = 15
DEFAULT_LATENT_DIM = 2
DEFAULT_DAYS = 12
DEFAULT_EVENTS_PER_DAY = 2000
DEFAULT_DRIFT_RATE = 0.2
DEFAULT_CHURN_RATE = 0.05
DEFAULT_CONTEXT_DIM = 0
DEFAULT_LABEL_BIAS = 0.0

# Policy aliases accepted on the command line
CADENCE_ALIASES: Dict[str, int] = {
    "daily": 1,
    "weekly": 7,
}

# Collision sweep (buckets from 500k to 4M)
DEFAULT_COLLISION_BUCKETS: List[int] = [500_000, 1_000_000, 2_000_000, 3_000_000, 4_000_000]
DEFAULT_NUM_IDS = 200_000

# Output file names
EVENTS_FILENAME = "events.jsonl"
METRICS_FILENAME = "metrics.csv"
SUMMARY_FILENAME = "summary.json"
LIFT_FILENAME = "lift.csv"
COLLISIONS_FILENAME = "collisions.csv"
MANIFEST_FILENAME = "manifest.json"

# Logging Configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_FILE = os.getenv("LOG_FILE", os.path.join(LOGS_DIR, "online_recs.log"))

# Process exit codes
EXIT_CODES = {
    "success": 0,
    "usage": 2,
    "data": 3,
    "divergence": 4,
    "io": 5,
}

# Error Messages
ERROR_MESSAGES = {
    "usage": "Invalid arguments. Run with --help for usage.",
    "data": "Input data failed validation. See the log for the offending line.",
    "divergence": "Training diverged to a non-finite parameter. Lower --lr.",
    "io": "File could not be read or written.",
    "too_few_policies": "compare needs at least two policies.",
}
