"""
Environment-driven defaults for the command line and the harness
"""

import os

from dotenv import load_dotenv

# Load .env once, at import
load_dotenv()

OUTPUT_DIR = os.getenv('DELAY_BANDITS_OUTPUT_DIR', './runs')
LOG_LEVEL = os.getenv('DELAY_BANDITS_LOG_LEVEL', 'INFO')
JOBS = int(os.getenv('DELAY_BANDITS_JOBS', '1'))

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Absolute tolerance for comparisons between instance-scale quantities
TOLERANCE = 1e-9
# Maximum reconstruction residual accepted for a spanner decomposition
RECONSTRUCTION_TOLERANCE = 1e-7
# Singular values below this fraction of the largest are treated as zero
RANK_THRESHOLD = 1e-10
