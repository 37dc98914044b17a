# Environment variable names
ENV_VAR_OUTPUT_DIR = 'SC_OUTPUT_DIR'
ENV_VAR_LOG_LEVEL = 'SC_LOG_LEVEL'
ENV_VAR_CONFIG = 'SC_CONFIG'
ENV_VAR_WORKERS = 'SC_WORKERS'

# Default paths
DEFAULT_LUMINO_DIR = '~/.lumino'
DEFAULT_STORAGE_DIR = f'{DEFAULT_LUMINO_DIR}/storage'
DEFAULT_OUTPUT_DIR = f'{DEFAULT_STORAGE_DIR}/stream_cert'
LOG_FILE_NAME = 'stream_cert.log'
LOGGER_NAME = 'StreamCert'

# Stream CSV format
LABEL_COLUMN = 'label'
FEATURE_PREFIX = 'f'
CSV_FLOAT_FORMAT = '.17g'

# Model parameter file
MODEL_FORMAT_VERSION = 1

# Attack protocol defaults (grid search, PGD)
DEFAULT_ALPHA = 15
DEFAULT_PGD_STEPS = 100
DEFAULT_NOISE_DRAWS = 8

# Training defaults (SGD with momentum, cosine annealing)
DEFAULT_EPOCHS = 30
DEFAULT_BATCH_SIZE = 64
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_MOMENTUM = 0.9
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_HIDDEN_WIDTH = 32

# Evaluation defaults
DEFAULT_MC_REPS = 200
DEFAULT_CHUNK_SIZE = 4096
STDERR_MULTIPLIER = 3.0

# Leading spawn-key entries that separate the random substreams
NOISE_KEY_ITEM = 0  # (tag, repetition, item)
NOISE_KEY_WINDOW = 1  # (tag, repetition, window)
NOISE_KEY_ATTACK = 2  # (tag, step, draw)

# Trace directory layout
TRACE_CLEAN_FILE = 'clean.csv'
TRACE_PERTURBED_FILE = 'perturbed.csv'
TRACE_META_FILE = 'trace.json'

# Numerical tolerances
BUDGET_TOLERANCE = 1e-9
LEMMA_TOLERANCE = 1e-12
CONCAVITY_TOLERANCE = 1e-12
GRADIENT_TOLERANCE = 1e-4
ERF_CUTOFF = 6.0  # erfc(6) < 2.2e-17

# Exhaustive enumeration limit for discrete instances
MAX_ENUMERATION = 100_000
ORACLE_MC_DRAWS = 100_000

# Results schema (fixed column order)
RESULT_COLUMNS = (
    'eps',
    'clean_z',
    'clean_z_tilde',
    'clean_z_tilde_stderr',
    'certified_lower',
    'attacked_z',
    'attacked_z_tilde',
    'attacked_z_tilde_stderr',
)

# Curves written as plot data
PLOT_CURVES = ('clean_z', 'clean_z_tilde', 'certified_lower', 'attacked_z', 'attacked_z_tilde')

# Certificate report schema
CERTIFICATE_COLUMNS = (
    'w',
    'threat_model',
    'epsilon',
    'psi_at_eps',
    'bound',
    'z_tilde_hat',
    'stderr',
    'certified_lower',
    'certified_lower_adjusted',
)

# Exit codes
EXIT_FAILURE = 1
EXIT_USAGE = 2
