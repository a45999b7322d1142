#################
# Misc settings #
#################

# Base seed for benchmarks and training runs
RANDOM_SEED: int = 42

##################
# Label settings #
##################

# Row sums of a prediction matrix must be within this tolerance of 1
ROW_SUM_TOL: float = 1e-6

# Probabilities are clamped to this value before taking logs in SEC
PROB_CLAMP: float = 1e-8

# Clamp used by the entropy confidence measure
ENTROPY_EPS: float = 1e-12

#######################
# Confidence settings #
#######################

# Confidence measure used to route samples into the SEC branch.
# Values in ['maxprob', 'entropy', 'scorediff'].
CONFIDENCE_MEASURE: str = "maxprob"

# Whether entropy and score difference only look at the ID columns
# (renormalized). False uses all columns.
CONFIDENCE_ID_COLUMNS_ONLY: bool = False

#####################
# Sinkhorn settings #
#####################

# Entropic regularization strength (kernel is P ** SINKHORN_REG)
SINKHORN_REG: float = 25.0

# Number of alternating row/column scalings
SINKHORN_ITERS: int = 32

# Stop early once the row marginal violation falls below this value
SINKHORN_TOL: float = 1e-6

# Entries within this relative distance of a column maximum count as tied
# when hardening an assignment
HARDEN_TIE_TOL: float = 1e-9

#####################
# Training settings #
#####################

# Confidence threshold of the RPL branch
TAU: float = 0.95

# Confidence threshold of the SEC branch
GAMMA: float = 0.3

# Number of extra classes (K)
K_EXTRA: int = 4

# Total epochs (E), pretrain epochs (E_pt) and pseudo-label interval (E_pl)
EPOCHS: int = 400
PRETRAIN_EPOCHS: int = 50
PL_INTERVAL: int = 2

# Adam learning rate
LEARNING_RATE: float = 3e-3

# Size of the unlabeled and of the labeled mini-batch
BATCH_SIZE: int = 128

# Decay of the evaluation model
EMA_DECAY: float = 0.999

# Use min(decay, (1 + t) / (10 + t)) as decay during the first steps
EMA_WARMUP: bool = False

# Ramp up the weight of the pseudo-label loss after pretraining
LAMBDA_RAMP: bool = False
RAMP_HORIZON: int = 40000

# Number of hidden units of the classifier.
# 0 trains a linear softmax regression.
HIDDEN_UNITS: int = 32

# Hidden layer activation. Values in ['relu', 'tanh'].
HIDDEN_ACTIVATION: str = "relu"

# Which model creates the pseudo-labels. Values in ['raw', 'ema'].
PL_SOURCE: str = "raw"

# Final accuracy is averaged over this fraction of the last epochs
LAST_EPOCHS_FRACTION: float = 0.05

######################
# Benchmark settings #
######################

K_ID: int = 6
K_OOD: int = 4
FEATURE_DIM: int = 16
N_LABELED_PER_CLASS: int = 20
M_UNLABELED: int = 2000
N_TEST_PER_CLASS: int = 200
MISMATCH_RATIO: float = 0.5
CLASS_SEPARATION: float = 3.0
NOISE_SIGMA: float = 1.0
OOD_IMBALANCE_RATIO: float = 1.0

#######################
# Experiment settings #
#######################

# Output folder for experiment artifacts
OUTPUT_PATH: str = "results/"

# Number of worker processes for experiment cells
CPU_THREADS: int = 4

# Environment variable that caps the number of worker processes
THREADS_ENV_VAR: str = "UPSILON_MAX_THREADS"

#####################
# Misc runtime vars #
#####################
ERROR_LOG_FILE: str = "error_log.txt"

######################
# Get and set config #
######################


def getConfig():
    return {
        "RANDOM_SEED": RANDOM_SEED,
        "ROW_SUM_TOL": ROW_SUM_TOL,
        "PROB_CLAMP": PROB_CLAMP,
        "ENTROPY_EPS": ENTROPY_EPS,
        "CONFIDENCE_MEASURE": CONFIDENCE_MEASURE,
        "CONFIDENCE_ID_COLUMNS_ONLY": CONFIDENCE_ID_COLUMNS_ONLY,
        "SINKHORN_REG": SINKHORN_REG,
        "SINKHORN_ITERS": SINKHORN_ITERS,
        "SINKHORN_TOL": SINKHORN_TOL,
        "HARDEN_TIE_TOL": HARDEN_TIE_TOL,
        "TAU": TAU,
        "GAMMA": GAMMA,
        "K_EXTRA": K_EXTRA,
        "EPOCHS": EPOCHS,
        "PRETRAIN_EPOCHS": PRETRAIN_EPOCHS,
        "PL_INTERVAL": PL_INTERVAL,
        "LEARNING_RATE": LEARNING_RATE,
        "BATCH_SIZE": BATCH_SIZE,
        "EMA_DECAY": EMA_DECAY,
        "EMA_WARMUP": EMA_WARMUP,
        "LAMBDA_RAMP": LAMBDA_RAMP,
        "RAMP_HORIZON": RAMP_HORIZON,
        "HIDDEN_UNITS": HIDDEN_UNITS,
        "HIDDEN_ACTIVATION": HIDDEN_ACTIVATION,
        "PL_SOURCE": PL_SOURCE,
        "LAST_EPOCHS_FRACTION": LAST_EPOCHS_FRACTION,
        "K_ID": K_ID,
        "K_OOD": K_OOD,
        "FEATURE_DIM": FEATURE_DIM,
        "N_LABELED_PER_CLASS": N_LABELED_PER_CLASS,
        "M_UNLABELED": M_UNLABELED,
        "N_TEST_PER_CLASS": N_TEST_PER_CLASS,
        "MISMATCH_RATIO": MISMATCH_RATIO,
        "CLASS_SEPARATION": CLASS_SEPARATION,
        "NOISE_SIGMA": NOISE_SIGMA,
        "OOD_IMBALANCE_RATIO": OOD_IMBALANCE_RATIO,
        "OUTPUT_PATH": OUTPUT_PATH,
        "CPU_THREADS": CPU_THREADS,
        "THREADS_ENV_VAR": THREADS_ENV_VAR,
        "ERROR_LOG_FILE": ERROR_LOG_FILE,
    }


def setConfig(c):
    global RANDOM_SEED
    global ROW_SUM_TOL
    global PROB_CLAMP
    global ENTROPY_EPS
    global CONFIDENCE_MEASURE
    global CONFIDENCE_ID_COLUMNS_ONLY
    global SINKHORN_REG
    global SINKHORN_ITERS
    global SINKHORN_TOL
    global HARDEN_TIE_TOL
    global TAU
    global GAMMA
    global K_EXTRA
    global EPOCHS
    global PRETRAIN_EPOCHS
    global PL_INTERVAL
    global LEARNING_RATE
    global BATCH_SIZE
    global EMA_DECAY
    global EMA_WARMUP
    global LAMBDA_RAMP
    global RAMP_HORIZON
    global HIDDEN_UNITS
    global HIDDEN_ACTIVATION
    global PL_SOURCE
    global LAST_EPOCHS_FRACTION
    global K_ID
    global K_OOD
    global FEATURE_DIM
    global N_LABELED_PER_CLASS
    global M_UNLABELED
    global N_TEST_PER_CLASS
    global MISMATCH_RATIO
    global CLASS_SEPARATION
    global NOISE_SIGMA
    global OOD_IMBALANCE_RATIO
    global OUTPUT_PATH
    global CPU_THREADS
    global THREADS_ENV_VAR
    global ERROR_LOG_FILE

    RANDOM_SEED = c["RANDOM_SEED"]
    ROW_SUM_TOL = c["ROW_SUM_TOL"]
    PROB_CLAMP = c["PROB_CLAMP"]
    ENTROPY_EPS = c["ENTROPY_EPS"]
    CONFIDENCE_MEASURE = c["CONFIDENCE_MEASURE"]
    CONFIDENCE_ID_COLUMNS_ONLY = c["CONFIDENCE_ID_COLUMNS_ONLY"]
    SINKHORN_REG = c["SINKHORN_REG"]
    SINKHORN_ITERS = c["SINKHORN_ITERS"]
    SINKHORN_TOL = c["SINKHORN_TOL"]
    HARDEN_TIE_TOL = c["HARDEN_TIE_TOL"]
    TAU = c["TAU"]
    GAMMA = c["GAMMA"]
    K_EXTRA = c["K_EXTRA"]
    EPOCHS = c["EPOCHS"]
    PRETRAIN_EPOCHS = c["PRETRAIN_EPOCHS"]
    PL_INTERVAL = c["PL_INTERVAL"]
    LEARNING_RATE = c["LEARNING_RATE"]
    BATCH_SIZE = c["BATCH_SIZE"]
    EMA_DECAY = c["EMA_DECAY"]
    EMA_WARMUP = c["EMA_WARMUP"]
    LAMBDA_RAMP = c["LAMBDA_RAMP"]
    RAMP_HORIZON = c["RAMP_HORIZON"]
    HIDDEN_UNITS = c["HIDDEN_UNITS"]
    HIDDEN_ACTIVATION = c["HIDDEN_ACTIVATION"]
    PL_SOURCE = c["PL_SOURCE"]
    LAST_EPOCHS_FRACTION = c["LAST_EPOCHS_FRACTION"]
    K_ID = c["K_ID"]
    K_OOD = c["K_OOD"]
    FEATURE_DIM = c["FEATURE_DIM"]
    N_LABELED_PER_CLASS = c["N_LABELED_PER_CLASS"]
    M_UNLABELED = c["M_UNLABELED"]
    N_TEST_PER_CLASS = c["N_TEST_PER_CLASS"]
    MISMATCH_RATIO = c["MISMATCH_RATIO"]
    CLASS_SEPARATION = c["CLASS_SEPARATION"]
    NOISE_SIGMA = c["NOISE_SIGMA"]
    OOD_IMBALANCE_RATIO = c["OOD_IMBALANCE_RATIO"]
    OUTPUT_PATH = c["OUTPUT_PATH"]
    CPU_THREADS = c["CPU_THREADS"]
    THREADS_ENV_VAR = c["THREADS_ENV_VAR"]
    ERROR_LOG_FILE = c["ERROR_LOG_FILE"]
