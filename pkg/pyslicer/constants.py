"""
pyslicer.constants
~~~~~~~~~~~~~~~~~~~~
Constants list
Licensed under the MIT license.
"""

MAJOR_VERSION = 0
MINOR_VERSION = 1
SUB_MINOR_VERSION = 0
__version__ = f"{MAJOR_VERSION}.{MINOR_VERSION}.{SUB_MINOR_VERSION}"

# Denominators 1 - alpha * p below this switch to the direct product form
GUARD_THRESHOLD = 1e-9

# Activation probabilities are floored before taking logarithms
LOG_FLOOR = 1e-12

ALPHA_LO = 1e-9
ALPHA_HI = 1.0 - 1e-9
DEFAULT_ALPHA_INIT = 0.5
DEFAULT_LEARNING_RATE = 0.1
DEFAULT_MAX_ITERATIONS = 2000
DEFAULT_TOLERANCE = 1e-6
DEFAULT_PRUNE_THRESHOLD = 1e-8
DEFAULT_FD_STEP = 1e-6
MAX_BACKTRACKS = 40

# Percolation oracle enumerates 2^(2|E|) orientation subsets
BRUTEFORCE_MAX_DIRECTED_EDGES = 24
BRUTEFORCE_BLOCK = 1 << 14

# Cascades are simulated in chunks, each chunk on its own RNG stream
CASCADE_CHUNK = 512

# Initial-condition classes are pushed through the kernels in blocks
CLASS_BLOCK = 128

GENERATOR_RETRIES = 100

# Noise used for the noisy-timestamp experiments, pi_{-1}, pi_0, pi_{+1}
DEFAULT_NOISE = (0.2, 0.6, 0.2)

THREADS_ENV = "PYSLICER_THREADS"

STAR_TOKEN = "*"
HIDDEN_TOKEN = "?"
# Observation descriptor of cascade files written before any corruption
NO_OBSERVATION = "none"
CONFIG_HASH_LENGTH = 12
