"""
Configuration constants for the dual-stream video captioning system.

This module contains all tunable parameters for text processing, the model,
training, inference and evaluation.
"""

import os

# ============================================================================
# Text Processing Configuration
# ============================================================================

# Reserved tokens (ids are fixed; checkpoints and vocab files depend on them)
PAD_TOKEN = "<pad>"
START_TOKEN = "<start>"
END_TOKEN = "<end>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN)
PAD_ID = 0
START_ID = 1
END_ID = 2
UNK_ID = 3

# Fixed sentence length: 20 slots including <start>/<end> framing
SENTENCE_LENGTH = 20
MAX_CAPTION_WORDS = SENTENCE_LENGTH - 2  # 18 content words
DECODER_STEPS = SENTENCE_LENGTH - 1  # 19 input/target positions

# Rare words in the training split with frequency below this are dropped
VOCAB_THRESHOLD = 2

# ============================================================================
# Feature Configuration
# ============================================================================

FRAME_SAMPLE_COUNT = 50  # frames sampled per real video

FEATURE_MAGIC = b"VFEA"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"VADD"
CHECKPOINT_VERSION = 1

# ============================================================================
# Model Configuration
# ============================================================================

VARIANTS = ("baseline", "va", "dd", "vadd")
DUAL_STREAM_VARIANTS = ("dd", "vadd")
VISUAL_AWARE_VARIANTS = ("va", "vadd")

DEFAULT_HIDDEN = 64
INIT_SCHEME = "uniform_fan_in"  # weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0

# LSTM gate order in the stacked [4H] weight rows
LSTM_GATE_ORDER = ("input", "forget", "candidate", "output")

# ============================================================================
# Optimization Configuration
# ============================================================================

ADAM_LR0 = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EPOCHS_PER_DECAY = 5
DECAY_FACTOR = 3.0

DEFAULT_LAMBDA = 0.8  # weight of the self-forcing loss term
DEFAULT_BATCH_SIZE = 16
DEFAULT_EPOCHS = 20

LOG_CLAMP = 1e-12  # floor applied before log() in the loss

# ============================================================================
# Inference Configuration
# ============================================================================

DEFAULT_GAMMA = 0.7  # share of the teacher-forcing stream in the mixed distribution
DEFAULT_BEAM_WIDTH = 4
MAX_DECODE_LEN = 20

# ============================================================================
# Verification Configuration
# ============================================================================

GRADCHECK_TOL = 1e-4
GRADCHECK_FD_STEP = 1e-5
GRADCHECK_DENOM_FLOOR = 1e-8
GRADCHECK_MAX_ENTRIES = 0  # 0 checks every entry; n > 0 samples n entries per parameter

# Fixture model used by the gradcheck command
GRADCHECK_HIDDEN = 8
GRADCHECK_VOCAB = 12
GRADCHECK_FRAMES = 3
GRADCHECK_TARGET_LEN = 4
GRADCHECK_FEATURE_DIMS = (3, 2)  # appearance, motion

SIMPLEX_TOL = 1e-6  # probability vectors fed back into the decoder

# ============================================================================
# Metric Configuration
# ============================================================================

BLEU_MAX_N = 4
ROUGE_BETA = 1.2
CIDER_MAX_N = 4
CIDER_SIGMA = 6.0
CIDER_SCALE = 10.0

# ============================================================================
# Synthetic Corpus Configuration
# ============================================================================

SYNTH_FRAMES_PER_EVENT = 3
SYNTH_FEATURE_DIM = 8  # per modality (appearance and motion)

# ============================================================================
# Autodiff Configuration
# ============================================================================

# Finite-value checks after every forward op (slow; enable with VADD_CHECK_FINITE=1)
AUTODIFF_CHECK_FINITE = os.environ.get("VADD_CHECK_FINITE", "0") == "1"
