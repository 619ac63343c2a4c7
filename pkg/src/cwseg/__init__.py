"""Neural Chinese word segmentation toolkit.

A window-gated recursive encoder feeding a bidirectional LSTM tagger over
BMES labels, trained with mini-batch Adam (serial, synchronous, or lock-free
asynchronous), plus instance-weighted transfer from a high-resource corpus
to a low-resource one.
"""

from .corpus import (
    PAD,
    UNK,
    NUM,
    LATIN,
    TAGS,
    FormatError,
    TaggedSentence,
    Vocab,
    build_vocab,
    from_bmes,
    load_embeddings,
    normalize,
    read_bakeoff,
    to_bmes,
)
from .metrics import AlignmentError, ScoreReport, error_rate_reduction, score
from .model import ModelConfig, SegModel
from .nn import AdamHyper, ParamStore, adam_step, grad_check, make_rng
from .train import TrainConfig, TrainReport, TrainingDiverged, benchmark, shard_minibatch, train
from .transfer import (
    SimilarityState,
    TransferConfig,
    error_rate,
    init_student,
    per_sample_lr,
    train_transfer,
    update_rate,
    update_similarity,
)

__version__ = "0.1.0"
