"""Multi-aspect selective rationalization with contrastive multi-stage training."""

__version__ = "0.1.0"

from .corpus import (
    Document,
    EmbeddingTable,
    SyntheticSpec,
    Vocabulary,
    binarize_rating,
    generate_synthetic,
    load_annotations,
    load_embeddings,
    load_reviews,
)
from .evaluation import (
    EvalReport,
    best_permutation_f1,
    evaluate_accuracy,
    evaluate_model,
    harden_masks,
    token_f1,
)
from .losses import (
    ContrastiveBatch,
    LossWeights,
    contrastive_loss,
    continuity_regularizer,
    cross_entropy,
    length_regularizer,
    total_loss,
)
from .model import (
    Model,
    ModelConfig,
    encode_aspect,
    forward,
    generate_masks,
    grad_check,
    reinitialize_generator,
)
from .probe import ProbeSpec, build_trap, landscape_scan, run_probe, run_probe_suite
from .training import (
    Checkpoint,
    DataSplits,
    MetricsLog,
    TrainConfig,
    load_checkpoint,
    model_from_checkpoint,
    run_3stage,
    run_contra,
    run_method,
    run_vanilla,
    save_checkpoint,
)
