"""Supervised binary hashing with a stochastic binary bottleneck.

Train a classifier whose intermediate layer is an exactly-binary code,
harvest the codes for Hamming-distance retrieval, and evaluate with the
usual mAP / precision / P-R machinery, all at desk scale, deterministic
per seed.
"""

from .bottleneck import (
    GradientEstimator,
    PriorSpec,
    binarize,
    bottleneck_backward,
    clamp_probabilities,
    code_log_prob,
    kl_to_uniform_prior,
    quantization_penalty,
    sample_code,
)
from .data import (
    BlobSpec,
    Dataset,
    load_dataset,
    make_blobs,
    save_dataset,
    split_protocol,
)
from .errors import (
    ConfigurationError,
    DimensionError,
    FormatError,
    LabelError,
    MlhashError,
    OracleCapacityError,
    TrainingDivergenceError,
)
from .estimator import HashingClassifier
from .linalg import (
    AdamState,
    LinearLayer,
    RngStream,
    adam_step,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_bce,
    softmax_cross_entropy,
)
from .network import (
    HashModel,
    LossBreakdown,
    TrainConfig,
    Variant,
    build_model,
    compute_loss,
    encode_dataset,
    encode_probabilities,
    exact_expected_loss,
    kl_term_gradients,
    load_checkpoint,
    mutual_information_estimate,
    save_checkpoint,
    train_epoch,
    train_model,
    train_new_model,
    vae_loss,
)
from .retrieval import (
    EvalReport,
    PackedCodes,
    RelevanceJudge,
    average_precision,
    evaluate_retrieval,
    hamming_distance,
    hamming_to_all,
    load_codes,
    mean_average_precision,
    pack_codes,
    pr_curve,
    precision_at_k,
    precision_at_radius,
    rank_database,
    save_codes,
    unpack_codes,
)

__version__ = "0.1.0"
