"""Hashing network: encoder, stochastic binary code layer, prediction head.

The encoder maps (standardized) feature vectors through fully-connected +
relu layers to per-bit code probabilities; a single linear head maps
realized codes to class logits (or back to feature space for the
autoencoder variant). Training follows one joint objective, a data-fit term
plus a weighted regularizer, optimized by Adam with gradients estimated
through the sampling step.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .bottleneck import (
    GradientEstimator,
    binarize,
    bottleneck_backward,
    clamp_probabilities,
    code_log_prob,
    kl_to_uniform_prior,
    quantization_penalty,
    sample_code,
)
from .data import Dataset, standardize_stats
from .errors import (
    ConfigurationError,
    DimensionError,
    FormatError,
    LabelError,
    OracleCapacityError,
    TrainingDivergenceError,
)
from .linalg import (
    AdamState,
    LinearLayer,
    RngStream,
    adam_step,
    as_matrix,
    init_linear,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_bce,
    softmax_cross_entropy,
    log_softmax,
)

CHECKPOINT_MAGIC = b"JMLH1"

ENUMERATION_LIMIT = 12  # 2^m table caps the exact-expectation oracle
MI_CODE_LIMIT = 64  # codes must fit one machine word for the MI histogram


class Variant(Enum):
    """Training objective variants.

    FULL: likelihood on sampled codes + weighted prior divergence.
    CONT: continuous relaxation; the head sees probabilities, no sampling.
    QR:   likelihood on sampled codes + weighted quantization penalty.
    NR:   likelihood on sampled codes, no regularizer.
    VAE:  unsupervised autoencoder; squared-error reconstruction + unit-
          weight prior divergence.
    """

    FULL = "full"
    CONT = "cont"
    QR = "qr"
    NR = "nr"
    VAE = "vae"


@dataclass
class TrainConfig:
    """Hyper-parameters of one training run."""

    reg_weight: float = 0.1
    learning_rate: float = 1e-4
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    mc_samples: int = 1
    hidden_width: int = 512
    patience: int | None = None

    def __post_init__(self):
        if self.reg_weight < 0:
            raise ConfigurationError("reg_weight must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.mc_samples < 1:
            raise ConfigurationError("mc_samples must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")


@dataclass
class LossBreakdown:
    """total = classification + (regularizer weight) * regularizer.

    For the autoencoder variant the classification slot holds the
    reconstruction term and the weight is 1.
    """

    total: float
    classification: float
    regularizer: float


@dataclass
class HashModel:
    """Encoder layers (relu between, none after the last), one head layer.

    The first encoder layer consumes standardized inputs:
    (x - input_mean) / input_scale.
    """

    encoder: list
    head: LinearLayer
    label_mode: str = "single"
    variant: Variant = Variant.FULL
    estimator: GradientEstimator = GradientEstimator.DISTRIBUTIONAL
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        if not self.encoder:
            raise ConfigurationError("encoder needs at least one layer")
        if self.label_mode not in ("single", "multi"):
            raise ConfigurationError(f"unknown label mode {self.label_mode!r}")
        if self.encoder[-1].out_features != self.head.in_features:
            raise DimensionError(
                f"code width {self.encoder[-1].out_features} does not match "
                f"head input {self.head.in_features}"
            )
        d = self.encoder[0].in_features
        if self.input_mean is None:
            self.input_mean = np.zeros(d)
        if self.input_scale is None:
            self.input_scale = np.ones(d)
        self.input_mean = np.asarray(self.input_mean, dtype=np.float64)
        self.input_scale = np.asarray(self.input_scale, dtype=np.float64)
        if self.input_mean.shape != (d,) or self.input_scale.shape != (d,):
            raise DimensionError("standardization vectors must match input width")

    @property
    def code_length(self) -> int:
        return self.encoder[-1].out_features

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_features

    @property
    def output_dim(self) -> int:
        return self.head.out_features


def build_model(
    rng: RngStream,
    input_dim: int,
    output_dim: int,
    code_length: int,
    hidden_width: int = 512,
    label_mode: str = "single",
    variant: Variant = Variant.FULL,
    estimator: GradientEstimator = GradientEstimator.DISTRIBUTIONAL,
    input_mean=None,
    input_scale=None,
) -> HashModel:
    """Fresh model: input -> hidden (relu) -> code layer; linear head.

    For the autoencoder variant the head decodes the code back to feature
    width, so output_dim must equal input_dim.
    """
    if variant is Variant.VAE and output_dim != input_dim:
        raise ConfigurationError("autoencoder head must decode to feature width")
    encoder = [
        init_linear(rng, hidden_width, input_dim),
        init_linear(rng, code_length, hidden_width),
    ]
    head = init_linear(rng, output_dim, code_length)
    return HashModel(
        encoder=encoder,
        head=head,
        label_mode=label_mode,
        variant=variant,
        estimator=estimator,
        input_mean=input_mean,
        input_scale=input_scale,
    )


def model_parameters(model: HashModel) -> list:
    """All trainable arrays: encoder layers in order, then the head."""
    params = []
    for layer in list(model.encoder) + [model.head]:
        params.append(layer.weight)
        params.append(layer.bias)
    return params


def set_model_parameters(model: HashModel, params) -> None:
    layers = list(model.encoder) + [model.head]
    if len(params) != 2 * len(layers):
        raise DimensionError("parameter list does not match model layers")
    for i, layer in enumerate(layers):
        layer.weight = np.asarray(params[2 * i], dtype=np.float64)
        layer.bias = np.asarray(params[2 * i + 1], dtype=np.float64)


def _encoder_forward(model: HashModel, batch: np.ndarray):
    """Run the encoder; returns (code pre-activations, per-layer caches)."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != model.input_dim:
        raise DimensionError(
            f"batch width {x.shape[1]} does not match model input {model.input_dim}"
        )
    h = (x - model.input_mean) / model.input_scale
    caches = []
    last = len(model.encoder) - 1
    for i, layer in enumerate(model.encoder):
        z = linear_forward(layer, h)
        caches.append((h, z))
        h = relu(z) if i < last else z
    return h, caches


def _encoder_backward(model: HashModel, caches, grad_code_logits) -> list:
    """Backprop a gradient at the code pre-activations to all encoder params."""
    grads = [None] * (2 * len(model.encoder))
    grad = grad_code_logits
    for i in range(len(model.encoder) - 1, -1, -1):
        layer_input, _ = caches[i]
        g_w, g_b, g_in = linear_backward(model.encoder[i], layer_input, grad)
        grads[2 * i] = g_w
        grads[2 * i + 1] = g_b
        if i > 0:
            _, z_prev = caches[i - 1]
            grad = relu_backward(z_prev, g_in)
    return grads


def encode_probabilities(model: HashModel, batch) -> np.ndarray:
    """Per-bit code probabilities for a batch: clamped sigmoid of the encoder
    output, shape (batch, code_length)."""
    code_logits, _ = _encoder_forward(model, batch)
    return clamp_probabilities(sigmoid(code_logits))


def encode_dataset(model: HashModel, features) -> np.ndarray:
    """Deterministic codes for a feature matrix (no sampling involved)."""
    return binarize(encode_probabilities(model, features))


def _classification_loss(model: HashModel, head_logits, labels):
    """Per-sample-mean negative log-likelihood and gradient w.r.t. logits.

    Multi-label mode sums the per-bit binary cross-entropy over label bits,
    matching the independent-Bernoulli label model.
    """
    labels = np.asarray(labels)
    if model.label_mode == "single":
        if labels.ndim != 1:
            raise LabelError("single-label mode expects a vector of class indices")
        return softmax_cross_entropy(head_logits, labels)
    if labels.ndim != 2:
        raise LabelError("multi-label mode expects a multi-hot matrix")
    width = head_logits.shape[1]
    mean_loss, grad = sigmoid_bce(head_logits, labels)
    return mean_loss * width, grad * width


def _validate_labels(model: HashModel, batch, labels):
    labels = np.asarray(labels)
    n = np.asarray(batch).shape[0]
    if len(labels) != n:
        raise DimensionError("labels do not match batch size")
    return labels


def compute_loss(model: HashModel, batch, labels, eps, reg_weight: float = 0.1):
    """Joint objective and its gradients for one batch.

    Returns (LossBreakdown, gradient list aligned with model_parameters).
    ``eps`` is the uniform noise for the sampling step, shape
    (batch, code_length); the continuous variant ignores it. Dispatches to
    vae_loss for the autoencoder variant.
    """
    if model.variant is Variant.VAE:
        return vae_loss(model, batch, eps)
    labels = _validate_labels(model, batch, labels)
    code_logits, caches = _encoder_forward(model, batch)
    probs = clamp_probabilities(sigmoid(code_logits))
    n = probs.shape[0]

    if model.variant is Variant.CONT:
        head_input = probs
        code = None
    else:
        code = sample_code(probs, eps)
        head_input = code.astype(np.float64)

    head_logits = linear_forward(model.head, head_input)
    cls_loss, grad_logits = _classification_loss(model, head_logits, labels)
    g_head_w, g_head_b, grad_head_input = linear_backward(
        model.head, head_input, grad_logits
    )

    if model.variant in (Variant.FULL, Variant.CONT):
        reg_values, reg_grad_probs = kl_to_uniform_prior(probs)
        reg_value = float(np.mean(reg_values))
        grad_probs_reg = reg_weight * reg_grad_probs / n
    elif model.variant is Variant.QR:
        reg_values, reg_grad_probs = quantization_penalty(probs, code)
        reg_value = float(np.mean(reg_values))
        grad_probs_reg = reg_weight * reg_grad_probs / n
    else:  # NR
        reg_value = 0.0
        grad_probs_reg = 0.0

    sigmoid_deriv = probs * (1.0 - probs)
    if model.variant is Variant.CONT:
        grad_code_logits = (grad_head_input + grad_probs_reg) * sigmoid_deriv
    else:
        grad_code_logits = (
            bottleneck_backward(model.estimator, grad_head_input, probs)
            + grad_probs_reg * sigmoid_deriv
        )

    grads = _encoder_backward(model, caches, grad_code_logits)
    grads.extend([g_head_w, g_head_b])
    total = cls_loss + reg_weight * reg_value
    return LossBreakdown(total, cls_loss, reg_value), grads


def vae_loss(model: HashModel, batch, eps):
    """Autoencoder objective: mean squared-error reconstruction of the
    standardized features (||x - decode(code)||^2 / 2 per sample) plus the
    unit-weight prior divergence."""
    if model.variant is not Variant.VAE:
        raise ConfigurationError("vae_loss requires the autoencoder variant")
    if model.output_dim != model.input_dim:
        raise ConfigurationError("autoencoder head must decode to feature width")
    code_logits, caches = _encoder_forward(model, batch)
    probs = clamp_probabilities(sigmoid(code_logits))
    n = probs.shape[0]
    target = (as_matrix(batch, "batch") - model.input_mean) / model.input_scale

    code = sample_code(probs, eps)
    head_input = code.astype(np.float64)
    decoded = linear_forward(model.head, head_input)
    diff = decoded - target
    recon = float(0.5 * (diff * diff).sum(axis=1).mean())

    reg_values, reg_grad_probs = kl_to_uniform_prior(probs)
    reg_value = float(np.mean(reg_values))

    grad_decoded = diff / n
    g_head_w, g_head_b, grad_head_input = linear_backward(
        model.head, head_input, grad_decoded
    )
    grad_code_logits = (
        bottleneck_backward(model.estimator, grad_head_input, probs)
        + (reg_grad_probs / n) * probs * (1.0 - probs)
    )
    grads = _encoder_backward(model, caches, grad_code_logits)
    grads.extend([g_head_w, g_head_b])
    return LossBreakdown(recon + reg_value, recon, reg_value), grads


def kl_term_gradients(model: HashModel, batch):
    """Batch-mean prior divergence and its exact gradients w.r.t. the encoder
    parameters (deterministic path, no sampling)."""
    code_logits, caches = _encoder_forward(model, batch)
    probs = clamp_probabilities(sigmoid(code_logits))
    n = probs.shape[0]
    values, grad_probs = kl_to_uniform_prior(probs)
    grad_code_logits = (grad_probs / n) * probs * (1.0 - probs)
    grads = _encoder_backward(model, caches, grad_code_logits)
    return float(np.mean(values)), grads


def _all_codes(code_length: int) -> np.ndarray:
    ids = np.arange(2**code_length, dtype=np.int64)
    return ((ids[:, None] >> np.arange(code_length)) & 1).astype(np.float64)


def exact_expected_loss(model: HashModel, batch, labels=None) -> float:
    """Exact expectation of the data-fit term by enumerating the code space.

    Averages sum_b q(b|x) * loss(b) over the batch; the per-code loss is the
    negative label log-likelihood (or the reconstruction error for the
    autoencoder variant). Only affordable for code_length <= 12.
    """
    m = model.code_length
    if m > ENUMERATION_LIMIT:
        raise OracleCapacityError(
            f"cannot enumerate 2^{m} codes (limit 2^{ENUMERATION_LIMIT})"
        )
    probs = encode_probabilities(model, batch)
    codes = _all_codes(m)
    log_w = codes @ np.log(probs).T + (1.0 - codes) @ np.log1p(-probs).T
    weights = np.exp(log_w)  # (2^m, batch); columns sum to 1

    head_out = linear_forward(model.head, codes)
    if model.variant is Variant.VAE:
        target = (as_matrix(batch, "batch") - model.input_mean) / model.input_scale
        sq = ((head_out[:, None, :] - target[None, :, :]) ** 2).sum(axis=2)
        losses = 0.5 * sq
    elif model.label_mode == "single":
        labels = _validate_labels(model, batch, labels)
        losses = -log_softmax(head_out)[:, np.asarray(labels)]
    else:
        labels = _validate_labels(model, batch, labels)
        y = np.asarray(labels, dtype=np.float64)
        # log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
        losses = np.logaddexp(0.0, -head_out) @ y.T + np.logaddexp(0.0, head_out) @ (
            1.0 - y.T
        )
    return float((weights * losses).sum(axis=0).mean())


def train_epoch(
    model: HashModel,
    dataset: Dataset,
    config: TrainConfig,
    rng: RngStream,
    opt_state: AdamState,
) -> LossBreakdown:
    """One shuffled pass over the train split with joint Adam updates.

    Per batch: draw noise, compute the loss and all gradients (averaged over
    mc_samples draws), then update encoder and head parameters together.
    Returns the sample-weighted mean loss breakdown of the epoch.
    """
    train_idx = dataset.rows("train")
    if len(train_idx) == 0:
        raise ValueError("dataset has no train rows")
    features = dataset.features[train_idx]
    labels = dataset.labels[train_idx]
    order = rng.permutation(len(train_idx))
    m = model.code_length

    totals = np.zeros(3)
    seen = 0
    for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
        rows = order[start : start + config.batch_size]
        x = features[rows]
        y = labels[rows]
        params = model_parameters(model)
        acc = None
        breakdown_sum = np.zeros(3)
        for _ in range(config.mc_samples):
            eps = rng.uniform(len(rows), m)
            try:
                breakdown, grads = compute_loss(model, x, y, eps, config.reg_weight)
            except (DimensionError, LabelError, ConfigurationError):
                raise
            except (ValueError, FloatingPointError) as exc:
                # overflow in the forward/backward pass surfaces as the
                # kernel's non-finite guard; inside training that means the
                # run diverged
                raise TrainingDivergenceError(
                    f"non-finite values in batch {batch_index} of this epoch: {exc}"
                ) from exc
            breakdown_sum += (
                breakdown.total,
                breakdown.classification,
                breakdown.regularizer,
            )
            if acc is None:
                acc = grads
            else:
                acc = [a + g for a, g in zip(acc, grads)]
        scale = 1.0 / config.mc_samples
        acc = [g * scale for g in acc]
        breakdown_sum *= scale
        if not np.isfinite(breakdown_sum[0]):
            raise TrainingDivergenceError(
                f"non-finite loss in batch {batch_index} of this epoch"
            )
        set_model_parameters(model, adam_step(opt_state, params, acc))
        totals += breakdown_sum * len(rows)
        seen += len(rows)
    totals /= seen
    return LossBreakdown(*totals)


def train_model(
    model: HashModel, dataset: Dataset, config: TrainConfig, rng: RngStream
) -> list:
    """Run up to config.epochs passes; optional early stop on a train-loss
    plateau (no improvement for config.patience epochs). Returns the
    per-epoch loss history."""
    opt_state = AdamState.for_params(
        model_parameters(model), learning_rate=config.learning_rate
    )
    history = []
    best = np.inf
    stall = 0
    for _ in range(config.epochs):
        stats = train_epoch(model, dataset, config, rng, opt_state)
        history.append(stats)
        if config.patience is not None:
            if stats.total < best - 1e-12:
                best = stats.total
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    break
    return history


def train_new_model(
    dataset: Dataset,
    code_length: int,
    config: TrainConfig,
    variant: Variant = Variant.FULL,
    estimator: GradientEstimator = GradientEstimator.DISTRIBUTIONAL,
) -> tuple[HashModel, list]:
    """Initialize and train a model on the dataset's train split.

    Feature standardization statistics come from the train split and are
    stored on the model, so encoding unseen rows needs nothing else. A
    single seeded stream drives init, shuffling and sampling, which makes
    the whole run bitwise reproducible.
    """
    rng = RngStream(config.seed)
    train_idx = dataset.rows("train")
    if len(train_idx) == 0:
        raise ValueError("dataset has no train rows")
    mean, scale = standardize_stats(dataset.features[train_idx])
    output_dim = dataset.dim if variant is Variant.VAE else dataset.n_classes
    model = build_model(
        rng,
        input_dim=dataset.dim,
        output_dim=output_dim,
        code_length=code_length,
        hidden_width=config.hidden_width,
        label_mode=dataset.label_mode,
        variant=variant,
        estimator=estimator,
        input_mean=mean,
        input_scale=scale,
    )
    history = train_model(model, dataset, config, rng)
    return model, history


def mutual_information_estimate(codes, labels) -> float:
    """Plug-in mutual information (nats) between codes and class labels.

    Builds the empirical joint histogram over (code, label) and evaluates
    sum p(c,y) ln(p(c,y) / (p(c) p(y))). Codes are hashed into one machine
    word, so code_length <= 64; single-label data only.
    """
    codes = np.asarray(codes)
    labels = np.asarray(labels)
    if codes.ndim != 2:
        raise DimensionError("codes must be a 2-D bit array")
    if labels.ndim != 1:
        raise LabelError("mutual information diagnostic expects class indices")
    if len(labels) != codes.shape[0]:
        raise DimensionError("labels do not match the number of codes")
    m = codes.shape[1]
    if m > MI_CODE_LIMIT:
        raise OracleCapacityError(f"code length {m} exceeds {MI_CODE_LIMIT}")
    weights = np.left_shift(np.uint64(1), np.arange(m, dtype=np.uint64))
    keys = (codes.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
    _, code_ids = np.unique(keys, return_inverse=True)
    _, label_ids = np.unique(labels, return_inverse=True)
    n_codes = code_ids.max() + 1
    n_labels = label_ids.max() + 1
    joint = np.zeros((n_codes, n_labels))
    np.add.at(joint, (code_ids, label_ids), 1.0)
    joint /= len(labels)
    p_code = joint.sum(axis=1, keepdims=True)
    p_label = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float((joint[mask] * np.log(joint[mask] / (p_code @ p_label)[mask])).sum())


_VARIANT_CODES = {v: i for i, v in enumerate(Variant)}
_ESTIMATOR_CODES = {e: i for i, e in enumerate(GradientEstimator)}


def save_checkpoint(model: HashModel, path) -> None:
    """Versioned binary checkpoint.

    Little-endian layout: magic "JMLH1"; u32 code_length; u32 input_dim;
    u8 label mode (0 single, 1 multi); u8 variant; u8 estimator; u8 layer
    count (encoder layers then head); per layer u32 out, u32 in; payload of
    float64 arrays (input_mean, input_scale, then each layer's weight
    row-major and bias); u64 checksum of the payload (blake2b-64).
    """
    layers = list(model.encoder) + [model.head]
    payload = bytearray()
    payload += model.input_mean.astype("<f8").tobytes()
    payload += model.input_scale.astype("<f8").tobytes()
    for layer in layers:
        payload += layer.weight.astype("<f8").tobytes()
        payload += layer.bias.astype("<f8").tobytes()
    checksum = int.from_bytes(
        hashlib.blake2b(bytes(payload), digest_size=8).digest(), "little"
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<IIBBBB",
                model.code_length,
                model.input_dim,
                0 if model.label_mode == "single" else 1,
                _VARIANT_CODES[model.variant],
                _ESTIMATOR_CODES[model.estimator],
                len(layers),
            )
        )
        for layer in layers:
            fh.write(struct.pack("<II", layer.out_features, layer.in_features))
        fh.write(bytes(payload))
        fh.write(struct.pack("<Q", checksum))


def load_checkpoint(path) -> HashModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"bad magic {raw[:5]!r}, expected {CHECKPOINT_MAGIC!r}", offset=0
        )
    offset = len(CHECKPOINT_MAGIC)
    header_size = struct.calcsize("<IIBBBB")
    if len(raw) < offset + header_size:
        raise FormatError("truncated checkpoint header", offset=len(raw))
    code_length, input_dim, mode, variant_code, estimator_code, n_layers = (
        struct.unpack_from("<IIBBBB", raw, offset)
    )
    offset += header_size
    shapes = []
    for _ in range(n_layers):
        if len(raw) < offset + 8:
            raise FormatError("truncated layer table", offset=len(raw))
        shapes.append(struct.unpack_from("<II", raw, offset))
        offset += 8
    n_params = 2 * input_dim + sum(o * i + o for o, i in shapes)
    payload_size = 8 * n_params
    if len(raw) < offset + payload_size + 8:
        raise FormatError("truncated parameter payload", offset=len(raw))
    payload = raw[offset : offset + payload_size]
    (stored_sum,) = struct.unpack_from("<Q", raw, offset + payload_size)
    actual = int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")
    if stored_sum != actual:
        raise FormatError("checksum mismatch in parameter payload", offset=offset)
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    pos = 0

    def take(count, shape):
        nonlocal pos
        out = values[pos : pos + count].reshape(shape)
        pos += count
        return out

    input_mean = take(input_dim, (input_dim,))
    input_scale = take(input_dim, (input_dim,))
    layers = []
    for out_f, in_f in shapes:
        weight = take(out_f * in_f, (out_f, in_f))
        bias = take(out_f, (out_f,))
        layers.append(LinearLayer(weight=weight, bias=bias))
    try:
        variant = list(Variant)[variant_code]
        estimator = list(GradientEstimator)[estimator_code]
    except IndexError:
        raise FormatError("unknown variant/estimator code", offset=9) from None
    model = HashModel(
        encoder=layers[:-1],
        head=layers[-1],
        label_mode="single" if mode == 0 else "multi",
        variant=variant,
        estimator=estimator,
        input_mean=input_mean,
        input_scale=input_scale,
    )
    if model.code_length != code_length:
        raise FormatError("layer table disagrees with declared code length", offset=5)
    return model
