"""Stochastic binary code layer.

Per-bit Bernoulli probabilities come out of the encoder as a float array in
the open interval (0, 1); codes are uint8 arrays whose entries are exactly 0
or 1; nothing relaxed ever crosses the bottleneck in the sampled variants.
All operations accept a single code (1-D) or a batch (2-D, one row per
sample) and reduce over the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DimensionError

# Probabilities are clamped into [PROB_FLOOR, 1 - PROB_FLOOR] after the
# sigmoid so logs and the prior divergence stay finite under saturation.
PROB_FLOOR = 1e-6


class GradientEstimator(Enum):
    """How gradients cross the sampling step.

    DISTRIBUTIONAL passes the upstream bit-gradient through the sigmoid
    derivative of the bit probabilities; STRAIGHT_THROUGH copies it to the
    pre-sigmoid activations unchanged.
    """

    DISTRIBUTIONAL = "distributional"
    STRAIGHT_THROUGH = "straight-through"


@dataclass(frozen=True)
class PriorSpec:
    """Per-bit Bernoulli(0.5) code prior of a given length."""

    code_length: int
    p: float = 0.5

    def __post_init__(self):
        if self.p != 0.5:
            raise ConfigurationError("the code prior is fixed at p = 0.5")
        if self.code_length < 1:
            raise ConfigurationError("code length must be >= 1")


def clamp_probabilities(probs: np.ndarray) -> np.ndarray:
    return np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)


def _check_pair(probs, other, name) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    other = np.asarray(other)
    if probs.shape != other.shape:
        raise DimensionError(
            f"{name} shape {other.shape} does not match probabilities {probs.shape}"
        )
    return probs, other


def sample_code(probs, noise) -> np.ndarray:
    """Threshold each probability against uniform noise: bit = 1 iff p >= eps.

    Under noise uniform on [0, 1) the marginal of each bit is Bernoulli(p).
    The comparison is >= so that a probability exactly equal to its noise
    draw produces a 1.
    """
    probs, noise = _check_pair(probs, noise, "noise")
    return (probs >= noise).astype(np.uint8)


def binarize(probs) -> np.ndarray:
    """Deterministic out-of-sample code: bit = 1 iff p >= 0.5.

    The tie at 0.5 maps to 1, consistent with the >= in sample_code;
    binarize(p) == sample_code(p, noise=0.5 everywhere).
    """
    probs = np.asarray(probs, dtype=np.float64)
    return (probs >= 0.5).astype(np.uint8)


def code_log_prob(probs, code):
    """Log probability of a realized code under independent per-bit Bernoullis.

    sum_i [b_i log p_i + (1 - b_i) log(1 - p_i)]; scalar for a single code,
    one value per row for a batch.
    """
    probs, code = _check_pair(probs, code, "code")
    b = code.astype(np.float64)
    out = (b * np.log(probs) + (1.0 - b) * np.log1p(-probs)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def kl_to_uniform_prior(probs, prior: PriorSpec | None = None):
    """Divergence of the per-bit Bernoulli code posterior from Bernoulli(0.5).

    Closed form sum_i [p_i ln(p_i/0.5) + (1-p_i) ln((1-p_i)/0.5)], which is
    >= 0, zero exactly at p = 0.5, and bounded by m ln 2. Returns the value
    (per row for batches) and its gradient ln(p/(1-p)) w.r.t. the
    probabilities.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if prior is not None and prior.code_length != probs.shape[-1]:
        raise DimensionError(
            f"prior length {prior.code_length} does not match code width "
            f"{probs.shape[-1]}"
        )
    q = probs
    value = (q * np.log(2.0 * q) + (1.0 - q) * np.log(2.0 * (1.0 - q))).sum(axis=-1)
    grad = np.log(q) - np.log1p(-q)
    return (float(value) if value.ndim == 0 else value), grad


def quantization_penalty(probs, code):
    """Mean squared gap between probabilities and their realized bits.

    value = (1/m) sum_i (p_i - b_i)^2, with gradient taken w.r.t. the
    probabilities only (the bits are treated as constants).
    """
    probs, code = _check_pair(probs, code, "code")
    m = probs.shape[-1]
    diff = probs - code.astype(np.float64)
    value = (diff * diff).sum(axis=-1) / m
    grad = 2.0 * diff / m
    return (float(value) if value.ndim == 0 else value), grad


def bottleneck_backward(kind: GradientEstimator, grad_bits, probs) -> np.ndarray:
    """Estimate the gradient w.r.t. the pre-sigmoid code activations.

    ``grad_bits`` is the upstream gradient w.r.t. the sampled bits. The
    distributional estimator treats the sampling step as identity and chains
    through the sigmoid, giving grad * p * (1 - p); straight-through copies
    the upstream gradient unchanged. Any divergence-to-prior gradient is the
    caller's to add afterwards.
    """
    grad_bits = np.asarray(grad_bits, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if grad_bits.shape != probs.shape:
        raise DimensionError(
            f"grad shape {grad_bits.shape} does not match probabilities {probs.shape}"
        )
    if kind is GradientEstimator.DISTRIBUTIONAL:
        return grad_bits * probs * (1.0 - probs)
    if kind is GradientEstimator.STRAIGHT_THROUGH:
        return grad_bits.copy()
    raise ConfigurationError(f"unknown gradient estimator: {kind!r}")
