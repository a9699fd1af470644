"""Scikit-learn style estimator around the hashing network.

fit(X, y) trains encoder and head jointly; transform(X) yields binary codes
(one uint8 row per sample); predict/predict_proba run the head on the
deterministic test-time codes. Composes with pipelines, grid search and
anything else speaking the fit/transform protocol.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .bottleneck import GradientEstimator
from .data import ROLE_TRAIN, Dataset
from .errors import ConfigurationError
from .linalg import linear_forward, log_softmax, sigmoid
from .network import TrainConfig, Variant, encode_dataset, train_new_model


class HashingClassifier(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Classifier with a stochastic binary bottleneck, usable as a hasher.

    Parameters mirror the training configuration: ``n_bits`` is the code
    length, ``reg_weight`` scales the prior-divergence regularizer,
    ``variant`` picks the objective ("full", "cont", "qr", "nr" or the
    unsupervised "vae"), ``gradient_estimator`` is "distributional" or
    "straight-through".
    """

    def __init__(
        self,
        n_bits=16,
        hidden_width=512,
        variant="full",
        gradient_estimator="distributional",
        reg_weight=0.1,
        learning_rate=1e-4,
        batch_size=256,
        epochs=100,
        mc_samples=1,
        patience=None,
        random_state=0,
    ):
        self.n_bits = n_bits
        self.hidden_width = hidden_width
        self.variant = variant
        self.gradient_estimator = gradient_estimator
        self.reg_weight = reg_weight
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.mc_samples = mc_samples
        self.patience = patience
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
        return TrainConfig(
            reg_weight=self.reg_weight,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=seed,
            mc_samples=self.mc_samples,
            hidden_width=self.hidden_width,
            patience=self.patience,
        )

    def fit(self, X, y=None):
        variant = Variant(self.variant)
        estimator = GradientEstimator(self.gradient_estimator)
        if variant is Variant.VAE:
            X = check_array(X, dtype=np.float64)
            labels = np.zeros(X.shape[0], dtype=np.int64)
        else:
            if y is None:
                raise ConfigurationError("supervised variants need labels")
            X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
            y = np.asarray(y)
            if y.ndim == 1:
                self.classes_, labels = np.unique(y, return_inverse=True)
            else:
                self.classes_ = np.arange(y.shape[1])
                labels = y
        dataset = Dataset(
            features=X,
            labels=labels,
            split=np.full(X.shape[0], ROLE_TRAIN, dtype=np.int8),
        )
        self.model_, self.history_ = train_new_model(
            dataset, self.n_bits, self._config(), variant=variant, estimator=estimator
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        """Binary codes for new samples, shape (n, n_bits), dtype uint8."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return encode_dataset(self.model_, X)

    def _head_outputs(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        codes = encode_dataset(self.model_, X).astype(np.float64)
        return linear_forward(self.model_.head, codes)

    def predict(self, X):
        if Variant(self.variant) is Variant.VAE:
            raise ConfigurationError("the autoencoder variant does not classify")
        logits = self._head_outputs(X)
        if self.model_.label_mode == "single":
            return self.classes_[np.argmax(logits, axis=1)]
        return (sigmoid(logits) >= 0.5).astype(np.int64)

    def predict_proba(self, X):
        if Variant(self.variant) is Variant.VAE:
            raise ConfigurationError("the autoencoder variant does not classify")
        logits = self._head_outputs(X)
        if self.model_.label_mode == "single":
            return np.exp(log_softmax(logits))
        return sigmoid(logits)
