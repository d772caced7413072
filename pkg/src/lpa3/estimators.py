"""scikit-learn style wrappers around the trainer and the attack.

``LPA3Classifier.fit`` follows the scikit-learn semi-supervised convention:
rows with ``y == -1`` are unlabeled. Inputs are 2-D arrays of pixel values in
[0, 1]; ``input_shape`` reshapes each row (e.g. ``(1, 28, 28)``) so image
transforms and convolutions can be used.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attack import AttackParams, fast_lagrangian_attack
from .data import UNLABELED, ExampleBatch, Splits
from .trainer import TrainConfig, WeakAugSpec, predict_probs, train


def _check_pixels(X, bounds=(0.0, 1.0)):
    if X.size and (X.min() < bounds[0] or X.max() > bounds[1]):
        raise ValueError(f"pixel values must lie in [{bounds[0]}, {bounds[1]}]")


def _shape(X, input_shape):
    shape = tuple(input_shape) if input_shape else (X.shape[1],)
    if int(np.prod(shape)) != X.shape[1]:
        raise ValueError(f"input_shape {shape} does not match {X.shape[1]} features")
    return shape


class LPA3Classifier(ClassifierMixin, BaseEstimator):
    """Semi-supervised classifier trained with label-preserving hard positives."""

    def __init__(self, input_shape=None, hidden=(128, 64), arch="mlp", epochs=10, learning_rate=0.03,
                 batch_labeled=32, batch_unlabeled=64, conf_threshold=0.95, tau_pct=90.0, lpa3=True,
                 lpa3_start_epoch=0, weight_lpa3=1.0, gate_lpa3=False, sigma=0.02, steps=5, epsilon=0.002,
                 sharpen="onehot", shift=2, random_state=0):
        self.input_shape = input_shape
        self.hidden = hidden
        self.arch = arch
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_labeled = batch_labeled
        self.batch_unlabeled = batch_unlabeled
        self.conf_threshold = conf_threshold
        self.tau_pct = tau_pct
        self.lpa3 = lpa3
        self.lpa3_start_epoch = lpa3_start_epoch
        self.weight_lpa3 = weight_lpa3
        self.gate_lpa3 = gate_lpa3
        self.sigma = sigma
        self.steps = steps
        self.epsilon = epsilon
        self.sharpen = sharpen
        self.shift = shift
        self.random_state = random_state

    def _config(self, image: bool) -> TrainConfig:
        return TrainConfig(
            conf_threshold=self.conf_threshold, tau_pct=self.tau_pct, learning_rate=self.learning_rate,
            batch_labeled=self.batch_labeled, batch_unlabeled=self.batch_unlabeled, epochs=self.epochs,
            seed=int(self.random_state or 0), lpa3=self.lpa3, lpa3_start_epoch=self.lpa3_start_epoch,
            weight_lpa3=self.weight_lpa3, gate_lpa3=self.gate_lpa3, arch=self.arch, hidden=tuple(self.hidden),
            attack=AttackParams(sigma=self.sigma, steps=self.steps, epsilon=self.epsilon, sharpen=self.sharpen),
            weak_aug=WeakAugSpec(shift=self.shift if image else 0),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        _check_pixels(X)
        shape = _shape(X, self.input_shape)
        labeled = y != UNLABELED
        if not labeled.any():
            raise ValueError("at least one labeled sample (y != -1) is required")
        self.classes_ = np.unique(y[labeled])
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes among the labeled samples")
        enc = np.full(len(y), UNLABELED)
        enc[labeled] = np.searchsorted(self.classes_, y[labeled])
        ids = np.arange(len(y))
        Xs = X.reshape((len(X),) + shape)
        splits = Splits(
            labeled=ExampleBatch(Xs[labeled], enc[labeled], ids[labeled]),
            unlabeled=ExampleBatch(Xs[~labeled], enc[~labeled], ids[~labeled]),
            test=ExampleBatch(np.zeros((0,) + shape), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)),
        )
        cfg = self._config(image=len(shape) >= 2)
        result = train(splits, cfg)
        self.network_ = result.net
        self.history_ = result.history
        self.input_shape_ = shape
        self.n_features_in_ = X.shape[1]
        return self

    def _inputs(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X.reshape((len(X),) + self.input_shape_)

    def predict_proba(self, X):
        return predict_probs(self.network_, self._inputs(X))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


class LPA3Augmenter(TransformerMixin, BaseEstimator):
    """Maps inputs to label-preserving hard positives for a fitted :class:`LPA3Classifier`."""

    def __init__(self, classifier=None, sigma=0.02, steps=5, epsilon=0.002, lambda_min=1.0, lambda_max=10.0,
                 random_state=0):
        self.classifier = classifier
        self.sigma = sigma
        self.steps = steps
        self.epsilon = epsilon
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.classifier is None:
            raise ValueError("LPA3Augmenter needs a fitted classifier")
        check_is_fitted(self.classifier, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.classifier.n_features_in_:
            raise ValueError(f"expected {self.classifier.n_features_in_} features, got {X.shape[1]}")
        self.params_ = AttackParams(sigma=self.sigma, steps=self.steps, epsilon=self.epsilon,
                                    lambda_min=self.lambda_min, lambda_max=self.lambda_max)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X, y=None):
        """Hard positives for ``X``; ``y`` defaults to the classifier's own predictions."""
        check_is_fitted(self, "params_")
        clf = self.classifier
        Xs = clf._inputs(X)
        _check_pixels(Xs)
        if y is None:
            target = predict_probs(clf.network_, Xs).argmax(axis=1)
        else:
            y = np.asarray(y)
            if not np.all(np.isin(y, clf.classes_)):
                raise ValueError("y contains classes the classifier was not trained on")
            target = np.searchsorted(clf.classes_, y)
        result = fast_lagrangian_attack(clf.network_, Xs, target, self.params_, seed=self.random_state)
        self.last_result_ = result
        return result.x_prime.reshape(len(Xs), -1)
