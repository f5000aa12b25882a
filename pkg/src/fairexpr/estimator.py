"""scikit-learn style wrapper around bundle construction and training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.metrics import accuracy_score
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentConfig
from .errors import ValidationError
from .models import build_bundle
from .schema import AttributeSchema, Sample
from .trainer import TrainConfig, extract_features, predict_proba, train
from .validation import check_attributes, check_images, check_labels


def _as_schema(schema):
    if schema is None or isinstance(schema, AttributeSchema):
        return schema
    return AttributeSchema.from_mapping(schema)


class FairExpressionClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Expression classifier with one of three head configurations.

    ``approach`` is ``"baseline"``, ``"attribute_aware"`` or
    ``"disentangled"``; the latter two need ``schema`` (an
    :class:`AttributeSchema` or a ``{group: [categories]}`` mapping) and
    per-sample ``attributes`` at fit time. ``attribute_aware`` also needs
    them at prediction time. ``transform`` returns the shared feature
    vector of each image.
    """

    def __init__(self, approach="baseline", schema=None, alpha=1.0, variant="tiny", feature_dim=None,
                 gradient_policy=None, batch_size=64, initial_lr=1e-3, lr_decay_factor=0.1,
                 lr_decay_every_epochs=40, max_epochs=200, early_stop_patience_epochs=30,
                 augment=None, random_state=0):
        self.approach = approach
        self.schema = schema
        self.alpha = alpha
        self.variant = variant
        self.feature_dim = feature_dim
        self.gradient_policy = gradient_policy
        self.batch_size = batch_size
        self.initial_lr = initial_lr
        self.lr_decay_factor = lr_decay_factor
        self.lr_decay_every_epochs = lr_decay_every_epochs
        self.max_epochs = max_epochs
        self.early_stop_patience_epochs = early_stop_patience_epochs
        self.augment = augment
        self.random_state = random_state

    def _augment_config(self, side):
        if isinstance(self.augment, AugmentConfig):
            return self.augment
        kw = dict(self.augment or {})
        kw.setdefault("crop_size", min(96, side))
        return AugmentConfig(**kw)

    def _samples(self, X, y_idx, attrs, prefix):
        return [
            Sample(f"{prefix}{i:06d}", X[i], int(y_idx[i]), () if attrs is None else tuple(attrs[i]))
            for i in range(len(X))
        ]

    def _attrs(self, attributes, n, required, name="attributes"):
        if attributes is None:
            if required:
                raise ValidationError(f"approach {self.approach!r} needs {name}")
            return None
        if self.schema_ is None:
            return None
        return check_attributes(attributes, self.schema_, n, name)

    def _encode(self, y, name):
        unknown = set(np.unique(y)) - set(self.classes_)
        if unknown:
            raise ValidationError(f"{name} holds labels not seen in y: {sorted(unknown)[:5]}")
        return np.searchsorted(self.classes_, y)

    def fit(self, X, y, attributes=None, X_val=None, y_val=None, attributes_val=None):
        """Train on (X, y); early stopping monitors (X_val, y_val) when given."""
        X = check_images(X)
        y = check_labels(y, len(X))
        if len(X) == 0:
            raise ValidationError("cannot fit on zero images")
        self.schema_ = _as_schema(self.schema)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValidationError("y must contain at least two classes")
        needs_attrs = self.approach != "baseline"
        attrs = self._attrs(attributes, len(X), needs_attrs)
        aug = self._augment_config(X.shape[1])
        cfg = TrainConfig(batch_size=self.batch_size, initial_lr=self.initial_lr,
                          lr_decay_factor=self.lr_decay_factor, lr_decay_every_epochs=self.lr_decay_every_epochs,
                          max_epochs=self.max_epochs, early_stop_patience_epochs=self.early_stop_patience_epochs,
                          seed=self.random_state, approach=self.approach, alpha=self.alpha, augment=aug)
        bundle = build_bundle(self.approach, len(self.classes_), self.schema_, variant=self.variant,
                              feature_dim=self.feature_dim, alpha=self.alpha, policy=self.gradient_policy,
                              input_side=aug.crop_size, seed=self.random_state)
        train_set = self._samples(X, np.searchsorted(self.classes_, y), attrs, "t")
        val_set = []
        if X_val is not None:
            X_val = check_images(X_val, "X_val")
            y_val = check_labels(y_val, len(X_val), "y_val")
            val_attrs = self._attrs(attributes_val, len(X_val), needs_attrs, "attributes_val")
            val_set = self._samples(X_val, self._encode(y_val, "y_val"), val_attrs, "v")
        result = train(bundle, train_set, val_set, cfg)
        self.bundle_ = result.bundle
        self.train_log_ = result.log
        self.epoch_log_ = result.epoch_log
        self.n_features_out_ = self.bundle_.feature_dim
        return self

    def predict_proba(self, X, attributes=None):
        check_is_fitted(self, "bundle_")
        X = check_images(X)
        attrs = self._attrs(attributes, len(X), self.approach == "attribute_aware")
        return predict_proba(self.bundle_, X, attrs, crop_size=self.bundle_.input_side)

    def predict(self, X, attributes=None):
        # argmax returns the lowest index on ties
        proba = self.predict_proba(X, attributes)
        return self.classes_[proba.argmax(axis=1)]

    def transform(self, X):
        check_is_fitted(self, "bundle_")
        return extract_features(self.bundle_, check_images(X), crop_size=self.bundle_.input_side)

    def score(self, X, y, sample_weight=None, attributes=None):
        return accuracy_score(y, self.predict(X, attributes), sample_weight=sample_weight)
