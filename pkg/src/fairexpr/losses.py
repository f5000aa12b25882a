"""Expression, attribute and confusion losses on predicted probabilities.

All losses take probabilities (not logits), clamp them below at
``PROB_FLOOR`` before the log, and average over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import NumericError, ValidationError

PROB_FLOOR = 1e-12


def _as_tensor(x, dtype=None):
    if torch.is_tensor(x):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype or torch.float64)


def _neg_log(p):
    return -torch.log(torch.clamp(p, min=PROB_FLOOR))


def _labels(labels, n, width, what):
    labels = torch.as_tensor(np.asarray(labels) if not torch.is_tensor(labels) else labels).long().reshape(-1)
    if labels.shape[0] != n:
        raise ValidationError(f"{what}: {labels.shape[0]} labels for {n} rows")
    if n and (labels.min() < 0 or labels.max() >= width):
        raise ValidationError(f"{what}: label out of range [0, {width})")
    return labels


def expression_loss(probs, labels) -> torch.Tensor:
    """Mean cross-entropy ``-log p[y]`` over the batch."""
    probs = _as_tensor(probs)
    if probs.ndim != 2:
        raise ValidationError(f"probs must be B x K, got shape {tuple(probs.shape)}")
    y = _labels(labels, probs.shape[0], probs.shape[1], "expression")
    picked = probs.gather(1, y[:, None]).squeeze(1)
    return _neg_log(picked).mean()


def _group_probs(attr_probs, sizes=None):
    groups = [_as_tensor(p) for p in attr_probs]
    if sizes is not None:
        if len(groups) != len(sizes):
            raise ValidationError(f"expected {len(sizes)} attribute groups, got {len(groups)}")
        for j, (p, size) in enumerate(zip(groups, sizes)):
            if p.ndim != 2 or p.shape[1] != size:
                raise ValidationError(
                    f"group {j}: expected width {size}, got shape {tuple(p.shape)}"
                )
    return groups


def confusion_loss(attr_probs: Sequence, schema=None) -> torch.Tensor:
    """Cross-entropy of each group's prediction against the uniform target.

    Per sample: sum over groups of ``mean_s -log p_s``; then batch mean.
    Minimal (= sum of ln|S_j|) exactly when every row is uniform.
    """
    groups = _group_probs(attr_probs, schema.sizes if schema is not None else None)
    total = 0.0
    for p in groups:
        total = total + _neg_log(p).mean(dim=1)
    return total.mean()


def attribute_loss(attr_probs: Sequence, attr_labels) -> torch.Tensor:
    """Sum over groups of ``-log p[true category]``, batch mean.

    ``attr_labels`` is either an (N, m) index matrix or a list of m label
    vectors.
    """
    groups = _group_probs(attr_probs)
    if torch.is_tensor(attr_labels) or isinstance(attr_labels, np.ndarray):
        labels = torch.as_tensor(np.asarray(attr_labels) if not torch.is_tensor(attr_labels) else attr_labels)
        labels = labels.reshape(len(groups[0]) if groups else 0, -1).T
    else:
        labels = list(attr_labels)
    if len(labels) != len(groups):
        raise ValidationError(f"expected labels for {len(groups)} groups, got {len(labels)}")
    total = 0.0
    for j, (p, y) in enumerate(zip(groups, labels)):
        y = _labels(y, p.shape[0], p.shape[1], f"attribute group {j}")
        total = total + _neg_log(p.gather(1, y[:, None]).squeeze(1))
    return total.mean()


@dataclass(frozen=True)
class LossBreakdown:
    exp: float
    s: float
    conf: float
    total: float
    alpha: float

    def row(self, step: int) -> list:
        return [step, repr(self.exp), repr(self.s), repr(self.conf), repr(self.total), repr(self.alpha)]


LOG_HEADER = ["step", "exp", "s", "conf", "total", "alpha"]


def total_loss(exp, s, conf, alpha: float) -> LossBreakdown:
    values = {"exp": float(exp), "s": float(s), "conf": float(conf), "alpha": float(alpha)}
    for name, value in values.items():
        if not math.isfinite(value):
            raise NumericError(name, value)
    total = values["exp"] + values["s"] + values["alpha"] * values["conf"]
    return LossBreakdown(values["exp"], values["s"], values["conf"], total, values["alpha"])
