"""Seeded optimisation loop, evaluation and attribute probing."""

from __future__ import annotations

import csv
import logging
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .augment import AugmentConfig, augment, center_crop_batch
from .errors import NumericError, ValidationError
from .losses import LOG_HEADER, attribute_loss, confusion_loss, expression_loss, total_loss
from .models import ModelBundle, save_checkpoint
from .schema import AttributeSchema, Sample, encode_attribute_matrix

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
EVAL_BATCH = 256


@dataclass
class TrainConfig:
    batch_size: int = 64
    initial_lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every_epochs: int = 40
    max_epochs: int = 200
    early_stop_patience_epochs: int = 30
    seed: int = 0
    approach: str = "baseline"
    alpha: float = 1.0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        for name in ("batch_size", "lr_decay_every_epochs", "max_epochs", "early_stop_patience_epochs"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.initial_lr <= 0 or not 0 < self.lr_decay_factor <= 1:
            raise ValidationError("initial_lr must be positive and lr_decay_factor in (0, 1]")
        if self.early_stop_patience_epochs > self.max_epochs:
            raise ValidationError("early_stop_patience_epochs exceeds max_epochs")
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")

    @classmethod
    def raf(cls, **kw):
        return cls(**{"lr_decay_every_epochs": 40, "early_stop_patience_epochs": 30, **kw})

    @classmethod
    def celeba(cls, **kw):
        return cls(**{"lr_decay_every_epochs": 2, "early_stop_patience_epochs": 5, **kw})

    def to_dict(self):
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: ``initial_lr * factor ** floor(epoch / every)``."""
    return cfg.initial_lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every_epochs)


class EarlyStopping:
    """Stop once the monitor has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.epochs_since_improvement = 0

    def update(self, value: float) -> bool:
        if value > self.best:
            self.best = value
            self.epochs_since_improvement = 0
            return True
        self.epochs_since_improvement += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_improvement >= self.patience


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    current_lr: float = 0.0
    best_monitor_value: float = float("-inf")
    epochs_since_improvement: int = 0
    rng_state: list = field(default_factory=list)


@dataclass
class TrainResult:
    bundle: ModelBundle
    log: list
    epoch_log: list
    best_checkpoint: Path | None
    state: TrainState
    stopped_early: bool


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    true: int
    pred: int
    probs: tuple
    attributes: tuple


class ArrayData:
    """Stacked view of a sample list used for batching."""

    def __init__(self, samples: Sequence[Sample]):
        if not samples:
            self.images = np.zeros((0, 1, 1, 3), np.float32)
        else:
            self.images = np.stack([s.image for s in samples]).astype(np.float32, copy=False)
        self.ids = [s.id for s in samples]
        self.labels = np.array([s.expression for s in samples], dtype=np.int64)
        width = len(samples[0].attributes) if samples else 0
        self.attrs = np.array([s.attributes for s in samples], dtype=np.int64).reshape(len(samples), width)
        self.keys = np.array([zlib.crc32(i.encode()) for i in self.ids], dtype=np.uint64)

    def __len__(self):
        return len(self.ids)


def _batch_images(data: ArrayData, idx, aug: AugmentConfig, seed: int, epoch: int, train: bool):
    if not train or not aug.enabled:
        return center_crop_batch(data.images[idx], aug.crop_size)
    return np.stack([
        augment(data.images[i], np.random.default_rng([seed, epoch, int(data.keys[i])]), aug)
        for i in idx
    ])


def _check_schema(bundle: ModelBundle, data: ArrayData):
    if bundle.schema is not None and len(data) and data.attrs.shape[1] != len(bundle.schema):
        raise ValidationError(
            f"samples carry {data.attrs.shape[1]} attributes, bundle schema has {len(bundle.schema)}"
        )


def step_losses(bundle: ModelBundle, images, labels, attrs, routed: bool = True) -> dict:
    """Loss tensors for one batch, keyed ``exp``/``s``/``conf``.

    With ``routed`` each loss's graph only reaches the partitions its
    gradient policy allows.
    """
    attr_vec = encode_attribute_matrix(attrs, bundle.schema) if bundle.kind == "attribute_aware" else None
    if routed:
        out = bundle.routed_logits(images, attr_vec)
    else:
        raw = bundle.logits(images, attr_vec)
        out = {"exp": raw["exp"]}
        if "attr" in raw:
            out["s"] = out["conf"] = raw["attr"]
    labels = torch.as_tensor(labels)
    losses = {"exp": expression_loss(torch.softmax(out["exp"], 1), labels)}
    if bundle.kind == "disentangled":
        attrs = torch.as_tensor(attrs)
        losses["s"] = attribute_loss([torch.softmax(z, 1) for z in out["s"]], attrs)
        losses["conf"] = confusion_loss([torch.softmax(z, 1) for z in out["conf"]], bundle.schema)
    return losses


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def train(bundle: ModelBundle, train_set: Sequence[Sample], val_set: Sequence[Sample],
          cfg: TrainConfig, out_dir=None, restore_best: bool = True) -> TrainResult:
    """Adam with step-decayed learning rate and early stopping.

    The monitor is mean class-wise accuracy on ``val_set`` (training stops
    after ``early_stop_patience_epochs`` epochs without strict improvement).
    With ``out_dir`` the best-by-monitor checkpoint and the CSV logs are
    written there. With ``restore_best`` the returned bundle carries the
    best-by-monitor weights.
    """
    if bundle.kind != cfg.approach:
        raise ValidationError(f"bundle head {bundle.kind!r} does not match approach {cfg.approach!r}")
    if not train_set:
        raise ValidationError("training set is empty")
    bundle.alpha = float(cfg.alpha)
    data, val = ArrayData(train_set), ArrayData(val_set)
    _check_schema(bundle, data)
    _check_schema(bundle, val)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    best_stem = out_dir / "checkpoints" / "best" if out_dir is not None else None

    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(bundle.parameters(), lr=cfg.initial_lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    stopper = EarlyStopping(cfg.early_stop_patience_epochs)
    state = TrainState(current_lr=cfg.initial_lr)
    step_log, epoch_log = [], []
    best_state, best_path, stopped = None, None, False

    for epoch in range(cfg.max_epochs):
        state.epoch = epoch
        state.rng_state = [cfg.seed, epoch]
        state.current_lr = lr_at_epoch(cfg, epoch)
        for group in optimizer.param_groups:
            group["lr"] = state.current_lr
        bundle.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            images = _batch_images(data, idx, cfg.augment, cfg.seed, epoch, train=True)
            losses = step_losses(bundle, images, data.labels[idx], data.attrs[idx])
            try:
                breakdown = total_loss(losses["exp"].item(),
                                       losses["s"].item() if "s" in losses else 0.0,
                                       losses["conf"].item() if "conf" in losses else 0.0,
                                       cfg.alpha)
            except NumericError as exc:
                exc.checkpoint = best_path
                if out_dir is not None:
                    _write_csv(out_dir / "train_log.csv", LOG_HEADER, step_log)
                raise
            total = losses["exp"]
            if "s" in losses:
                total = total + losses["s"] + cfg.alpha * losses["conf"]
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            optimizer.step()
            state.step += 1
            step_log.append(breakdown.row(state.step))

        if len(val):
            monitor = mean_classwise_accuracy(evaluate(bundle, val_set, crop_size=cfg.augment.crop_size))
            improved = stopper.update(monitor)
        else:
            # no validation data: the latest epoch is always the one kept
            monitor, improved = float("nan"), True
        state.best_monitor_value = stopper.best
        state.epochs_since_improvement = stopper.epochs_since_improvement
        epoch_log.append([epoch, repr(float(monitor)), repr(state.current_lr)])
        log.info("epoch %d lr %.2e monitor %.4f", epoch, state.current_lr, monitor)
        if improved:
            best_state = {k: v.detach().clone() for k, v in bundle.state_dict().items()}
            if best_stem is not None:
                best_path = save_checkpoint(bundle, best_stem, {
                    "epoch": epoch, "step": state.step, "monitor": float(monitor),
                    "rng_state": state.rng_state, "train_config": cfg.to_dict(),
                })
        if len(val) and stopper.should_stop:
            stopped = True
            break

    if restore_best and best_state is not None:
        bundle.load_state_dict(best_state)
    bundle.eval()
    if out_dir is not None:
        _write_csv(out_dir / "train_log.csv", LOG_HEADER, step_log)
        _write_csv(out_dir / "epoch_log.csv", ["epoch", "val_monitor", "lr"], epoch_log)
    return TrainResult(bundle, step_log, epoch_log, best_path, state, stopped)


@torch.no_grad()
def predict_proba(bundle: ModelBundle, images: np.ndarray, attrs: np.ndarray | None = None,
                  crop_size: int | None = None) -> np.ndarray:
    """Expression probabilities under the evaluation-time centre crop."""
    bundle.eval()
    crop = crop_size or bundle.input_side
    out = []
    for start in range(0, len(images), EVAL_BATCH):
        batch = center_crop_batch(images[start:start + EVAL_BATCH], crop)
        vec = None
        if bundle.kind == "attribute_aware":
            vec = encode_attribute_matrix(attrs[start:start + EVAL_BATCH], bundle.schema)
        out.append(torch.softmax(bundle.logits(batch, vec)["exp"], 1).cpu().numpy())
    if not out:
        return np.zeros((0, bundle.n_classes))
    return np.concatenate(out)


@torch.no_grad()
def extract_features(bundle: ModelBundle, images: np.ndarray, crop_size: int | None = None) -> np.ndarray:
    bundle.eval()
    crop = crop_size or bundle.input_side
    feats = [bundle.features(center_crop_batch(images[i:i + EVAL_BATCH], crop)).cpu().numpy()
             for i in range(0, len(images), EVAL_BATCH)]
    return np.concatenate(feats) if feats else np.zeros((0, bundle.feature_dim))


def evaluate(bundle: ModelBundle, samples: Sequence[Sample], crop_size: int | None = None) -> list[PredictionRecord]:
    """One record per sample; argmax ties go to the lowest class index."""
    data = ArrayData(samples)
    _check_schema(bundle, data)
    if not len(data):
        return []
    probs = predict_proba(bundle, data.images, data.attrs, crop_size)
    preds = probs.argmax(axis=1)
    return [
        PredictionRecord(sid, int(y), int(p), tuple(float(v) for v in row), tuple(int(a) for a in attrs))
        for sid, y, p, row, attrs in zip(data.ids, data.labels, preds, probs, data.attrs)
    ]


def mean_classwise_accuracy(records: Sequence[PredictionRecord]) -> float:
    true = np.array([r.true for r in records])
    pred = np.array([r.pred for r in records])
    recalls = [np.mean(pred[true == c] == c) for c in np.unique(true)]
    return float(np.mean(recalls)) if recalls else 0.0


def fit_probe(train_features, train_labels, test_features, test_labels) -> float:
    """Test accuracy of one affine + softmax classifier on fixed features."""
    clf = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    clf.fit(np.asarray(train_features), np.asarray(train_labels))
    return float(clf.score(np.asarray(test_features), np.asarray(test_labels)))


def probe_attributes(bundle: ModelBundle, probe_train: Sequence[Sample], probe_test: Sequence[Sample],
                     group: str, schema: AttributeSchema | None = None, crop_size: int | None = None) -> float:
    """How well one attribute group can be read linearly off frozen features."""
    schema = schema or bundle.schema
    if schema is None:
        raise ValidationError("probe_attributes needs an attribute schema")
    j = schema.position(group)
    tr, te = ArrayData(probe_train), ArrayData(probe_test)
    return fit_probe(extract_features(bundle, tr.images, crop_size), tr.attrs[:, j],
                     extract_features(bundle, te.images, crop_size), te.attrs[:, j])


# --- prediction CSV ---------------------------------------------------------

def write_predictions(path, records: Sequence[PredictionRecord], schema: AttributeSchema, n_classes: int) -> Path:
    path = Path(path)
    header = ["id", "true", "pred", *[f"p_{k}" for k in range(n_classes)], *schema.names]
    _write_csv(path, header, [
        [r.id, r.true, r.pred, *[repr(p) for p in r.probs], *r.attributes] for r in records
    ])
    return path


def read_predictions(path, schema: AttributeSchema) -> list[PredictionRecord]:
    """Parse a prediction CSV; malformed lines raise ValidationError naming the line."""
    records = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["id", "true", "pred"]:
            raise ValidationError(f"{path}: line 1: expected header starting id,true,pred")
        n_classes = sum(1 for h in header if h.startswith("p_"))
        if header[3 + n_classes:] != list(schema.names):
            raise ValidationError(f"{path}: line 1: attribute columns {header[3 + n_classes:]} "
                                  f"do not match schema {list(schema.names)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                if len(row) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(row)}")
                true, pred = int(row[1]), int(row[2])
                probs = tuple(float(v) for v in row[3:3 + n_classes])
                attrs = tuple(int(v) for v in row[3 + n_classes:])
                if not (0 <= true < n_classes and 0 <= pred < n_classes):
                    raise ValueError("class index out of range")
                for a, size in zip(attrs, schema.sizes):
                    if not 0 <= a < size:
                        raise ValueError("attribute index out of range")
            except ValueError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from None
            records.append(PredictionRecord(row[0], true, pred, probs, attrs))
    return records
