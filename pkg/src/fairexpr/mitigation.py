"""Desk-scale bias mitigation experiment on synthetic data.

For one seed: train a baseline and a disentangled model (for each alpha
of a small grid) on data whose single binary attribute is linked to the
class with strength ``rho``; score them on unbiased test data; probe the
frozen features for the attribute; and check that a baseline trained on
unbiased data learns the task.

Alpha is chosen per seed from validation data only: among grid values
whose validation class-wise accuracy is at least ``accuracy_floor`` times
the baseline's, the one with the highest validation fairness wins; if
none qualifies, the most accurate one.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

from .augment import AugmentConfig
from .fairness import build_report
from .models import build_bundle
from .schema import AttributeSchema
from .synth import SynthConfig, generate
from .trainer import TrainConfig, evaluate, probe_attributes, train

log = logging.getLogger(__name__)

GROUP = "group"


@dataclass
class MitigationConfig:
    n_train: int = 6000
    n_val: int = 600
    n_test: int = 1500
    image_side: int = 48
    n_classes: int = 4
    marginals: tuple[float, float] = (0.8, 0.2)
    rho: float = 0.95
    class_contrast: float = 0.06
    noise_std: float = 0.15
    alphas: tuple[float, ...] = (0.03, 0.1, 0.3)
    epochs: int = 10
    sanity_epochs: int = 10
    batch_size: int = 64
    accuracy_floor: float = 0.9


@dataclass
class ModelScore:
    val_accuracy: float
    val_fairness: float | None
    test_accuracy: float
    test_fairness: float | None
    probe_accuracy: float
    seconds: float


@dataclass
class SeedResult:
    seed: int
    baseline: ModelScore
    disentangled: dict[float, ModelScore] = field(default_factory=dict)
    chosen_alpha: float | None = None
    unbiased_baseline_accuracy: float | None = None

    @property
    def chosen(self) -> ModelScore:
        return self.disentangled[self.chosen_alpha]

    def to_dict(self):
        d = asdict(self)
        d["disentangled"] = {repr(a): asdict(s) for a, s in self.disentangled.items()}
        return d


def schema() -> AttributeSchema:
    return AttributeSchema.from_mapping({GROUP: ["majority", "minority"]})


def _data(cfg: MitigationConfig, n: int, rho: float, seed: int, prefix: str):
    sc = SynthConfig(n_samples=n, image_side=cfg.image_side, n_classes=cfg.n_classes, schema=schema(),
                     bias={GROUP: rho}, marginals={GROUP: cfg.marginals}, noise_std=cfg.noise_std,
                     class_contrast=cfg.class_contrast, seed=seed, id_prefix=prefix)
    return generate(sc)[0]


def _fit(kind, alpha, train_set, val_set, cfg: MitigationConfig, seed: int, epochs: int):
    train_cfg = TrainConfig(batch_size=cfg.batch_size, max_epochs=epochs, early_stop_patience_epochs=epochs,
                            approach=kind, alpha=alpha, seed=seed,
                            augment=AugmentConfig(crop_size=cfg.image_side, enabled=False))
    bundle = build_bundle(kind, cfg.n_classes, schema(), alpha=alpha, input_side=cfg.image_side, seed=seed)
    return train(bundle, train_set, val_set, train_cfg).bundle


def _score(bundle, val_set, test_set, probe_split: int, started: float) -> ModelScore:
    val = build_report(evaluate(bundle, val_set), schema())
    test = build_report(evaluate(bundle, test_set), schema())
    probe = probe_attributes(bundle, test_set[:probe_split], test_set[probe_split:], GROUP)
    return ModelScore(val.mean_classwise_accuracy, val.fairness.get(GROUP), test.mean_classwise_accuracy,
                      test.fairness.get(GROUP), probe, time.perf_counter() - started)


def choose_alpha(baseline: ModelScore, candidates: dict[float, ModelScore], floor: float) -> float:
    eligible = [a for a, s in candidates.items()
                if s.val_accuracy >= floor * baseline.val_accuracy and s.val_fairness is not None]
    if eligible:
        return max(eligible, key=lambda a: (candidates[a].val_fairness, -a))
    return max(candidates, key=lambda a: (candidates[a].val_accuracy, -a))


def run_seed(seed: int, cfg: MitigationConfig | None = None) -> SeedResult:
    """Run every model for one seed. Data streams are derived from ``seed``."""
    cfg = cfg or MitigationConfig()
    train_set = _data(cfg, cfg.n_train, cfg.rho, 10_000 + seed, "tr")
    val_set = _data(cfg, cfg.n_val, cfg.rho, 20_000 + seed, "va")
    test_set = _data(cfg, cfg.n_test, 0.0, 30_000 + seed, "te")
    split = cfg.n_test // 2  # probe trains on one half of the unbiased test set, scores the other

    t = time.perf_counter()
    base = _score(_fit("baseline", 0.0, train_set, val_set, cfg, seed, cfg.epochs), val_set, test_set, split, t)
    result = SeedResult(seed, base)
    log.info("seed %d baseline %s", seed, base)
    for alpha in cfg.alphas:
        t = time.perf_counter()
        bundle = _fit("disentangled", alpha, train_set, val_set, cfg, seed, cfg.epochs)
        result.disentangled[alpha] = _score(bundle, val_set, test_set, split, t)
        log.info("seed %d alpha %s %s", seed, alpha, result.disentangled[alpha])
    result.chosen_alpha = choose_alpha(base, result.disentangled, cfg.accuracy_floor)

    fair_train = _data(cfg, cfg.n_train, 0.0, 40_000 + seed, "ut")
    fair_val = _data(cfg, cfg.n_val, 0.0, 50_000 + seed, "uv")
    bundle = _fit("baseline", 0.0, fair_train, fair_val, cfg, seed, cfg.sanity_epochs)
    result.unbiased_baseline_accuracy = build_report(evaluate(bundle, test_set), schema()).mean_classwise_accuracy
    return result
