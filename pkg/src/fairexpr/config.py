"""Experiment configuration files.

One YAML document describes a run::

    seed: 0
    output_dir: runs/demo
    approach: disentangled      # baseline | attribute_aware | disentangled
    alpha: 1.0
    schema: {gender: [Male, Female], race: [Caucasian, African-American, Asian]}
    expressions: [Surprise, Fear, Disgust, Happy, Sad, Anger, Neutral]
    joint_groupings: [[gender, race]]
    model: {variant: tiny}
    train: {max_epochs: 20}
    augment: {crop_size: 96}
    dataset:
      synth: {n_samples: 2000, bias: {race: 0.9}}   # or: manifest: path/to/manifest.csv
      splits: [0.8, 0.1, 0.1]

Relative paths are resolved against the directory holding the config file.
Anything omitted takes the documented default and is echoed in the
resolved snapshot written next to the run's outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .augment import AugmentConfig
from .errors import ConfigError, ValidationError
from .ingest import DEFAULT_EXCLUDE, IMAGE_SIZE
from .models import KINDS, VARIANTS, GradientPolicy
from .schema import RAF_EXPRESSIONS, AttributeSchema, raf_schema
from .synth import SynthConfig
from .trainer import TrainConfig

RESOLVED_NAME = "resolved_config.yaml"
TOP_LEVEL = {"seed", "output_dir", "approach", "alpha", "schema", "expressions", "joint_groupings",
             "model", "train", "augment", "dataset"}
DATASET_KEYS = {"synth", "manifest", "splits", "exclude", "image_size", "data_dir"}
SYNTH_KEYS = {"n_samples", "image_side", "n_classes", "bias", "marginals", "class_probs", "noise_std",
              "class_contrast", "band_fraction", "seed"}
MODEL_KEYS = {"variant", "feature_dim", "gradient_policy"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"approach", "alpha", "seed", "augment"}
AUGMENT_KEYS = {f.name for f in dataclasses.fields(AugmentConfig)}


def _section(raw, where: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError(where, f"expected a mapping, got {type(raw).__name__}")
    return dict(raw)


def _no_unknown(section: Mapping, allowed, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else str(key), "unknown key")


def _wrap(where: str, fn, *args, **kw):
    """Call ``fn`` and turn ValidationError/TypeError into a ConfigError under ``where``."""
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (ValidationError, TypeError, ValueError) as exc:
        text = str(exc)
        head, sep, rest = text.partition(": ")
        if sep and " " not in head:
            raise ConfigError(f"{where}.{head}", rest) from None
        raise ConfigError(where, text) from None


@dataclass
class DatasetConfig:
    synth: dict | None = None
    manifest: Path | None = None
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    exclude: dict = field(default_factory=lambda: dict(DEFAULT_EXCLUDE))
    image_size: int = IMAGE_SIZE
    data_dir: Path | None = None

    def to_dict(self) -> dict:
        return {
            "synth": None if self.synth is None else dict(self.synth),
            "manifest": None if self.manifest is None else str(self.manifest),
            "splits": list(self.splits),
            "exclude": dict(self.exclude),
            "image_size": self.image_size,
            "data_dir": None if self.data_dir is None else str(self.data_dir),
        }


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: Path
    approach: str
    alpha: float
    schema: AttributeSchema
    expressions: tuple[str, ...]
    joint_groupings: tuple[tuple[str, ...], ...]
    variant: str
    feature_dim: int | None
    gradient_policy: GradientPolicy
    train: TrainConfig
    dataset: DatasetConfig
    source: Path | None = None

    @property
    def augment(self) -> AugmentConfig:
        return self.train.augment

    @property
    def manifest_path(self) -> Path:
        """Manifest the run reads: the given file, or the synthetic one under ``data_dir``."""
        if self.dataset.manifest is not None:
            return self.dataset.manifest
        return self.dataset.data_dir / "manifest.csv"

    def synth_config(self) -> SynthConfig:
        if self.dataset.synth is None:
            raise ConfigError("dataset.synth", "this experiment reads a manifest, not synthetic data")
        kw = dict(self.dataset.synth)
        kw.setdefault("seed", self.seed)
        return _wrap("dataset.synth", SynthConfig, schema=self.schema, expressions=self.expressions, **kw)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        augment = train.pop("augment")
        for key in ("approach", "alpha", "seed"):
            train.pop(key)
        return {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "approach": self.approach,
            "alpha": self.alpha,
            "schema": self.schema.to_mapping(),
            "expressions": list(self.expressions),
            "joint_groupings": [list(g) for g in self.joint_groupings],
            "model": {
                "variant": self.variant,
                "feature_dim": self.feature_dim,
                "gradient_policy": self.gradient_policy.to_dict(),
            },
            "train": train,
            "augment": augment,
            "dataset": self.dataset.to_dict(),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def write_resolved(self, directory=None) -> Path:
        directory = Path(directory or self.output_dir)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RESOLVED_NAME
        path.write_text(self.dump(), encoding="utf-8")
        return path


def _resolve_path(value, base: Path, where: str) -> Path:
    if not isinstance(value, (str, Path)) or not str(value):
        raise ConfigError(where, "expected a path")
    p = Path(value)
    return p if p.is_absolute() else base / p


def _as_int(value, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(where, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(where, f"must be >= {minimum}")
    return value


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    return float(value)


def parse_config(raw: Mapping[str, Any], base_dir=".", *, seed: int | None = None,
                 output_dir=None, source: Path | None = None) -> ExperimentConfig:
    """Validate a raw mapping and fill in defaults.

    ``seed`` and ``output_dir`` override the corresponding file entries.
    """
    base = Path(base_dir)
    raw = _section(raw, "")
    _no_unknown(raw, TOP_LEVEL, "")

    seed = _as_int(raw.get("seed", 0) if seed is None else seed, "seed", 0)
    if output_dir is not None:
        out = Path(output_dir)
    else:
        out = _resolve_path(raw.get("output_dir", "run"), base, "output_dir")

    approach = raw.get("approach", "baseline")
    if approach not in KINDS:
        raise ConfigError("approach", f"expected one of {list(KINDS)}, got {approach!r}")
    alpha = _as_float(raw.get("alpha", 1.0), "alpha")
    if alpha < 0:
        raise ConfigError("alpha", "must be >= 0")

    if "schema" in raw:
        schema_raw = _section(raw["schema"], "schema")
        if not schema_raw:
            if approach != "baseline":
                raise ConfigError("schema", f"approach {approach!r} needs at least one attribute group")
            raise ConfigError("schema", "must name at least one attribute group")
        schema = _wrap("schema", AttributeSchema.from_mapping, schema_raw)
    else:
        schema = raf_schema()

    dataset_raw = _section(raw.get("dataset"), "dataset")
    _no_unknown(dataset_raw, DATASET_KEYS, "dataset")
    has_synth, has_manifest = dataset_raw.get("synth") is not None, dataset_raw.get("manifest") is not None
    if has_synth == has_manifest:
        raise ConfigError("dataset", "give exactly one of 'synth' or 'manifest'")

    synth = None
    if has_synth:
        synth = _section(dataset_raw["synth"], "dataset.synth")
        _no_unknown(synth, SYNTH_KEYS, "dataset.synth")

    n_classes = synth.get("n_classes", 7) if synth is not None else None
    default_vocab = (RAF_EXPRESSIONS if n_classes in (None, len(RAF_EXPRESSIONS))
                     else tuple(f"class{k}" for k in range(n_classes)))
    expressions = raw.get("expressions", default_vocab)
    if not isinstance(expressions, (list, tuple)) or len(expressions) < 2 or len(set(expressions)) != len(expressions):
        raise ConfigError("expressions", "expected a list of at least two distinct labels")
    expressions = tuple(str(e) for e in expressions)

    splits = dataset_raw.get("splits", (0.8, 0.1, 0.1))
    if not isinstance(splits, (list, tuple)) or len(splits) != 3:
        raise ConfigError("dataset.splits", "expected [train, val, test] fractions")
    splits = tuple(_as_float(f, "dataset.splits") for f in splits)
    if min(splits) < 0 or abs(sum(splits) - 1.0) > 1e-9:
        raise ConfigError("dataset.splits", "fractions must be nonnegative and sum to 1")

    if synth is not None:
        image_default = synth.get("image_side", 100)
        if "data_dir" in dataset_raw:
            data_dir = _resolve_path(dataset_raw["data_dir"], base, "dataset.data_dir")
        else:
            data_dir = out / "data"
        manifest = None
    else:
        image_default = IMAGE_SIZE
        manifest = _resolve_path(dataset_raw["manifest"], base, "dataset.manifest")
        data_dir = None
        if "data_dir" in dataset_raw:
            raise ConfigError("dataset.data_dir", "only meaningful with synthetic data")
    exclude = _section(dataset_raw.get("exclude", DEFAULT_EXCLUDE), "dataset.exclude")
    dataset = DatasetConfig(synth=synth, manifest=manifest, splits=splits,
                            exclude={str(k): str(v) for k, v in exclude.items()},
                            image_size=_as_int(dataset_raw.get("image_size", image_default), "dataset.image_size", 8),
                            data_dir=data_dir)

    model = _section(raw.get("model"), "model")
    _no_unknown(model, MODEL_KEYS, "model")
    variant = model.get("variant", "tiny")
    if variant not in VARIANTS:
        raise ConfigError("model.variant", f"expected one of {list(VARIANTS)}, got {variant!r}")
    feature_dim = model.get("feature_dim")
    if feature_dim is not None:
        feature_dim = _as_int(feature_dim, "model.feature_dim", 1)
    if model.get("gradient_policy") is not None:
        routes = _section(model["gradient_policy"], "model.gradient_policy")
        policy = _wrap("model", GradientPolicy, routes)
    else:
        policy = GradientPolicy.default(approach)

    augment_raw = _section(raw.get("augment"), "augment")
    _no_unknown(augment_raw, AUGMENT_KEYS, "augment")
    augment_raw.setdefault("crop_size", min(96, dataset.image_size))
    augment = _wrap("augment", AugmentConfig, **augment_raw)
    if augment.crop_size > dataset.image_size:
        raise ConfigError("augment.crop_size", f"{augment.crop_size} exceeds image size {dataset.image_size}")

    train_raw = _section(raw.get("train"), "train")
    _no_unknown(train_raw, TRAIN_KEYS, "train")
    train = _wrap("train", TrainConfig, approach=approach, alpha=alpha, seed=seed, augment=augment, **train_raw)

    groupings = []
    for i, g in enumerate(raw.get("joint_groupings") or ()):
        if not isinstance(g, (list, tuple)) or len(g) < 2:
            raise ConfigError(f"joint_groupings[{i}]", "expected a list of at least two group names")
        for name in g:
            if name not in schema:
                raise ConfigError(f"joint_groupings[{i}]", f"unknown group {name!r}")
        groupings.append(tuple(g))

    cfg = ExperimentConfig(seed=seed, output_dir=out, approach=approach, alpha=alpha, schema=schema,
                           expressions=expressions, joint_groupings=tuple(groupings), variant=variant,
                           feature_dim=feature_dim, gradient_policy=policy, train=train, dataset=dataset,
                           source=source)
    if synth is not None:
        cfg.synth_config()  # validates marginals, bias and class count against the schema
    return cfg


def load_config(path, *, seed: int | None = None, output_dir=None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: not valid YAML ({exc})") from None
    return parse_config(raw or {}, path.parent, seed=seed, output_dir=output_dir, source=path)
