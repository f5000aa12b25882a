"""Synthetic images with a tunable class/attribute correlation.

Layout of a generated image (side ``s``):

* top band, one horizontal stripe per attribute group, tinted by the
  sample's category in that group (the nuisance cue);
* everything below: a class-indexed stripe pattern (the class cue).

The two regions are disjoint, so the class is always recoverable from the
lower region alone. For a biased group with strength ``rho`` the category
equals the class-linked category with probability ``rho`` and is otherwise
drawn from the group's marginals.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .ingest import write_manifest
from .schema import RAF_EXPRESSIONS, AttributeSchema, Sample, raf_schema

# test-set marginals of the RAF-style groups
RAF_MARGINALS = {
    "race": (0.774, 0.071, 0.155),
    "gender": (0.437, 0.563),
    "age": (0.055, 0.164, 0.575, 0.174, 0.032),
}

PATTERN_KINDS = ("horizontal", "vertical", "checker")
PATTERN_PERIODS = (1 / 12, 1 / 6, 1 / 3)  # as a fraction of the image side


@dataclass
class SynthConfig:
    n_samples: int = 1000
    image_side: int = 100
    n_classes: int = 7
    schema: AttributeSchema = field(default_factory=raf_schema)
    bias: Mapping[str, float] = field(default_factory=dict)
    marginals: Mapping[str, Sequence[float]] | None = None
    class_probs: Sequence[float] | None = None
    noise_std: float = 0.1
    class_contrast: float = 0.2
    band_fraction: float = 0.25
    seed: int = 0
    id_prefix: str = "s"
    expressions: Sequence[str] | None = None

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValidationError("n_samples: must be nonnegative")
        if self.n_classes < 2 or self.n_classes > len(PATTERN_KINDS) * len(PATTERN_PERIODS):
            raise ValidationError(f"n_classes: must lie in [2, {len(PATTERN_KINDS) * len(PATTERN_PERIODS)}]")
        if self.image_side < 8:
            raise ValidationError("image_side: must be at least 8")
        # groups without explicit marginals take the RAF-style defaults when
        # the sizes agree, else uniform
        defaults = {
            g.name: RAF_MARGINALS[g.name] if len(RAF_MARGINALS.get(g.name, ())) == g.size
            else tuple([1.0 / g.size] * g.size)
            for g in self.schema.groups
        }
        self.marginals = {**defaults, **dict(self.marginals or {})}
        self.marginals = {k: tuple(float(p) for p in v) for k, v in self.marginals.items()}
        for g in self.schema.groups:
            _check_probs(self.marginals[g.name], g.size, f"marginals.{g.name}")
        extra = set(self.marginals) - set(self.schema.names)
        if extra:
            raise ValidationError(f"marginals.{sorted(extra)[0]}: group not in schema")
        self.bias = {k: float(v) for k, v in dict(self.bias).items()}
        for name, rho in self.bias.items():
            if name not in self.schema:
                raise ValidationError(f"bias.{name}: group not in schema")
            if not 0.0 <= rho <= 1.0:
                raise ValidationError(f"bias.{name}: must lie in [0, 1]")
        if self.class_probs is None:
            self.class_probs = tuple([1.0 / self.n_classes] * self.n_classes)
        self.class_probs = tuple(float(p) for p in self.class_probs)
        _check_probs(self.class_probs, self.n_classes, "class_probs")
        if self.expressions is None:
            self.expressions = (RAF_EXPRESSIONS if self.n_classes == len(RAF_EXPRESSIONS)
                                else tuple(f"class{k}" for k in range(self.n_classes)))
        self.expressions = tuple(self.expressions)
        if len(self.expressions) != self.n_classes:
            raise ValidationError("expressions: length must equal n_classes")

    def linked_category(self, group: str, cls: int) -> int:
        return linked_category(self.marginals[group], cls, self.n_classes)


def _check_probs(probs, size, where):
    if len(probs) != size:
        raise ValidationError(f"{where}: expected {size} probabilities, got {len(probs)}")
    if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-6:
        raise ValidationError(f"{where}: probabilities must be nonnegative and sum to 1")


def linked_category(marginals: Sequence[float], cls: int, n_classes: int) -> int:
    """Category whose cumulative-marginal interval contains ``(cls + 0.5) / K``.

    Majority categories are linked to proportionally more classes, so a
    shortcut through the nuisance cue favours the majority subgroup.
    """
    cum = np.cumsum(marginals)
    return int(min(np.searchsorted(cum, (cls + 0.5) / n_classes, side="right"), len(marginals) - 1))


def tint(category: int, n_categories: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(category / n_categories, 0.7, 0.85), dtype=np.float32)


def class_pattern(cls: int, side: int, height: int, phase: float) -> np.ndarray:
    kind = PATTERN_KINDS[cls % len(PATTERN_KINDS)]
    period = max(2.0, PATTERN_PERIODS[cls // len(PATTERN_KINDS)] * side)
    yy, xx = np.mgrid[0:height, 0:side].astype(np.float32)
    w = 2 * np.pi / period
    if kind == "horizontal":
        return np.sin(w * yy + phase)
    if kind == "vertical":
        return np.sin(w * xx + phase)
    return np.sin(w * yy + phase) * np.sin(w * xx + phase)


def render(cls: int, attributes: Sequence[int], cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    s = cfg.image_side
    band_total = max(len(cfg.schema), int(round(s * cfg.band_fraction)))
    img = np.full((s, s, 3), 0.5, dtype=np.float32)
    edges = np.linspace(0, band_total, len(cfg.schema) + 1).round().astype(int)
    for j, (group, cat) in enumerate(zip(cfg.schema.groups, attributes)):
        img[edges[j]:edges[j + 1]] = tint(cat, group.size)
    pattern = class_pattern(cls, s, s - band_total, float(rng.uniform(0, 2 * np.pi)))
    img[band_total:] += cfg.class_contrast * pattern[..., None]
    img += rng.normal(0.0, cfg.noise_std, size=img.shape).astype(np.float32)
    # 8-bit quantisation keeps written PNGs round-trip exact
    return (np.clip(np.rint(np.clip(img, 0, 1) * 255), 0, 255) / 255.0).astype(np.float32)


def draw_labels(cfg: SynthConfig, rng: np.random.Generator) -> tuple[int, tuple[int, ...]]:
    cls = int(rng.choice(cfg.n_classes, p=cfg.class_probs))
    attrs = []
    for g in cfg.schema.groups:
        rho = cfg.bias.get(g.name, 0.0)
        linked = rng.random() < rho
        free = int(rng.choice(g.size, p=cfg.marginals[g.name]))
        attrs.append(cfg.linked_category(g.name, cls) if linked else free)
    return cls, tuple(attrs)


def generate(cfg: SynthConfig, out_dir=None, *, manifest_name: str = "manifest.csv",
             splits: Sequence[str] | None = None):
    """Generate ``cfg.n_samples`` samples; optionally write PNGs and a manifest.

    Sample ``i`` uses its own stream seeded by ``(seed, i)``, so output is
    independent of generation order. Returns ``(samples, manifest_path)``
    with ``manifest_path`` None when ``out_dir`` is None.
    """
    samples = []
    for i in range(cfg.n_samples):
        rng = np.random.default_rng([cfg.seed, i])
        cls, attrs = draw_labels(cfg, rng)
        img = render(cls, attrs, cfg, rng)
        samples.append(Sample(f"{cfg.id_prefix}{i:06d}", img, cls, attrs))
    manifest = None
    if out_dir is not None:
        manifest = write_manifest(Path(out_dir) / manifest_name, samples, cfg.schema,
                                  cfg.expressions, splits=splits)
    return samples, manifest


@dataclass
class AuditTable:
    group: str
    categories: tuple[str, ...]
    counts: np.ndarray  # K x |S|

    @property
    def marginals(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts.sum(axis=0) / total if total else np.zeros(self.counts.shape[1])

    @property
    def class_fractions(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts.sum(axis=1) / total if total else np.zeros(self.counts.shape[0])


def bias_audit(samples: Sequence[Sample], schema: AttributeSchema, n_classes: int) -> list[AuditTable]:
    """Class x category counts for every group."""
    if not samples:
        raise ValidationError("bias_audit needs at least one sample")
    labels = np.array([s.expression for s in samples])
    attrs = np.array([s.attributes for s in samples])
    tables = []
    for j, g in enumerate(schema.groups):
        counts = np.zeros((n_classes, g.size), dtype=np.int64)
        np.add.at(counts, (labels, attrs[:, j]), 1)
        tables.append(AuditTable(g.name, g.categories, counts))
    return tables


def audit_markdown(tables: Sequence[AuditTable], class_names: Sequence[str]) -> str:
    header = ["", *[f"{t.group}:{c}" for t in tables for c in t.categories], "pct."]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    fractions = tables[0].class_fractions
    for k, name in enumerate(class_names):
        cells = [str(int(t.counts[k, c])) for t in tables for c in range(len(t.categories))]
        lines.append("| " + " | ".join([name, *cells, f"{100 * fractions[k]:.1f}%"]) + " |")
    pct = [f"{100 * p:.1f}%" for t in tables for p in t.marginals]
    lines.append("| " + " | ".join(["pct.", *pct, ""]) + " |")
    return "\n".join(lines) + "\n"


def audit_rows(tables: Sequence[AuditTable], class_names: Sequence[str]) -> list[list]:
    rows = [["group", "category", *class_names, "total"]]
    for t in tables:
        for c, cat in enumerate(t.categories):
            rows.append([t.group, cat, *[int(v) for v in t.counts[:, c]], int(t.counts[:, c].sum())])
    return rows
