"""Data model: attribute schemas, samples, one-hot encoding and splits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

RAF_EXPRESSIONS = ("Surprise", "Fear", "Disgust", "Happy", "Sad", "Anger", "Neutral")
CELEBA_EXPRESSIONS = ("NotSmiling", "Smiling")


@dataclass(frozen=True)
class AttributeGroup:
    name: str
    categories: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.categories) < 2:
            raise ValidationError(f"group {self.name!r} needs at least 2 categories")
        if len(set(self.categories)) != len(self.categories):
            raise ValidationError(f"duplicate category in group {self.name!r}")

    @property
    def size(self) -> int:
        return len(self.categories)

    def index(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise ValidationError(
                f"unknown {self.name} label {label!r}; expected one of {list(self.categories)}"
            ) from None


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered sensitive-attribute groups.

    The one-hot encoding concatenates one block per group in declaration
    order, so its width is the sum of the group sizes.
    """

    groups: tuple[AttributeGroup, ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate group names in {names}")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]]) -> "AttributeSchema":
        return cls(tuple(AttributeGroup(str(k), tuple(map(str, v))) for k, v in mapping.items()))

    def to_mapping(self) -> dict[str, list[str]]:
        return {g.name: list(g.categories) for g in self.groups}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(g.size for g in self.groups)

    @property
    def width(self) -> int:
        return sum(self.sizes)

    def __len__(self):
        return len(self.groups)

    def __contains__(self, name):
        return name in self.names

    def group(self, name: str) -> AttributeGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise ValidationError(f"group {name!r} not in schema {list(self.names)}")

    def position(self, name: str) -> int:
        return self.names.index(self.group(name).name)


def raf_schema() -> AttributeSchema:
    return AttributeSchema.from_mapping({
        "race": ["Caucasian", "African-American", "Asian"],
        "gender": ["Male", "Female"],
        "age": ["0-3", "4-19", "20-39", "40-69", "70+"],
    })


def celeba_schema() -> AttributeSchema:
    return AttributeSchema.from_mapping({
        "gender": ["Female", "Male"],
        "age": ["Old", "Young"],
    })


@dataclass(frozen=True, eq=False)
class Sample:
    """One image with its expression label and attribute indices.

    ``image`` is H x W x 3 float32 in [0, 1]; ``attributes`` holds one
    category index per schema group, in schema order.
    """

    id: str
    image: np.ndarray = field(repr=False)
    expression: int
    attributes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(int(a) for a in self.attributes))
        self.image.setflags(write=False)


def validate_attributes(attributes: Sequence[int], schema: AttributeSchema) -> None:
    if len(attributes) != len(schema):
        raise ValidationError(
            f"expected {len(schema)} attribute indices, got {len(attributes)}"
        )
    for value, group in zip(attributes, schema.groups):
        if not 0 <= int(value) < group.size:
            raise ValidationError(
                f"attribute index {value} out of range for group {group.name!r} (size {group.size})"
            )


def encode_attributes(sample: Sample | Sequence[int], schema: AttributeSchema) -> np.ndarray:
    """Concatenated one-hot vector of a sample's attributes."""
    attributes = sample.attributes if isinstance(sample, Sample) else tuple(sample)
    validate_attributes(attributes, schema)
    out = np.zeros(schema.width, dtype=np.float32)
    offset = 0
    for value, size in zip(attributes, schema.sizes):
        out[offset + int(value)] = 1.0
        offset += size
    return out


def encode_attribute_matrix(attributes: np.ndarray, schema: AttributeSchema) -> np.ndarray:
    """Vectorised :func:`encode_attributes` for an (N, m) index matrix."""
    attributes = np.asarray(attributes, dtype=np.int64).reshape(-1, len(schema))
    out = np.zeros((attributes.shape[0], schema.width), dtype=np.float32)
    offset = 0
    for j, size in enumerate(schema.sizes):
        col = attributes[:, j]
        if col.size and (col.min() < 0 or col.max() >= size):
            raise ValidationError(f"attribute index out of range for group {schema.groups[j].name!r}")
        out[np.arange(len(col)), offset + col] = 1.0
        offset += size
    return out


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Floor for train and val, remainder to test."""
    train_f, val_f, _ = fractions
    # tolerance absorbs float products like 0.29 * 100 = 28.999999999999996
    n_train = math.floor(train_f * n + 1e-9)
    n_val = min(math.floor(val_f * n + 1e-9), n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_deterministic(samples: Sequence[Sample], fractions: Sequence[float], seed: int):
    """Partition samples into (train, val, test).

    Membership depends only on the sample ids, ``fractions`` and ``seed``;
    each part keeps the input order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValidationError(f"fractions must be three nonnegative numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {sum(fractions)!r}")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError("sample ids must be unique to split")

    order = sorted(ids)
    perm = np.random.default_rng(seed).permutation(len(order))
    n_train, n_val, _ = split_sizes(len(order), fractions)
    tag = {}
    for rank, pos in enumerate(perm):
        tag[order[pos]] = 0 if rank < n_train else (1 if rank < n_train + n_val else 2)
    parts = ([], [], [])
    for s in samples:
        parts[tag[s.id]].append(s)
    return parts
