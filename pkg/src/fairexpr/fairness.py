"""Class-wise accuracy and equal-opportunity fairness over subgroups.

A subgroup key is a tuple of ``(group_name, category_index)`` pairs in
schema order: one pair for a single attribute, several for a joint
grouping such as gender x race.

Fairness of a grouping compares per-class recall sums across its
subgroups: the dominant subgroup has the largest sum and the measure is
the smallest ratio of any subgroup's sum to the dominant one. Classes
absent from some subgroup are left out of every sum in that grouping, and
the classes actually compared are recorded in the report.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import NoSupportError, UndefinedFairnessError, ValidationError
from .schema import AttributeSchema

log = logging.getLogger(__name__)

SubgroupKey = tuple  # tuple[tuple[str, int], ...]


def _matches(record, key, positions) -> bool:
    return all(record.attributes[positions[g]] == c for g, c in key)


def filter_records(records, key: SubgroupKey | None, schema: AttributeSchema | None = None):
    if not key:
        return list(records)
    if schema is None:
        raise ValidationError("a subgroup filter needs the attribute schema")
    positions = {g: schema.position(g) for g, _ in key}
    return [r for r in records if _matches(r, key, positions)]


def class_counts(records) -> tuple[dict[int, int], dict[int, int]]:
    correct, total = {}, {}
    for r in records:
        total[r.true] = total.get(r.true, 0) + 1
        correct[r.true] = correct.get(r.true, 0) + (r.pred == r.true)
    return correct, total


def per_class_recall(records, key: SubgroupKey | None = None,
                     schema: AttributeSchema | None = None) -> dict[int, float]:
    """``{class: correct / total}`` over the (optionally filtered) records.

    Classes without any record are omitted. Raises NoSupportError when the
    filter leaves nothing.
    """
    chosen = filter_records(records, key, schema)
    if not chosen:
        raise NoSupportError(f"no records for subgroup {key}")
    correct, total = class_counts(chosen)
    return {c: correct[c] / total[c] for c in sorted(total)}


def fairness_binary(sum0: float, sum1: float) -> float:
    if sum0 <= 0 or sum1 <= 0:
        raise UndefinedFairnessError(
            f"fairness undefined for recall sums ({sum0}, {sum1}): both must be positive"
        )
    return min(sum0 / sum1, sum1 / sum0)


def fairness_multi(sums: Mapping[Hashable, float]) -> tuple[float, Hashable]:
    """``(F, dominant)`` for per-subgroup recall sums.

    The dominant subgroup is the first one (in mapping order) with the
    largest sum; F is the smallest ratio of another subgroup's sum to it.
    """
    items = list(sums.items())
    if len(items) < 2:
        raise UndefinedFairnessError(f"need at least two subgroups, got {len(items)}")
    dominant, best = items[0]
    for key, value in items[1:]:
        if value > best:
            dominant, best = key, value
    if best <= 0:
        raise UndefinedFairnessError("every subgroup has a zero recall sum")
    return min(v / best for k, v in items if k != dominant), dominant


@dataclass
class SubgroupStats:
    key: SubgroupKey
    recall: dict[int, float]
    support: dict[int, int]

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.recall.values()))) if self.recall else float("nan")

    @property
    def n(self) -> int:
        return sum(self.support.values())


@dataclass
class GroupingResult:
    name: str
    groups: tuple[str, ...]
    subgroups: list[SubgroupKey]
    fairness: float | None = None
    dominant: SubgroupKey | None = None
    common_classes: tuple[int, ...] = ()
    sums: dict = field(default_factory=dict)
    excluded: list[SubgroupKey] = field(default_factory=list)
    low_support: list[SubgroupKey] = field(default_factory=list)
    note: str | None = None


@dataclass
class FairnessReport:
    schema: AttributeSchema
    class_names: tuple[str, ...]
    overall_accuracy: float
    mean_classwise_accuracy: float
    per_class_recall: dict[int, float]
    per_class_support: dict[int, int]
    per_subgroup: dict[SubgroupKey, SubgroupStats]
    groupings: dict[str, GroupingResult]

    @property
    def fairness(self) -> dict[str, float]:
        return {n: g.fairness for n, g in self.groupings.items() if g.fairness is not None}

    @property
    def dominant(self) -> dict[str, SubgroupKey]:
        return {n: g.dominant for n, g in self.groupings.items() if g.dominant is not None}

    def key_label(self, key: SubgroupKey) -> str:
        return "|".join(f"{g}={self.schema.group(g).categories[c]}" for g, c in key)

    def display_label(self, key: SubgroupKey) -> str:
        return "-".join(self.schema.group(g).categories[c] for g, c in key)

    def to_dict(self) -> dict:
        names = self.class_names
        return {
            "overall_accuracy": self.overall_accuracy,
            "mean_classwise_accuracy": self.mean_classwise_accuracy,
            "per_class_recall": {names[c]: v for c, v in self.per_class_recall.items()},
            "per_class_support": {names[c]: v for c, v in self.per_class_support.items()},
            "per_subgroup": {
                self.key_label(k): {
                    "mean": s.mean,
                    "order": i,
                    "recall": {names[c]: v for c, v in s.recall.items()},
                    "support": {names[c]: v for c, v in s.support.items()},
                }
                for i, (k, s) in enumerate(self.per_subgroup.items())
            },
            "fairness": {
                n: {
                    "groups": list(g.groups),
                    "order": i,
                    "F": g.fairness,
                    "dominant": self.key_label(g.dominant) if g.dominant else None,
                    "common_classes": [names[c] for c in g.common_classes],
                    "recall_sums": {self.key_label(k): v for k, v in g.sums.items()},
                    "excluded_no_support": [self.key_label(k) for k in g.excluded],
                    "low_support": [self.key_label(k) for k in g.low_support],
                    "note": g.note,
                }
                for i, (n, g) in enumerate(self.groupings.items())
            },
        }


def grouping_name(groups: Sequence[str]) -> str:
    return "-".join(groups)


def grouping_display(groups: Sequence[str]) -> str:
    """``Gender`` for one group, initials like ``G-R`` for joint groups."""
    if len(groups) == 1:
        return groups[0].capitalize()
    return "-".join(g[0].upper() for g in groups)


def _subgroup_keys(schema: AttributeSchema, groups: Sequence[str]) -> list[SubgroupKey]:
    cats = [range(schema.group(g).size) for g in groups]
    return [tuple(zip(groups, combo)) for combo in itertools.product(*cats)]


def build_report(records, schema: AttributeSchema, joint_groupings: Sequence[Sequence[str]] = (),
                 class_names: Sequence[str] | None = None, min_support: int = 1) -> FairnessReport:
    """Accuracy breakdowns and one fairness value per grouping.

    Groupings are every single schema group followed by ``joint_groupings``
    (each a tuple of group names, reordered to schema order).
    """
    records = list(records)
    if not records:
        raise NoSupportError("no prediction records")
    for r in records:
        if len(r.attributes) != len(schema):
            raise ValidationError(f"record {r.id!r} has {len(r.attributes)} attributes, schema has {len(schema)}")
    n_classes = 1 + max(max(r.true for r in records), max(r.pred for r in records))
    if class_names is None:
        class_names = tuple(str(k) for k in range(n_classes))
    class_names = tuple(class_names)

    groupings = [(g,) for g in schema.names]
    for joint in joint_groupings:
        joint = tuple(joint)
        for g in joint:
            schema.group(g)
        if len(set(joint)) != len(joint):
            raise ValidationError(f"joint grouping {joint} repeats a group")
        joint = tuple(sorted(joint, key=schema.position))
        if joint not in groupings:
            groupings.append(joint)

    correct, total = class_counts(records)
    overall = sum(correct.values()) / len(records)
    recall = {c: correct[c] / total[c] for c in sorted(total)}

    per_subgroup: dict[SubgroupKey, SubgroupStats] = {}
    results: dict[str, GroupingResult] = {}
    for groups in groupings:
        res = GroupingResult(grouping_name(groups), groups, _subgroup_keys(schema, groups))
        supported = []
        for key in res.subgroups:
            chosen = filter_records(records, key, schema)
            if not chosen:
                res.excluded.append(key)
                log.warning("subgroup %s has no support; excluded from %s", key, res.name)
                continue
            c_ok, c_all = class_counts(chosen)
            stats = SubgroupStats(key, {c: c_ok[c] / c_all[c] for c in sorted(c_all)},
                                  {c: c_all[c] for c in sorted(c_all)})
            per_subgroup[key] = stats
            supported.append(stats)
            if stats.n < min_support:
                res.low_support.append(key)
        if len(supported) < 2:
            res.note = f"fairness omitted: only {len(supported)} subgroup(s) with support"
        else:
            common = set(supported[0].recall)
            for s in supported[1:]:
                common &= set(s.recall)
            res.common_classes = tuple(sorted(common))
            res.sums = {s.key: sum(s.recall[c] for c in res.common_classes) for s in supported}
            if not common:
                res.note = "fairness omitted: no class is present in every subgroup"
            else:
                try:
                    res.fairness, res.dominant = fairness_multi(res.sums)
                except UndefinedFairnessError as exc:
                    res.note = f"fairness omitted: {exc}"
        results[res.name] = res

    return FairnessReport(
        schema=schema,
        class_names=class_names,
        overall_accuracy=overall,
        mean_classwise_accuracy=float(np.mean(list(recall.values()))),
        per_class_recall=recall,
        per_class_support=dict(sorted(total.items())),
        per_subgroup=per_subgroup,
        groupings=results,
    )
