"""Independent reference computations used by the tests.

Nothing here calls the code paths it checks; only data types are shared.
"""

import math

import numpy as np
import torch

from fairexpr.schema import AttributeSchema
from fairexpr.trainer import PredictionRecord

SCHEMA_253 = AttributeSchema.from_mapping({
    "gender": ["m", "f"], "race": ["a", "b", "c"], "age": ["0", "1", "2", "3", "4"],
})


def finite_difference_check(loss_fn, params, n_entries, rng, step=1e-4):
    """Compare autograd gradients with central differences.

    ``params`` is a list of (name, tensor) pairs. Returns a list of
    (name, flat_index, analytic, numeric) tuples for ``n_entries``
    randomly chosen coordinates (sampled proportionally to tensor size).
    """
    tensors = [p for _, p in params]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    sizes = np.array([p.numel() for p in tensors])
    picks = rng.choice(sizes.sum(), size=n_entries, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    with torch.no_grad():
        for flat in picks:
            t = int(np.searchsorted(offsets, flat, side="right") - 1)
            idx = int(flat - offsets[t])
            p = tensors[t].view(-1)
            orig = p[idx].item()
            p[idx] = orig + step
            plus = loss_fn().item()
            p[idx] = orig - step
            minus = loss_fn().item()
            p[idx] = orig
            g = grads[t]
            analytic = 0.0 if g is None else g.reshape(-1)[idx].item()
            out.append((params[t][0], idx, analytic, (plus - minus) / (2 * step)))
    return out


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def brute_force_fairness(records, schema, groups):
    """Recompute (F, dominant label, sums) for one grouping by enumeration.

    Subgroups are visited in itertools.product order over the grouping's
    categories; classes missing from any supported subgroup are dropped.
    """
    positions = [schema.names.index(g) for g in groups]
    sizes = [schema.sizes[p] for p in positions]
    combos = [()]
    for size in sizes:
        combos = [c + (k,) for c in combos for k in range(size)]
    recalls = []
    for combo in combos:
        hits, counts = {}, {}
        for r in records:
            if all(r.attributes[p] == k for p, k in zip(positions, combo)):
                counts[r.true] = counts.get(r.true, 0) + 1
                if r.pred == r.true:
                    hits[r.true] = hits.get(r.true, 0) + 1
        if counts:
            recalls.append((combo, {c: hits.get(c, 0) / n for c, n in counts.items()}))
    if len(recalls) < 2:
        return None
    common = set.intersection(*(set(r) for _, r in recalls))
    if not common:
        return None
    sums = [(combo, math.fsum(r[c] for c in sorted(common))) for combo, r in recalls]
    best = max(v for _, v in sums)
    dominant = next(combo for combo, v in sums if v == best)
    if best <= 0:
        return None
    ratios = [v / best for combo, v in sums if combo != dominant]
    return min(ratios), dominant, dict(sums)


def brute_force_classwise(records):
    classes = sorted({r.true for r in records})
    recalls = []
    for c in classes:
        members = [r for r in records if r.true == c]
        recalls.append(sum(r.pred == c for r in members) / len(members))
    return dict(zip(classes, recalls))


def random_log(seed, schema=SCHEMA_253):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 201))
    k = int(rng.integers(2, 8))
    true = rng.integers(0, k, n)
    # mostly-correct predictions so sums are rarely zero
    pred = np.where(rng.random(n) < 0.6, true, rng.integers(0, k, n))
    attrs = np.stack([rng.integers(0, s, n) for s in schema.sizes], 1)
    return [
        PredictionRecord(f"r{i}", int(t), int(p), (), tuple(int(v) for v in a))
        for i, (t, p, a) in enumerate(zip(true, pred, attrs))
    ]
