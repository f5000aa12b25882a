"""Backbones, the three head configurations and partition-based gradient routing.

Every parameter belongs to exactly one partition:

    trunk                 backbone layers before the feature layer
    final_fc              affine layer producing the D-dim feature (phi)
    primary_head          phi -> expression logits
    attribute_projection  one-hot attributes -> D   (attribute_aware only)
    attribute_heads       phi -> per-group logits  (disentangled only)

A :class:`GradientPolicy` maps each loss name to the partitions it may
update. Routing is realised in the forward graph itself: a loss whose route
excludes a partition sees that partition through ``detach()``, so a single
backward pass over the summed losses delivers each parameter only the
gradient components it is allowed to receive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ValidationError
from .schema import AttributeSchema

KINDS = ("baseline", "attribute_aware", "disentangled")
VARIANTS = ("tiny", "resnet18")
PARTITIONS = ("trunk", "final_fc", "primary_head", "attribute_projection", "attribute_heads")
LOSSES_BY_KIND = {
    "baseline": ("exp",),
    "attribute_aware": ("exp",),
    "disentangled": ("exp", "s", "conf"),
}


@dataclass(frozen=True)
class GradientPolicy:
    routes: Mapping[str, frozenset]

    def __post_init__(self):
        routes = {}
        for loss, parts in dict(self.routes).items():
            parts = frozenset(parts)
            unknown = parts - set(PARTITIONS)
            if unknown:
                raise ConfigError(f"gradient_policy.{loss}", f"unknown partitions {sorted(unknown)}")
            routes[loss] = parts
        object.__setattr__(self, "routes", routes)

    @classmethod
    def default(cls, kind: str) -> "GradientPolicy":
        if kind == "baseline":
            return cls({"exp": {"trunk", "final_fc", "primary_head"}})
        if kind == "attribute_aware":
            return cls({"exp": {"trunk", "final_fc", "primary_head", "attribute_projection"}})
        if kind == "disentangled":
            return cls({
                "exp": {"trunk", "final_fc", "primary_head"},
                # attribute gradients stop at phi: the adversary may not reshape the trunk
                "s": {"final_fc", "attribute_heads"},
                # confusion shapes the representation, never the adversary heads
                "conf": {"trunk", "final_fc"},
            })
        raise ConfigError("model.approach", f"unknown head kind {kind!r}")

    def allowed(self, loss: str) -> frozenset:
        try:
            return self.routes[loss]
        except KeyError:
            raise ConfigError("gradient_policy", f"no route defined for loss {loss!r}") from None

    def to_dict(self):
        return {k: sorted(v) for k, v in self.routes.items()}


class TinyTrunk(nn.Sequential):
    """Three conv/ReLU/max-pool stages and a 2x2 average pool, flattened."""

    def __init__(self, channels: Sequence[int] = (8, 16, 32)):
        layers, c_in = [], 3
        for c_out in channels:
            layers += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            c_in = c_out
        layers += [nn.AdaptiveAvgPool2d(2), nn.Flatten()]
        super().__init__(*layers)
        self.out_dim = c_in * 4


def _resnet18_trunk() -> nn.Module:
    from torchvision.models import resnet18

    net = resnet18(weights=None)
    trunk = nn.Sequential(
        net.conv1, net.bn1, net.relu, net.maxpool,
        net.layer1, net.layer2, net.layer3, net.layer4,
        net.avgpool, nn.Flatten(),
    )
    trunk.out_dim = 512
    return trunk


class Backbone(nn.Module):
    """Feature extractor; ``forward`` maps NCHW images to B x D features."""

    def __init__(self, variant: str = "tiny", feature_dim: int | None = None):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError("model.backbone", f"unknown variant {variant!r}")
        self.variant = variant
        self.feature_dim = int(feature_dim or (512 if variant == "resnet18" else 64))
        self.trunk = TinyTrunk() if variant == "tiny" else _resnet18_trunk()
        self.final_fc = nn.Linear(self.trunk.out_dim, self.feature_dim)

    def forward(self, x):
        return self.final_fc(self.trunk(x))


class ModelBundle(nn.Module):
    """Backbone plus one head configuration and its gradient policy."""

    def __init__(self, kind: str, n_classes: int, schema: AttributeSchema | None = None, *,
                 variant: str = "tiny", feature_dim: int | None = None, alpha: float = 1.0,
                 policy: GradientPolicy | None = None, input_side: int = 96):
        super().__init__()
        if kind not in KINDS:
            raise ConfigError("model.approach", f"unknown head kind {kind!r}")
        if kind != "baseline" and schema is None:
            raise ConfigError("schema", f"approach {kind!r} requires an attribute schema")
        if alpha < 0:
            raise ConfigError("alpha", "must be >= 0")
        self.kind = kind
        self.n_classes = int(n_classes)
        self.schema = schema
        self.alpha = float(alpha)
        self.input_side = int(input_side)
        self.policy = policy or GradientPolicy.default(kind)
        for loss in LOSSES_BY_KIND[kind]:
            self.policy.allowed(loss)

        self.backbone = Backbone(variant, feature_dim)
        d = self.backbone.feature_dim
        self.primary_head = nn.Linear(d, self.n_classes)
        self.attribute_projection = nn.Linear(schema.width, d) if kind == "attribute_aware" else None
        self.attribute_heads = (
            nn.ModuleList(nn.Linear(d, size) for size in schema.sizes)
            if kind == "disentangled" else None
        )

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    def partitions(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        parts = {name: [] for name in PARTITIONS}
        for name, param in self.named_parameters():
            head = name.split(".")[0]
            if head == "backbone":
                head = name.split(".")[1]
            parts[head].append((name, param))
        return parts

    def partition_of(self) -> dict[str, str]:
        return {n: part for part, items in self.partitions().items() for n, _ in items}

    def images_to_tensor(self, images) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(images) if not torch.is_tensor(images) else images)
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ValidationError(f"expected an image batch B x H x W x 3, got shape {tuple(x.shape)}")
        dtype = next(self.parameters()).dtype
        return x.to(dtype).permute(0, 3, 1, 2).contiguous()

    def features(self, images) -> torch.Tensor:
        return self.backbone(self.images_to_tensor(images))

    def logits(self, images, attribute_vectors=None) -> dict:
        """Raw head outputs: ``{"exp": B x K, "attr": [B x |S_j|, ...]}``."""
        phi = self.features(images)
        return self._heads(phi, attribute_vectors)

    def _attr_tensor(self, attribute_vectors, n):
        if attribute_vectors is None:
            raise ValidationError("attribute_aware head requires attribute vectors")
        s = torch.as_tensor(np.asarray(attribute_vectors) if not torch.is_tensor(attribute_vectors)
                            else attribute_vectors).to(self.primary_head.weight.dtype)
        if s.ndim != 2 or s.shape != (n, self.schema.width):
            raise ValidationError(
                f"attribute vectors must be {n} x {self.schema.width}, got {tuple(s.shape)}"
            )
        return s

    def _heads(self, phi, attribute_vectors=None):
        out = {}
        if self.kind == "attribute_aware":
            s = self._attr_tensor(attribute_vectors, phi.shape[0])
            phi = phi + self.attribute_projection(s)
        out["exp"] = self.primary_head(phi)
        if self.kind == "disentangled":
            out["attr"] = [head(phi) for head in self.attribute_heads]
        return out

    def routed_logits(self, images, attribute_vectors=None, losses: Sequence[str] | None = None):
        """Per-loss head outputs whose graphs respect the gradient policy.

        Returns ``{loss_name: logits}`` where ``exp`` maps to B x K logits and
        ``s``/``conf`` map to the list of per-group attribute logits.
        """
        losses = tuple(losses or LOSSES_BY_KIND[self.kind])
        x = self.images_to_tensor(images)
        trunk_out = self.backbone.trunk(x)
        phi_cache = {}

        def phi_for(allowed):
            key = ("trunk" in allowed, "final_fc" in allowed)
            if key not in phi_cache:
                h = trunk_out if key[0] else trunk_out.detach()
                phi_cache[key] = _linear(self.backbone.final_fc, h, key[1])
            return phi_cache[key]

        out = {}
        for loss in losses:
            allowed = self.policy.allowed(loss)
            phi = phi_for(allowed)
            if loss == "exp":
                if self.kind == "attribute_aware":
                    s = self._attr_tensor(attribute_vectors, phi.shape[0])
                    phi = phi + _linear(self.attribute_projection, s, "attribute_projection" in allowed)
                out[loss] = _linear(self.primary_head, phi, "primary_head" in allowed)
            elif loss in ("s", "conf"):
                if self.kind != "disentangled":
                    raise ConfigError("gradient_policy", f"loss {loss!r} needs the disentangled head")
                trainable = "attribute_heads" in allowed
                out[loss] = [_linear(h, phi, trainable) for h in self.attribute_heads]
            else:
                raise ConfigError("gradient_policy", f"unknown loss {loss!r}")
        return out


def _linear(layer: nn.Linear, x, trainable: bool):
    if trainable:
        return layer(x)
    bias = None if layer.bias is None else layer.bias.detach()
    return F.linear(x, layer.weight.detach(), bias)


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def build_bundle(kind: str, n_classes: int, schema: AttributeSchema | None = None, *,
                 variant: str = "tiny", feature_dim: int | None = None, alpha: float = 1.0,
                 policy: GradientPolicy | None = None, input_side: int = 96,
                 seed: int = 0) -> ModelBundle:
    """Construct a bundle with seeded initialization.

    Trunk and feature layers get fan-in scaled normal weights; the heads keep
    PyTorch's default fan-in uniform weights. All biases start at zero.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        bundle = ModelBundle(kind, n_classes, schema, variant=variant, feature_dim=feature_dim,
                             alpha=alpha, policy=policy, input_side=input_side)
        _init_weights(bundle.backbone)
        for name in ("primary_head", "attribute_projection"):
            layer = getattr(bundle, name)
            if layer is not None:
                nn.init.zeros_(layer.bias)
        if bundle.attribute_heads is not None:
            for head in bundle.attribute_heads:
                nn.init.zeros_(head.bias)
    return bundle


def forward_baseline(bundle: ModelBundle, images) -> torch.Tensor:
    if bundle.kind != "baseline":
        raise ValidationError(f"forward_baseline needs a baseline bundle, got {bundle.kind!r}")
    return torch.softmax(bundle.logits(images)["exp"], dim=1)


def forward_attribute_aware(bundle: ModelBundle, images, attribute_vectors) -> torch.Tensor:
    if bundle.kind != "attribute_aware":
        raise ValidationError(f"forward_attribute_aware needs an attribute_aware bundle, got {bundle.kind!r}")
    return torch.softmax(bundle.logits(images, attribute_vectors)["exp"], dim=1)


def forward_disentangled(bundle: ModelBundle, images):
    if bundle.kind != "disentangled":
        raise ValidationError(f"forward_disentangled needs a disentangled bundle, got {bundle.kind!r}")
    out = bundle.logits(images)
    return torch.softmax(out["exp"], dim=1), [torch.softmax(a, dim=1) for a in out["attr"]]


@torch.no_grad()
def apply_gradients(bundle: ModelBundle, loss: str, gradients: Mapping[str, torch.Tensor],
                    lr: float = 1e-3) -> ModelBundle:
    """Plain gradient step restricted to the partitions routed for ``loss``.

    ``gradients`` maps parameter names to gradient tensors; entries for
    parameters outside the route are ignored.
    """
    allowed = bundle.policy.allowed(loss)
    owner = bundle.partition_of()
    params = dict(bundle.named_parameters())
    for name, grad in gradients.items():
        if name not in params:
            raise ValidationError(f"unknown parameter {name!r}")
        if grad is None or owner[name] not in allowed:
            continue
        params[name].sub_(lr * grad)
    return bundle


def parameter_snapshot(bundle: nn.Module) -> dict[str, torch.Tensor]:
    return {n: p.detach().clone() for n, p in bundle.named_parameters()}


# --- checkpoints -----------------------------------------------------------

def _bundle_meta(bundle: ModelBundle) -> dict:
    return {
        "variant": bundle.backbone.variant,
        "feature_dim": bundle.feature_dim,
        "kind": bundle.kind,
        "n_classes": bundle.n_classes,
        # list of pairs: the sidecar is written with sorted keys, groups keep their order
        "schema": [[g.name, list(g.categories)] for g in bundle.schema.groups] if bundle.schema else None,
        "alpha": bundle.alpha,
        "input_side": bundle.input_side,
        "gradient_policy": bundle.policy.to_dict(),
    }


def save_checkpoint(bundle: ModelBundle, stem, extra: Mapping | None = None) -> Path:
    """Write ``<stem>.bin`` (raw little-endian tensors) and ``<stem>.json``.

    Returns the sidecar path. Output is a pure function of parameter values
    and metadata, so identical models give byte-identical files.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    tensors, offset, blob = [], 0, bytearray()
    for name, t in bundle.state_dict().items():
        arr = t.detach().cpu().numpy()
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        tensors.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blob += raw
        offset += len(raw)
    stem.with_suffix(".bin").write_bytes(bytes(blob))
    meta = {**_bundle_meta(bundle), **dict(extra or {}), "tensors": tensors}
    sidecar = stem.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    sidecar = Path(path).with_suffix(".json")
    meta = json.loads(sidecar.read_text())
    blob = sidecar.with_suffix(".bin").read_bytes()
    schema = AttributeSchema.from_mapping(dict(meta["schema"])) if meta["schema"] else None
    bundle = ModelBundle(meta["kind"], meta["n_classes"], schema, variant=meta["variant"],
                         feature_dim=meta["feature_dim"], alpha=meta["alpha"],
                         policy=GradientPolicy(meta["gradient_policy"]),
                         input_side=meta["input_side"])
    state = {}
    for t in meta["tensors"]:
        arr = np.frombuffer(blob, dtype=np.dtype("<" + t["dtype"]),
                            count=int(np.prod(t["shape"], dtype=np.int64)),
                            offset=t["offset"]).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
    float_dtypes = {v.dtype for v in state.values() if v.is_floating_point()}
    if float_dtypes:
        bundle.to(float_dtypes.pop())
    bundle.load_state_dict(state)
    return bundle, meta
