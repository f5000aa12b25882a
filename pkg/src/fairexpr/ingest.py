"""Manifest CSV reading and writing.

Format: header ``id,path,expression,<group>...[,split]``; UTF-8; image paths
relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import ManifestError, ValidationError
from .schema import AttributeSchema, Sample

log = logging.getLogger(__name__)

IMAGE_SIZE = 100
DEFAULT_EXCLUDE = {"gender": "Unsure"}
SPLITS = ("train", "val", "test")


def decode_image(path: Path, size: int = IMAGE_SIZE) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr


def encode_png(image: np.ndarray, path: Path) -> None:
    """Write a [0, 1] float image as a lossless 8-bit PNG."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", optimize=False)


def load_manifest(
    path,
    schema: AttributeSchema,
    expression_vocab: Sequence[str],
    *,
    size: int = IMAGE_SIZE,
    exclude: Mapping[str, str] | None = None,
    return_splits: bool = False,
    workers: int = 4,
):
    """Load every manifest row as a :class:`Sample`, in file order.

    Rows whose attribute label equals an ``exclude`` entry (default
    ``gender=Unsure``) are dropped before label resolution. With
    ``return_splits`` a parallel list of split tags (or ``None``) is
    returned as well.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    exclude = DEFAULT_EXCLUDE if exclude is None else dict(exclude)
    vocab = list(expression_vocab)
    root = path.parent

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("id", "path", "expression", *schema.names) if c not in header]
        if missing:
            raise ManifestError(f"manifest header lacks columns {missing}", path=str(path))
        has_split = "split" in header

        rows = []
        for rownum, row in enumerate(reader, start=1):
            if any(row.get(g) == bad for g, bad in exclude.items()):
                continue
            expr = row["expression"]
            if expr not in vocab:
                raise ManifestError(f"unknown expression label {expr!r}", row=rownum, path=str(path))
            attrs = []
            for group in schema.groups:
                label = row[group.name]
                if label not in group.categories:
                    raise ManifestError(
                        f"unknown {group.name} label {label!r}", row=rownum, path=str(path)
                    )
                attrs.append(group.categories.index(label))
            split = row.get("split") or None if has_split else None
            if split is not None and split not in SPLITS:
                raise ManifestError(f"unknown split tag {split!r}", row=rownum, path=str(path))
            rows.append((rownum, row["id"], root / row["path"], vocab.index(expr), tuple(attrs), split))

    def _decode(item):
        rownum, _, img_path, *_ = item
        try:
            return decode_image(img_path, size)
        except (OSError, ValueError) as exc:
            raise ManifestError(f"unreadable image {img_path}: {exc}", row=rownum, path=str(img_path)) from exc

    # executor.map yields in submission order, so output order is file order
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        images = list(pool.map(_decode, rows))

    samples = [
        Sample(id=sid, image=img, expression=expr, attributes=attrs)
        for (_, sid, _, expr, attrs, _), img in zip(rows, images)
    ]
    log.debug("loaded %d samples from %s", len(samples), path)
    if return_splits:
        return samples, [r[5] for r in rows]
    return samples


def group_by_split(samples: Sequence[Sample], tags: Sequence[str | None]) -> dict[str, list[Sample]]:
    out = {s: [] for s in SPLITS}
    for sample, tag in zip(samples, tags):
        if tag is None:
            raise ValidationError(f"sample {sample.id!r} has no split tag")
        out[tag].append(sample)
    return out


def write_manifest(
    path,
    samples: Sequence[Sample],
    schema: AttributeSchema,
    expression_vocab: Sequence[str],
    *,
    splits: Sequence[str] | None = None,
    image_dir: str = "images",
) -> Path:
    """Write samples as PNG files plus a manifest CSV next to them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    (path.parent / image_dir).mkdir(parents=True, exist_ok=True)
    header = ["id", "path", "expression", *schema.names]
    if splits is not None:
        header.append("split")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, s in enumerate(samples):
            rel = f"{image_dir}/{s.id}.png"
            encode_png(s.image, path.parent / rel)
            row = [s.id, rel, expression_vocab[s.expression]]
            row += [g.categories[a] for g, a in zip(schema.groups, s.attributes)]
            if splits is not None:
                row.append(splits[i])
            writer.writerow(row)
    return path
