"""Tiles, label rasters, dataset filtering/splitting, and on-disk layout.

Rasters persist as raw little-endian row-major binaries (uint8 class
indices, float32 image channels) with a JSON sidecar carrying shape and
ground-sample-distance metadata. A dataset directory holds
``images/``, ``labels_high/``, ``labels_low/`` and a ``manifest.json``
with the split assignment.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import taxonomy
from .errors import (
    AllIgnored,
    LabelUpsampled,
    MissingInput,
    NonIntegralRatio,
    TooFewTiles,
)

SPLIT_NAMES = ("train", "val", "heldout", "test")
SPLIT_FRACTIONS = (0.75, 0.10, 0.10, 0.05)

MIN_UNIQUE_CLASSES = 3
MAX_DOMINANCE = 0.75


@dataclass
class ImageTile:
    """H x W x C image with ground sample distance in meters per pixel."""

    pixels: np.ndarray
    gsd_m: float
    geo_id: str

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass
class LabelRaster:
    """h x w grid of class indices with GSD metadata."""

    classes: np.ndarray
    gsd_m: float
    geo_id: str

    @property
    def shape(self):
        return self.classes.shape


@dataclass
class SplitManifest:
    splits: dict[str, list[str]]
    seed: int

    def all_ids(self) -> list[str]:
        out = []
        for name in SPLIT_NAMES:
            out.extend(self.splits[name])
        return out


@dataclass
class ExemplarSet:
    """High-resolution label maps with no geo overlap with training imagery."""

    rasters: list[LabelRaster] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.rasters)

    def as_array(self) -> np.ndarray:
        return np.stack([r.classes for r in self.rasters])


def accept_tile(high_label: LabelRaster, low_label: LabelRaster) -> bool:
    """Diversity filter: >=3 unique classes and no class over 75% in either label."""
    for label in (high_label, low_label):
        values = np.asarray(label.classes)
        valid = values[values != taxonomy.IGNORE]
        if valid.size == 0:
            return False
        counts = np.bincount(valid.ravel(), minlength=taxonomy.NUM_CLASSES)
        if np.count_nonzero(counts) < MIN_UNIQUE_CLASSES:
            return False
        if counts.max() / valid.size > MAX_DOMINANCE:
            return False
    return True


def split(geo_ids: list[str], seed: int) -> SplitManifest:
    """Deterministic 75/10/10/5 split via largest-remainder apportionment."""
    ids = sorted(geo_ids)
    if len(ids) < 20:
        raise TooFewTiles(f"need at least 20 tiles for a 5% test split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]

    n = len(ids)
    quotas = [f * n for f in SPLIT_FRACTIONS]
    sizes = [int(q) for q in quotas]
    remainders = sorted(
        range(len(quotas)), key=lambda i: (quotas[i] - sizes[i], -i), reverse=True
    )
    for i in range(n - sum(sizes)):
        sizes[remainders[i]] += 1

    splits, start = {}, 0
    for name, size in zip(SPLIT_NAMES, sizes):
        splits[name] = shuffled[start : start + size]
        start += size
    return SplitManifest(splits=splits, seed=seed)


def gsd_ratio(image: ImageTile, label: LabelRaster) -> int:
    """Integer coarsening factor between image and label resolutions."""
    ratio = label.gsd_m / image.gsd_m
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-6 * ratio:
        raise NonIntegralRatio(f"label GSD {label.gsd_m} is not an integer multiple of image GSD {image.gsd_m}")
    return n


def majority_downsample(classes: np.ndarray, n: int) -> np.ndarray:
    """Majority vote over n x n blocks; ties break to the smallest class index.

    Ignored pixels do not vote; a block with no valid pixel stays ignored.
    """
    h, w = classes.shape
    if h % n or w % n:
        raise ValueError(f"{h}x{w} raster not divisible by n={n}")
    if n == 1:
        return classes.copy()
    blocks = classes.reshape(h // n, n, w // n, n).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(h // n, w // n, n * n)
    counts = np.stack(
        [(blocks == c).sum(axis=2) for c in range(taxonomy.NUM_CLASSES)], axis=0
    )
    out = counts.argmax(axis=0).astype(np.uint8)
    out[counts.sum(axis=0) == 0] = taxonomy.IGNORE
    return out


# --- label upsampling guard -------------------------------------------------
#
# The only function allowed to spatially resize a label raster. Loss paths
# that must never see an upsampled label run inside forbid_label_upsampling().

_upsample_forbidden = 0
upsample_call_count = 0


@contextlib.contextmanager
def forbid_label_upsampling():
    global _upsample_forbidden
    _upsample_forbidden += 1
    try:
        yield
    finally:
        _upsample_forbidden -= 1


def upsample_label_nearest(classes: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upsample of a class grid by an integer factor."""
    global upsample_call_count
    if _upsample_forbidden:
        raise LabelUpsampled("label upsampling attempted inside a guarded loss path")
    upsample_call_count += 1
    return np.repeat(np.repeat(classes, factor, axis=0), factor, axis=1)


# --- raster persistence -----------------------------------------------------


def _sidecar(array: np.ndarray, gsd_m: float, geo_id: str, taxonomy_name: str) -> dict:
    h, w = array.shape[:2]
    c = array.shape[2] if array.ndim == 3 else 1
    return {
        "height": int(h),
        "width": int(w),
        "channels": int(c),
        "gsd_m": float(gsd_m),
        "taxonomy_name": taxonomy_name,
        "geo_id": geo_id,
    }


def write_image(directory: Path, tile: ImageTile) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    pixels = np.ascontiguousarray(tile.pixels, dtype="<f4")
    (directory / f"{tile.geo_id}.bin").write_bytes(pixels.tobytes())
    meta = _sidecar(pixels, tile.gsd_m, tile.geo_id, "")
    (directory / f"{tile.geo_id}.json").write_text(json.dumps(meta, sort_keys=True))


def write_label(directory: Path, label: LabelRaster, taxonomy_name: str = "merged") -> None:
    directory.mkdir(parents=True, exist_ok=True)
    classes = np.ascontiguousarray(label.classes, dtype=np.uint8)
    (directory / f"{label.geo_id}.bin").write_bytes(classes.tobytes())
    meta = _sidecar(classes, label.gsd_m, label.geo_id, taxonomy_name)
    (directory / f"{label.geo_id}.json").write_text(json.dumps(meta, sort_keys=True))


def _read_meta(bin_path: Path) -> dict:
    meta_path = bin_path.with_suffix(".json")
    if not bin_path.exists() or not meta_path.exists():
        raise MissingInput(f"raster {bin_path} (or its sidecar) does not exist")
    return json.loads(meta_path.read_text())


def read_image(bin_path: Path) -> ImageTile:
    meta = _read_meta(bin_path)
    shape = (meta["height"], meta["width"], meta["channels"])
    pixels = np.frombuffer(bin_path.read_bytes(), dtype="<f4").reshape(shape)
    return ImageTile(pixels=pixels, gsd_m=meta["gsd_m"], geo_id=meta["geo_id"])


def read_label(bin_path: Path) -> LabelRaster:
    meta = _read_meta(bin_path)
    shape = (meta["height"], meta["width"])
    classes = np.frombuffer(bin_path.read_bytes(), dtype=np.uint8).reshape(shape)
    return LabelRaster(classes=classes, gsd_m=meta["gsd_m"], geo_id=meta["geo_id"])


def write_dataset(
    out_dir,
    samples: list[tuple[ImageTile, LabelRaster, LabelRaster]],
    manifest: SplitManifest,
    extra_meta: dict | None = None,
) -> Path:
    """Persist (image, high label, low label) triples plus the split manifest."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for image, high, low in samples:
        write_image(root / "images", image)
        write_label(root / "labels_high", high)
        write_label(root / "labels_low", low)
    payload = {"seed": manifest.seed, "splits": manifest.splits}
    payload.update(extra_meta or {})
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
    os.replace(tmp, root / "manifest.json")
    return root


class Dataset:
    """Read access to a dataset directory written by write_dataset."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise MissingInput(f"no manifest.json under {self.root}")
        self.meta = json.loads(manifest_path.read_text())
        self.splits = self.meta["splits"]

    def geo_ids(self, split_name: str) -> list[str]:
        if split_name == "all":
            out = []
            for name in SPLIT_NAMES:
                out.extend(self.splits[name])
            return out
        if split_name not in self.splits:
            raise MissingInput(f"split {split_name!r} not in manifest")
        return list(self.splits[split_name])

    def sample(self, geo_id: str) -> tuple[ImageTile, LabelRaster, LabelRaster]:
        image = read_image(self.root / "images" / f"{geo_id}.bin")
        high = read_label(self.root / "labels_high" / f"{geo_id}.bin")
        low = read_label(self.root / "labels_low" / f"{geo_id}.bin")
        return image, high, low

    def load_split(self, split_name: str):
        """Stacked arrays (images, high, low, geo_ids) for one split."""
        ids = self.geo_ids(split_name)
        if not ids:
            raise MissingInput(f"split {split_name!r} is empty")
        images, highs, lows = [], [], []
        for geo_id in ids:
            image, high, low = self.sample(geo_id)
            images.append(image.pixels)
            highs.append(high.classes)
            lows.append(low.classes)
        return np.stack(images), np.stack(highs), np.stack(lows), ids

    def content_hash(self) -> str:
        return hashlib.sha256((self.root / "manifest.json").read_bytes()).hexdigest()[:16]


def exemplars_from_dataset(ds: Dataset, k: int, seed: int) -> ExemplarSet:
    """Draw k high-resolution labels from the held-out split (disjoint from train)."""
    ids = ds.geo_ids("heldout")
    if k > len(ids):
        raise TooFewTiles(f"requested {k} exemplars but held-out split has {len(ids)}")
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(len(ids))[:k]
    rasters = []
    for i in chosen:
        _, high, _ = ds.sample(ids[i])
        rasters.append(high)
    return ExemplarSet(rasters=rasters)


def dataset_fingerprint(root) -> str:
    """Stable hash over manifest plus raster bytes (order-independent)."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*.bin")) + [root / "manifest.json"]:
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def class_balance(labels: np.ndarray) -> dict[int, float]:
    """Fractions per class over a stack of label grids, skipping ignored pixels."""
    valid = labels[labels != taxonomy.IGNORE]
    if valid.size == 0:
        raise AllIgnored("no valid pixels in label stack")
    counts = np.bincount(valid.ravel(), minlength=taxonomy.NUM_CLASSES)
    return {c: counts[c] / valid.size for c in range(taxonomy.NUM_CLASSES)}
