"""Procedural paired-resolution dataset generator.

Each tile is a 4-class label map built from large Voronoi patches plus
fine structures at 1-2 pixel scale (streams, roads, buildings, tree
clumps), rendered to an image via per-class base colors, a procedural
texture field, and additive noise. The low-resolution label is the
majority vote over n x n blocks, so coarsening destroys exactly the fine
structure the method is meant to recover.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geodata, taxonomy
from .errors import ConfigInvalid
from .geodata import ImageTile, LabelRaster
from .taxonomy import FIELD, FOREST, IMPERVIOUS, WATER


@dataclass(frozen=True)
class Domain:
    """Appearance parameters for one texture distribution."""

    name: str
    colors: tuple  # 4 x 3 base RGB per class
    texture: str = "speckle"  # speckle | blotch | stripes
    tex_amp: float = 0.05
    illum: float = 1.0
    noise: float = 0.05


_BASE_COLORS = (
    (0.10, 0.25, 0.60),  # water
    (0.05, 0.35, 0.10),  # forest
    (0.55, 0.65, 0.25),  # field
    (0.45, 0.45, 0.48),  # impervious
)


def _shift(colors, delta):
    return tuple(tuple(float(np.clip(c + d, 0, 1)) for c, d in zip(rgb, delta)) for rgb in colors)


DOMAINS: dict[str, Domain] = {
    "base": Domain("base", _BASE_COLORS, "speckle", 0.05, 1.0, 0.05),
    "warm": Domain("warm", _shift(_BASE_COLORS, (0.07, 0.02, -0.03)), "speckle", 0.06, 1.06, 0.05),
    "cool": Domain("cool", _shift(_BASE_COLORS, (-0.04, 0.0, 0.06)), "blotch", 0.07, 0.92, 0.05),
    "shifted": Domain("shifted", _shift(_BASE_COLORS, (0.02, -0.04, 0.09)), "stripes", 0.10, 0.78, 0.07),
}


@dataclass(frozen=True)
class SynthConfig:
    tiles: int
    tile_size: int = 64
    n: int = 8
    domain: str = "base"
    pad: str | None = None  # None requires n | tile_size; "reflect" pads up
    noise: float | None = None  # overrides the domain noise level
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.tiles <= 0 or self.tile_size <= 0 or self.n <= 0:
            raise ConfigInvalid("tiles, tile_size and n must be positive")
        if self.domain not in DOMAINS:
            raise ConfigInvalid(f"unknown domain {self.domain!r} (have {sorted(DOMAINS)})")
        if self.tile_size % self.n and self.pad != "reflect":
            raise ConfigInvalid(
                f"tile_size {self.tile_size} not divisible by n={self.n}; pass pad='reflect'"
            )

    def to_dict(self) -> dict:
        return {
            "tiles": self.tiles,
            "tile_size": self.tile_size,
            "n": self.n,
            "domain": self.domain,
            "pad": self.pad,
            "noise": self.noise,
        }


# --- label synthesis ---------------------------------------------------------


def _stamp_wave(label, rng, cls):
    s = label.shape[0]
    width = int(rng.integers(1, 3))
    r0 = rng.uniform(0.2 * s, 0.8 * s)
    amp = rng.uniform(2.0, s / 6.0)
    freq = rng.uniform(0.5, 1.8)
    phase = rng.uniform(0, 2 * np.pi)
    transpose = rng.random() < 0.5
    xs = np.arange(s)
    centers = r0 + amp * np.sin(2 * np.pi * freq * xs / s + phase)
    for x, c in zip(xs, centers):
        lo = int(round(c))
        hi = min(lo + width, s)
        lo = max(lo, 0)
        if lo < hi:
            if transpose:
                label[x, lo:hi] = cls
            else:
                label[lo:hi, x] = cls


def _stamp_line(label, rng, cls):
    s = label.shape[0]
    width = int(rng.integers(1, 3))
    x0, y0 = rng.uniform(0, s, size=2)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:s, 0:s]
    dist = np.abs((xx - x0) * np.sin(theta) - (yy - y0) * np.cos(theta))
    label[dist <= width / 2.0] = cls


def _stamp_disk(label, rng, cls, radius):
    s = label.shape[0]
    cy, cx = rng.uniform(2, s - 2, size=2)
    yy, xx = np.mgrid[0:s, 0:s]
    label[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2] = cls


def _stamp_rect(label, rng, cls):
    s = label.shape[0]
    h = int(rng.integers(2, 4))
    w = int(rng.integers(2, 4))
    top = int(rng.integers(0, s - h))
    left = int(rng.integers(0, s - w))
    label[top : top + h, left : left + w] = cls


def random_label(size: int, rng: np.random.Generator) -> np.ndarray:
    """One high-resolution label map: Voronoi patches plus fine structures."""
    k = 7
    sites = rng.uniform(0, size, size=(k, 2))
    classes = np.concatenate([rng.permutation(4), rng.integers(0, 4, size=k - 4)])
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy[None] - sites[:, 0, None, None]) ** 2 + (xx[None] - sites[:, 1, None, None]) ** 2
    label = classes[d2.argmin(axis=0)].astype(np.uint8)

    if rng.random() < 0.85:
        _stamp_wave(label, rng, WATER)
    for _ in range(1 + int(rng.random() < 0.6)):
        _stamp_line(label, rng, IMPERVIOUS)
    for _ in range(int(rng.integers(2, 6))):
        _stamp_disk(label, rng, FOREST, radius=float(rng.uniform(1.0, 2.2)))
    for _ in range(int(rng.integers(3, 8))):
        _stamp_rect(label, rng, IMPERVIOUS)
    return label


# --- image rendering ---------------------------------------------------------


def _value_noise(size, cells, rng):
    grid = rng.uniform(-1.0, 1.0, size=(cells + 1, cells + 1))
    coords = np.linspace(0, cells, size)
    i0 = np.clip(coords.astype(int), 0, cells - 1)
    frac = coords - i0
    top = grid[i0][:, i0] * (1 - frac)[None, :] + grid[i0][:, i0 + 1] * frac[None, :]
    bot = grid[i0 + 1][:, i0] * (1 - frac)[None, :] + grid[i0 + 1][:, i0 + 1] * frac[None, :]
    return top * (1 - frac)[:, None] + bot * frac[:, None]


def _texture(domain: Domain, size: int, rng) -> np.ndarray:
    if domain.texture == "speckle":
        return _value_noise(size, max(size // 8, 2), rng)
    if domain.texture == "blotch":
        return _value_noise(size, max(size // 16, 2), rng)
    if domain.texture == "stripes":
        theta = rng.uniform(0, np.pi)
        lam = rng.uniform(5.0, 11.0)
        phase = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:size, 0:size]
        return np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / lam + phase)
    raise ConfigInvalid(f"unknown texture {domain.texture!r}")


def render_image(classes: np.ndarray, domain: Domain, rng, noise: float | None = None) -> np.ndarray:
    """Deterministic image for a label map: base color + texture + noise."""
    colors = np.asarray(domain.colors, dtype=np.float64)
    base = colors[np.minimum(classes, 3)]
    tex = _texture(domain, classes.shape[0], rng)
    sigma = domain.noise if noise is None else noise
    img = domain.illum * (base + domain.tex_amp * tex[..., None])
    img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# --- tile generation ---------------------------------------------------------

_MAX_ATTEMPTS = 64


def _pad_reflect(classes: np.ndarray, n: int) -> np.ndarray:
    size = classes.shape[0]
    target = ((size + n - 1) // n) * n
    extra = target - size
    before = extra // 2
    after = extra - before
    return np.pad(classes, ((before, after), (before, after)), mode="reflect")


def generate(config: SynthConfig, seed: int):
    """Deterministic list of (image, high label, low label) triples.

    Every returned tile passes the diversity filter. Tiles are generated
    independently from (seed, index, attempt) so the output is
    bit-reproducible and order-stable.
    """
    config.validate()
    domain = DOMAINS[config.domain]
    samples = []
    for i in range(config.tiles):
        for attempt in range(_MAX_ATTEMPTS):
            rng = np.random.default_rng([seed, i, attempt])
            high = random_label(config.tile_size, rng)
            if config.pad == "reflect" and config.tile_size % config.n:
                high = _pad_reflect(high, config.n)
            low = geodata.majority_downsample(high, config.n)
            geo_id = f"tile_{i:05d}"
            high_r = LabelRaster(classes=high, gsd_m=1.0, geo_id=geo_id)
            low_r = LabelRaster(classes=low, gsd_m=float(config.n), geo_id=geo_id)
            if not geodata.accept_tile(high_r, low_r):
                continue
            image = render_image(high, domain, rng, noise=config.noise)
            samples.append((ImageTile(pixels=image, gsd_m=1.0, geo_id=geo_id), high_r, low_r))
            break
        else:
            raise ConfigInvalid(
                f"could not generate an acceptable tile for index {i} in {_MAX_ATTEMPTS} attempts"
            )
    return samples


def build_dataset(config: SynthConfig, seed: int, out_dir):
    """Generate, split, and persist a synthetic dataset directory."""
    samples = generate(config, seed)
    manifest = geodata.split([img.geo_id for img, _, _ in samples], seed)
    meta = {"generator": config.to_dict(), "n": config.n, "tile_size": samples[0][0].size}
    return geodata.write_dataset(out_dir, samples, manifest, extra_meta=meta)
