"""Merged land-cover taxonomy and remapping of source label rasters into it.

The working vocabulary is four classes (water, forest, field, impervious)
plus an ignore sentinel. Remap tables for source products live in data
files (``source_index: merged_name`` per line) so new sources need no code
changes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING

import numpy as np

from .errors import AllIgnored, UnknownSourceClass

if TYPE_CHECKING:
    from .geodata import LabelRaster

IGNORE = 255
WATER, FOREST, FIELD, IMPERVIOUS = 0, 1, 2, 3
MERGED_CLASSES = ("water", "forest", "field", "impervious")
NUM_CLASSES = len(MERGED_CLASSES)

_NAME_TO_ID = {name: i for i, name in enumerate(MERGED_CLASSES)}
_NAME_TO_ID["ignore"] = IGNORE


@dataclass(frozen=True)
class TaxonomyRemap:
    """Total mapping from a source taxonomy's class indices to merged ids."""

    name: str
    table: dict[int, int]

    def __post_init__(self):
        for src, dst in self.table.items():
            if dst != IGNORE and not 0 <= dst < NUM_CLASSES:
                raise ValueError(f"remap {self.name!r}: {src} -> {dst} outside merged taxonomy")

    def unreachable_classes(self) -> set[int]:
        """Merged classes no source class maps to."""
        reached = set(self.table.values())
        return {c for c in range(NUM_CLASSES) if c not in reached}


def identity_remap() -> TaxonomyRemap:
    table = {c: c for c in range(NUM_CLASSES)}
    table[IGNORE] = IGNORE
    return TaxonomyRemap("merged", table)


def parse_remap(name: str, text: str) -> TaxonomyRemap:
    """Parse ``source_index: merged_name`` lines; '#' starts a comment."""
    table = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = line.split(":", 1)
            src = int(key.strip())
            dst = _NAME_TO_ID[value.strip().lower()]
        except (ValueError, KeyError) as exc:
            raise ValueError(f"remap {name!r} line {lineno}: cannot parse {raw!r}") from exc
        if src in table:
            raise ValueError(f"remap {name!r} line {lineno}: duplicate source index {src}")
        table[src] = dst
    return TaxonomyRemap(name, table)


def load_remap(path) -> TaxonomyRemap:
    from pathlib import Path

    p = Path(path)
    return parse_remap(p.stem, p.read_text())


def builtin_remap(name: str) -> TaxonomyRemap:
    """Load one of the packaged remap tables (nlcd, chesapeake, enviroatlas, merged)."""
    text = resources.files("resmatch.data").joinpath(f"{name}.txt").read_text()
    return parse_remap(name, text)


def remap(raster: "LabelRaster", rm: TaxonomyRemap) -> "LabelRaster":
    """Replace every pixel by its merged class id; ignore stays ignore."""
    classes = np.asarray(raster.classes)
    present = np.unique(classes)
    missing = [int(v) for v in present if int(v) not in rm.table and int(v) != IGNORE]
    if missing:
        raise UnknownSourceClass(f"remap {rm.name!r} has no entry for source class(es) {missing}")
    lut = np.full(256, IGNORE, dtype=np.uint8)
    for src, dst in rm.table.items():
        lut[src] = dst
    lut[IGNORE] = IGNORE
    return dataclasses.replace(raster, classes=lut[classes])


def class_histogram(raster: "LabelRaster") -> dict[int, float]:
    """Fraction of non-ignore pixels per merged class (absent classes -> 0)."""
    classes = np.asarray(raster.classes)
    if classes.size == 0:
        raise AllIgnored("empty raster")
    valid = classes[classes != IGNORE]
    if valid.size == 0:
        raise AllIgnored("every pixel is ignored")
    counts = np.bincount(valid.ravel(), minlength=NUM_CLASSES)
    total = valid.size
    return {c: counts[c] / total for c in range(NUM_CLASSES)}
