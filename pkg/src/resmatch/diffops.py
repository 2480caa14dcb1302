"""Differentiable operators for coarse-label supervision.

Region sums turn native-resolution logits into coarse-cell logits so the
coarse label is never upsampled; the temperature-scaled soft argmax turns
logits into an almost-hard class-index map that still carries gradients;
the blur and hinge losses support the adversarial realism prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import AllIgnored, IndivisibleShape, ShapeMismatch
from .taxonomy import IGNORE


@dataclass
class RegionIndexMatrix:
    """Raster-ordered assignment of each fine pixel to its coarse cell."""

    index: torch.Tensor  # H x W long
    n: int
    t: int

    @property
    def coarse_shape(self):
        h, w = self.index.shape
        return h // self.n, w // self.n


def build_region_index(height: int, width: int, n: int) -> RegionIndexMatrix:
    """Cell ids laid out so index[i, j] = (i // n) * (width // n) + (j // n)."""
    if height % n or width % n:
        raise IndivisibleShape(f"{height}x{width} not divisible by n={n}")
    rows = torch.arange(height) // n
    cols = torch.arange(width) // n
    index = rows[:, None] * (width // n) + cols[None, :]
    return RegionIndexMatrix(index=index, n=n, t=(height // n) * (width // n))


def region_aggregate(logits: torch.Tensor, m: RegionIndexMatrix) -> torch.Tensor:
    """Sum values over each coarse cell. Gradient to every contributor is 1.

    Accepts (..., H, W); returns (..., H/n, W/n).
    """
    h, w = logits.shape[-2:]
    if (h, w) != tuple(m.index.shape):
        raise ShapeMismatch(f"logits spatial {h}x{w} vs region index {tuple(m.index.shape)}")
    lead = logits.shape[:-2]
    flat = logits.reshape(*lead, h * w)
    out = flat.new_zeros(*lead, m.t)
    out = out.index_add(-1, m.index.reshape(-1), flat)
    ch, cw = m.coarse_shape
    return out.reshape(*lead, ch, cw)


def aggregated_ce(agg_logits: torch.Tensor, low_labels: torch.Tensor) -> torch.Tensor:
    """Cross entropy between coarse-cell logits and the coarse label.

    Mean of -log softmax(logits)[true] over every non-ignored cell in the
    batch (a single global mean, not a mean of per-image means).
    """
    if agg_logits.dim() == 3:
        agg_logits = agg_logits.unsqueeze(0)
    if low_labels.dim() == 2:
        low_labels = low_labels.unsqueeze(0)
    if agg_logits.shape[-2:] != low_labels.shape[-2:] or agg_logits.shape[0] != low_labels.shape[0]:
        raise ShapeMismatch(
            f"aggregated logits {tuple(agg_logits.shape)} vs labels {tuple(low_labels.shape)}"
        )
    labels = low_labels.long()
    valid = labels != IGNORE
    if not bool(valid.any()):
        raise AllIgnored("every coarse cell is ignored")
    logp = F.log_softmax(agg_logits, dim=1)
    picked = logp.gather(1, labels.clamp(max=logp.shape[1] - 1).unsqueeze(1)).squeeze(1)
    return -(picked[valid]).mean()


def sargmax(logits: torch.Tensor, tau: float) -> torch.Tensor:
    """Differentiable argmax: expectation of the class index under
    softmax(tau * logits). Returns a (B, 1, H, W) map of soft indices in
    [0, C-1] (index weights run 1..C internally, shifted down by one)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    squeeze = logits.dim() == 3
    if squeeze:
        logits = logits.unsqueeze(0)
    c = logits.shape[1]
    probs = F.softmax(tau * logits, dim=1)
    weights = torch.arange(1, c + 1, dtype=logits.dtype, device=logits.device)
    soft_index = (probs * weights.view(1, c, 1, 1)).sum(dim=1, keepdim=True) - 1.0
    return soft_index.squeeze(0) if squeeze else soft_index


def gaussian_kernel3x3(sigma: float, dtype=torch.float64) -> torch.Tensor:
    """Normalized 3x3 kernel with weights exp(-(di^2+dj^2) / (2 sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    offsets = torch.tensor([-1.0, 0.0, 1.0], dtype=torch.float64)
    d2 = offsets[:, None] ** 2 + offsets[None, :] ** 2
    kernel = torch.exp(-d2 / (2.0 * sigma * sigma))
    return (kernel / kernel.sum()).to(dtype)


def gaussian_blur3x3(maps: torch.Tensor, sigma: float, padding: str = "reflect") -> torch.Tensor:
    """Depthwise 3x3 Gaussian blur; a convex combination so the output
    range never leaves the input range. ``padding`` is reflect by default
    (circular exists for mean-preservation tests)."""
    squeeze = maps.dim() == 3
    if squeeze:
        maps = maps.unsqueeze(0)
    channels = maps.shape[1]
    kernel = gaussian_kernel3x3(sigma, dtype=maps.dtype).to(maps.device)
    weight = kernel.expand(channels, 1, 3, 3)
    padded = F.pad(maps, (1, 1, 1, 1), mode=padding)
    out = F.conv2d(padded, weight, groups=channels)
    return out.squeeze(0) if squeeze else out


def hinge_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Margin loss for the discriminator: real scores above +1, fake below -1."""
    return F.relu(1.0 - d_real).mean() + F.relu(1.0 + d_fake).mean()


def hinge_g_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Generator objective: raise the discriminator's score on fakes."""
    return -d_fake.mean()


def downscale_avg(maps: torch.Tensor, factor: int) -> torch.Tensor:
    """Differentiable 2D average pooling (identity when factor == 1)."""
    if factor == 1:
        return maps
    return F.avg_pool2d(maps, kernel_size=factor)


def crop_to_multiple(height: int, width: int, n: int) -> tuple[slice, slice]:
    """Centered spatial slices trimming (height, width) to multiples of n."""
    ch = (height // n) * n
    cw = (width // n) * n
    top = (height - ch) // 2
    left = (width - cw) // 2
    return slice(top, top + ch), slice(left, left + cw)


def align_logits_to_label(logits: torch.Tensor, low_hw: tuple[int, int], n: int):
    """Center-crop logits to the largest footprint consistent with an
    h x w coarse label at factor n; returns (cropped logits, label slices).

    With a 512-wide prediction and n=30 this keeps the central 510 pixels
    and the matching 17x17 coarse window.
    """
    h, w = logits.shape[-2:]
    sy, sx = crop_to_multiple(h, w, n)
    cropped = logits[..., sy, sx]
    th, tw = cropped.shape[-2] // n, cropped.shape[-1] // n
    lh, lw = low_hw
    if th > lh or tw > lw:
        raise ShapeMismatch(f"label {low_hw} too small for prediction {h}x{w} at n={n}")
    ly = slice((lh - th) // 2, (lh - th) // 2 + th)
    lx = slice((lw - tw) // 2, (lw - tw) // 2 + tw)
    return cropped, (ly, lx)


def blur_mean_drift(size: int, sigma: float) -> float:
    """Worst-case mean change of the blur on a constant-free field;
    zero under circular padding (used only by tests)."""
    field = torch.randn(1, 1, size, size, dtype=torch.float64)
    out = gaussian_blur3x3(field, sigma, padding="circular")
    return float((out.mean() - field.mean()).abs())


def sharpness_bound(num_classes: int, tau: float, margin: float) -> float:
    """Upper bound on |soft argmax - hard argmax| for a per-pixel margin."""
    return (num_classes - 1) * num_classes * math.exp(-tau * margin)
