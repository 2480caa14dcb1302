"""Network definitions: segmentation generator, realism discriminator,
and the masked-reconstruction pretraining model.

The generator is a U-Net over a ResNet-18-style backbone; ``width``
scales every channel count so desk-scale runs stay cheap (width=64 is
the reference configuration). The discriminator scores single-channel
class-index maps. The pretraining model reuses the same backbone as a
patch embedder, runs a small transformer over the visible tokens, and
reconstructs the image with a convolutional decoder whose last stage is
a 2x upsample.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .errors import ArchitectureMismatch, ShapeError


class BasicBlock(nn.Module):
    """Two 3x3 convs with batch norm and an additive (possibly projected) skip."""

    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNetEncoder(nn.Module):
    """Four-stage residual backbone; returns the stem and stage activations."""

    def __init__(self, in_channels=3, width=64):
        super().__init__()
        w = width
        self.width = w
        self.conv1 = nn.Conv2d(in_channels, w, 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(w)
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.layer1 = nn.Sequential(BasicBlock(w, w), BasicBlock(w, w))
        self.layer2 = nn.Sequential(BasicBlock(w, 2 * w, stride=2), BasicBlock(2 * w, 2 * w))
        self.layer3 = nn.Sequential(BasicBlock(2 * w, 4 * w, stride=2), BasicBlock(4 * w, 4 * w))
        self.layer4 = nn.Sequential(BasicBlock(4 * w, 8 * w, stride=2), BasicBlock(8 * w, 8 * w))

    def forward(self, x):
        c0 = self.relu(self.bn1(self.conv1(x)))  # /2
        c1 = self.layer1(self.maxpool(c0))  # /4
        c2 = self.layer2(c1)  # /8
        c3 = self.layer3(c2)  # /16
        c4 = self.layer4(c3)  # /32
        return c0, c1, c2, c3, c4


class DecoderBlock(nn.Module):
    """2x nearest upsample, concat the skip, then two 3x3 conv + ReLU."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.conv = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x, skip):
        x = self.up(x)
        return self.conv(torch.cat([x, skip], dim=1))


class SegmentationGenerator(nn.Module):
    """Fully convolutional encoder-decoder producing per-pixel class logits."""

    def __init__(self, in_channels=3, num_classes=4, width=64):
        super().__init__()
        w = width
        self.num_classes = num_classes
        self.encoder = ResNetEncoder(in_channels, width)
        self.dec1 = DecoderBlock(8 * w + 4 * w, 4 * w)
        self.dec2 = DecoderBlock(4 * w + 2 * w, 2 * w)
        self.dec3 = DecoderBlock(2 * w + w, w)
        self.dec4 = DecoderBlock(w + w, w)
        self.final_up = nn.Upsample(scale_factor=2, mode="nearest")
        self.final_conv = nn.Conv2d(w, num_classes, 3, padding=1)

    def forward(self, x):
        h, wdt = x.shape[-2:]
        if h % 32 or wdt % 32:
            raise ShapeError(f"input {h}x{wdt} must be divisible by 32")
        c0, c1, c2, c3, c4 = self.encoder(x)
        d = self.dec1(c4, c3)
        d = self.dec2(d, c2)
        d = self.dec3(d, c1)
        d = self.dec4(d, c0)
        return self.final_conv(self.final_up(d))


class DiscriminatorBlock(nn.Module):
    """Residual block with a 1x1 shortcut; optionally halves resolution."""

    def __init__(self, in_ch, out_ch, down=True):
        super().__init__()
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=2 if down else 1)
        self.main = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.down = nn.Sequential(nn.Conv2d(out_ch, out_ch, 3, stride=2, padding=1)) if down else None

    def forward(self, x):
        h = self.main(x)
        if self.down is not None:
            h = self.down(h)
        return h + self.shortcut(x)


DEFAULT_DISC_CHANNELS = (32, 64, 128, 128, 128, 128, 128, 128)


class RealismDiscriminator(nn.Module):
    """Scores a single-channel class-index map; one scalar per element.

    All blocks but the last halve the resolution, so ``input_size`` must
    survive len(channels) - 1 halvings with at least 2 pixels left.
    """

    def __init__(self, in_channels=1, input_size=256, channels=DEFAULT_DISC_CHANNELS):
        super().__init__()
        halvings = len(channels) - 1
        final = input_size // (2**halvings)
        if final < 2 or input_size % (2**halvings):
            raise ShapeError(
                f"input size {input_size} cannot survive {halvings} halvings (needs >= 2 px)"
            )
        self.input_size = input_size
        blocks = []
        prev = in_channels
        for i, ch in enumerate(channels):
            blocks.append(DiscriminatorBlock(prev, ch, down=i < halvings))
            prev = ch
        self.blocks = nn.ModuleList(blocks)
        self.head_conv = nn.Conv2d(prev, prev, 3, padding=1)
        self.act = nn.LeakyReLU(0.2, inplace=True)
        self.flatten = nn.Flatten()
        self.fc = nn.Linear(prev * final * final, 1)

    def forward(self, x):
        if x.shape[-1] != self.input_size or x.shape[-2] != self.input_size:
            raise ShapeError(f"expected {self.input_size}^2 input, got {tuple(x.shape[-2:])}")
        for block in self.blocks:
            x = block(x)
        x = self.act(self.head_conv(x))
        return self.fc(self.flatten(x)).squeeze(1)


class MaskedReconstructionModel(nn.Module):
    """Backbone patch embedding + transformer over visible tokens + conv
    decoder ending in a 2x upsample back to image resolution."""

    def __init__(
        self,
        image_size=64,
        in_channels=3,
        width=16,
        embed_dim=128,
        depth=6,
        num_heads=4,
        mask_ratio=0.75,
    ):
        super().__init__()
        if image_size % 32:
            raise ShapeError(f"image size {image_size} must be divisible by 32")
        self.image_size = image_size
        self.mask_ratio = mask_ratio
        self.grid = image_size // 32
        self.num_tokens = self.grid * self.grid
        self.backbone = ResNetEncoder(in_channels, width)
        self.token_proj = nn.Conv2d(8 * width, embed_dim, 1)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.num_tokens, embed_dim))
        layer = nn.TransformerEncoderLayer(
            d_model=embed_dim,
            nhead=num_heads,
            dim_feedforward=2 * embed_dim,
            batch_first=True,
            dropout=0.0,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=depth)
        self.mask_token = nn.Parameter(torch.zeros(embed_dim))
        dims = [embed_dim, max(embed_dim // 2, 8), max(embed_dim // 4, 8), max(embed_dim // 8, 8)]
        ups = []
        for i in range(3):
            ups += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(dims[i], dims[i + 1], 3, padding=1),
                nn.ReLU(inplace=True),
            ]
        ups += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(dims[3], dims[3], 3, padding=1),
            nn.ReLU(inplace=True),
        ]
        self.pre_decoder = nn.Sequential(*ups)  # /32 -> /2
        self.final_up = nn.Upsample(scale_factor=2, mode="nearest")  # /2 -> /1
        self.final_conv = nn.Conv2d(dims[3], in_channels, 3, padding=1)

    def num_visible(self) -> int:
        return int(round((1.0 - self.mask_ratio) * self.num_tokens))

    def sample_mask(self, batch: int, mask_seed: int) -> torch.Tensor:
        """Boolean (batch, tokens) mask, True where a token is hidden."""
        gen = torch.Generator().manual_seed(mask_seed)
        n_vis = self.num_visible()
        mask = torch.ones(batch, self.num_tokens, dtype=torch.bool)
        for b in range(batch):
            visible = torch.randperm(self.num_tokens, generator=gen)[:n_vis]
            mask[b, visible] = False
        return mask

    def forward(self, images: torch.Tensor, mask_seed: int):
        b, _, h, w = images.shape
        if h != self.image_size or w != self.image_size:
            raise ShapeError(f"expected {self.image_size}^2 images, got {h}x{w}")
        mask = self.sample_mask(b, mask_seed)

        keep = (~mask).float().view(b, 1, self.grid, self.grid)
        keep_pixels = keep.repeat_interleave(32, dim=2).repeat_interleave(32, dim=3)
        masked_images = images * keep_pixels

        c4 = self.backbone(masked_images)[4]
        tokens = self.token_proj(c4).flatten(2).transpose(1, 2) + self.pos_embed

        n_vis = self.num_visible()
        visible_idx = (~mask).nonzero(as_tuple=False)[:, 1].view(b, n_vis)
        gather_idx = visible_idx.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
        encoded = self.encoder(tokens.gather(1, gather_idx))

        full = self.mask_token.view(1, 1, -1) + self.pos_embed
        full = full.expand(b, -1, -1).clone()
        full = full.scatter(1, gather_idx, encoded)

        grid = full.transpose(1, 2).reshape(b, -1, self.grid, self.grid)
        recon = self.final_conv(self.final_up(self.pre_decoder(grid)))
        return recon, mask


def reconstruction_loss(images: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of per-image mean squared pixel error."""
    if images.shape != recon.shape:
        raise ShapeError(f"image {tuple(images.shape)} vs reconstruction {tuple(recon.shape)}")
    return ((images - recon) ** 2).flatten(1).mean(dim=1).mean()


def init_parameters(module: nn.Module, seed: int) -> None:
    """He-normal conv/linear weights, zero biases, unit batch norms;
    driven by a dedicated generator so init order is reproducible."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight[0][0].numel() if m.weight.dim() == 4 else 1)
            std = math.sqrt(2.0 / max(fan_in, 1))
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm2d, nn.LayerNorm)):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
    for name, p in module.named_parameters():
        if "pos_embed" in name or "mask_token" in name:
            with torch.no_grad():
                p.normal_(0.0, 0.02, generator=gen)


def transfer_backbone(mae_arrays: dict, generator: SegmentationGenerator) -> None:
    """Copy pretrained backbone weights into the generator's encoder
    bit-for-bit; decoder parameters are left as initialized."""
    encoder_state = generator.encoder.state_dict()
    new_state = {}
    for key, target in encoder_state.items():
        source = mae_arrays.get(f"backbone.{key}")
        if source is None:
            raise ArchitectureMismatch(f"pretrained weights missing backbone.{key}")
        source = np.asarray(source)
        if tuple(source.shape) != tuple(target.shape):
            raise ArchitectureMismatch(
                f"backbone.{key}: pretrained {source.shape} vs generator {tuple(target.shape)}"
            )
        new_state[key] = torch.from_numpy(source.copy()).to(target.dtype)
    generator.encoder.load_state_dict(new_state)
