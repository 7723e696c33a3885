"""Adaptation heads on the shared stride-16 features.

* a domain discriminator behind a gradient reversal layer,
* a depth estimation block predicting one positive depth per feature cell,
* a reconstruction decoder mapping features back to the input image.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import InvalidArgumentError


class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad * (-ctx.lam), None


def grad_reverse(features: torch.Tensor, lam: float) -> torch.Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lam`` on the way back."""
    if not lam >= 0:
        raise InvalidArgumentError(f"reversal coefficient must be >= 0, got {lam}")
    return _GradReverse.apply(features, float(lam))


class AdaptHeads(nn.Module):
    def __init__(self, in_channels: int, stride: int = 16, hidden: int = 64, decoder_channels: int = 16):
        super().__init__()
        self.in_channels = in_channels
        self.stride = stride
        self.disc = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, 1, 1), nn.ReLU(),
            nn.Conv2d(hidden, hidden, 3, 1, 1), nn.ReLU(),
        )
        self.disc_out = nn.Linear(hidden, 1)
        self.depth = nn.Sequential(nn.Conv2d(in_channels, hidden, 3, 1, 1), nn.ReLU())
        self.depth_out = nn.Conv2d(hidden, 1, 1)
        n_up = max(int(stride).bit_length() - 1, 0)
        if 2 ** n_up != stride:
            raise InvalidArgumentError("stride must be a power of two")
        layers: list[nn.Module] = [nn.Conv2d(in_channels, decoder_channels, 1), nn.ReLU()]
        for _ in range(n_up):
            layers += [nn.Upsample(scale_factor=2, mode="nearest"),
                       nn.Conv2d(decoder_channels, decoder_channels, 3, 1, 1), nn.ReLU()]
        self.decoder = nn.Sequential(*layers)
        self.decoder_out = nn.Conv2d(decoder_channels, 3, 3, 1, 1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.disc_out.weight, std=0.01)
        nn.init.zeros_(self.disc_out.bias)
        nn.init.normal_(self.depth_out.weight, std=0.01)
        nn.init.normal_(self.decoder_out.weight, std=0.01)

    def _check(self, f: torch.Tensor):
        if f.dim() != 4 or f.shape[1] != self.in_channels:
            raise InvalidArgumentError(f"features {tuple(f.shape)} do not match "
                                       f"{self.in_channels}-channel adaptation heads")


def discriminate_domain(f: torch.Tensor, heads: AdaptHeads, lam: float) -> torch.Tensor:
    """One logit per image; ``sigmoid(logit)`` is the probability of the target domain."""
    heads._check(f)
    h = heads.disc(grad_reverse(f, lam))
    return heads.disc_out(h.mean(dim=(2, 3))).squeeze(1)


def estimate_depth(f: torch.Tensor, heads: AdaptHeads, depth_scale: float = 1.0) -> torch.Tensor:
    """Positive depth in meters per feature cell, shape ``(B, H_f, W_f)``."""
    heads._check(f)
    log_depth = heads.depth_out(heads.depth(f)).squeeze(1)
    return depth_scale * torch.exp(log_depth)


def reconstruct_image(f: torch.Tensor, heads: AdaptHeads, image_hw=None) -> torch.Tensor:
    """Decode features to a ``(B, 3, H, W)`` image in [0, 1].

    The decoder upsamples by the stride; ``image_hw`` crops the result back to
    an input size that was not a multiple of the stride.
    """
    heads._check(f)
    out = torch.sigmoid(heads.decoder_out(heads.decoder(f)))
    if image_hw is not None:
        out = out[..., : image_hw[0], : image_hw[1]]
    return out


def downsample_depth(depth: torch.Tensor, stride: int) -> torch.Tensor:
    """Mean-pool an ``(B, H, W)`` depth map to feature resolution.

    Partial cells at the bottom/right edges average only the pixels they cover.
    """
    d = depth.unsqueeze(1)
    h, w = d.shape[-2:]
    ph, pw = (-h) % stride, (-w) % stride
    ones = torch.ones_like(d)
    if ph or pw:
        d = F.pad(d, (0, pw, 0, ph))
        ones = F.pad(ones, (0, pw, 0, ph))
    total = F.avg_pool2d(d, stride) * stride * stride
    count = F.avg_pool2d(ones, stride) * stride * stride
    return (total / count).squeeze(1)
