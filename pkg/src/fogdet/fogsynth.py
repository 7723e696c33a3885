"""Synthetic fog: ``I = J * t + A * (1 - t)`` with ``t = exp(-beta * depth)``."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .core import DomainTag, InvalidArgumentError, Sample

FOG_ID_SUFFIX = "_fog"


@dataclass(frozen=True)
class FogParams:
    beta: float = 0.05
    airlight: tuple[float, float, float] = (0.8, 0.8, 0.8)
    default_depth: float = 15.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise InvalidArgumentError(f"beta must be >= 0, got {self.beta}")
        if len(self.airlight) != 3 or not all(0.0 <= a <= 1.0 for a in self.airlight):
            raise InvalidArgumentError(f"airlight must be 3 values in [0, 1], got {self.airlight}")
        if not self.default_depth > 0:
            raise InvalidArgumentError("default_depth must be > 0")


def transmission_from_depth(depth: np.ndarray, beta: float) -> np.ndarray:
    if not beta >= 0:
        raise InvalidArgumentError(f"beta must be >= 0, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0) or not np.all(np.isfinite(depth)):
        raise InvalidArgumentError("depth must be finite and non-negative")
    return np.exp(-beta * depth)


def apply_fog(clear: np.ndarray, t: np.ndarray, airlight: Union[float, Sequence[float]]) -> np.ndarray:
    """Blend ``clear`` (3, H, W) toward ``airlight`` using transmission ``t`` (H, W)."""
    clear = np.asarray(clear)
    t = np.asarray(t, dtype=np.float64)
    if clear.ndim != 3 or t.shape != clear.shape[1:]:
        raise InvalidArgumentError(f"transmission {t.shape} does not match image {clear.shape}")
    a = np.broadcast_to(np.asarray(airlight, dtype=np.float64).reshape(-1, 1, 1), (clear.shape[0], 1, 1))
    if np.any(a < 0) or np.any(a > 1):
        raise InvalidArgumentError("airlight must lie in [0, 1]")
    out = clear.astype(np.float64) * t + a * (1.0 - t)
    # the convex combination can overshoot [0, 1] by an ulp
    np.clip(out, 0.0, 1.0, out=out)
    return out.astype(clear.dtype, copy=False)


def synthesize_foggy_sample(s: Sample, p: FogParams) -> Sample:
    depth = s.depth
    if depth is None:
        depth = np.full((s.height, s.width), p.default_depth, dtype=np.float64)
    t = transmission_from_depth(depth, p.beta)
    foggy = apply_fog(s.image, t, p.airlight)
    return replace(
        s,
        image=foggy,
        domain=DomainTag.TARGET,
        id=s.id + FOG_ID_SUFFIX,
        clear_view=s.image,
    )
