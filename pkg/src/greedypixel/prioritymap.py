"""Pixel orderings: surrogate-gradient saliency, random baseline, diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .models import CapabilityError, Model
from .rng import XorShift64Star, derive_seed, initial_state

GRADIENT = "gradient"
RANDOM = "random"


@dataclass(frozen=True)
class PriorityMap:
    """A permutation of all ``H*W`` pixel coordinates, most important first."""

    order: tuple[tuple[int, int], ...]
    source: str
    height: int
    width: int
    computed_at: int = 0
    saliency: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.order)

    def __getitem__(self, i):
        return self.order[i]

    def to_json(self) -> list[list[int]]:
        return [[h, w] for h, w in self.order]


def pixel_saliency(g: np.ndarray) -> np.ndarray:
    """Per-pixel L1 norm over channels of a ``(C, H, W)`` gradient."""
    return np.abs(np.asarray(g, dtype=np.float64)).sum(axis=0)


def order_by_saliency(gprime: np.ndarray) -> tuple[tuple[int, int], ...]:
    """Descending order; equal values (including zeros) stay row-major."""
    gprime = np.asarray(gprime, dtype=np.float64)
    width = gprime.shape[1]
    flat = np.argsort(-gprime.ravel(), kind="stable")
    return tuple((int(i // width), int(i % width)) for i in flat)


def build_priority_map(surrogate: Model, x, y: int, computed_at: int = 0) -> PriorityMap:
    """Order pixels by the surrogate's CW-loss input-gradient magnitude.

    Uses only the surrogate, so it costs no target queries.
    """
    if not surrogate.has_gradient:
        raise CapabilityError("priority map needs a surrogate with input gradients")
    gprime = pixel_saliency(surrogate.loss_grad(x, y))
    h, w = gprime.shape
    return PriorityMap(order_by_saliency(gprime), GRADIENT, h, w, computed_at, gprime)


def random_priority_map(height: int, width: int, seed: int, computed_at: int = 0) -> PriorityMap:
    """Seeded uniform permutation of the pixels (xorshift64* Fisher-Yates)."""
    if height < 1 or width < 1:
        raise ValueError("height and width must be positive")
    perm = XorShift64Star(seed).permutation(height * width)
    order = tuple((i // width, i % width) for i in perm)
    return PriorityMap(order, RANDOM, height, width, computed_at)


def cosine_alignment(g_s, g, per_pixel: bool = True):
    """Cosine between surrogate and target gradients.

    With ``per_pixel`` the C-vectors at each pixel are compared and an
    ``(H, W)`` array is returned; otherwise the flattened tensors give one
    value. Pairs involving a zero vector are reported as 0 and flagged in
    the second return value.
    """
    a = np.asarray(g_s, dtype=np.float64)
    b = np.asarray(g, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if per_pixel:
        dot = (a * b).sum(axis=0)
        norm = np.sqrt((a * a).sum(axis=0)) * np.sqrt((b * b).sum(axis=0))
        degenerate = norm == 0.0
        cos = np.where(degenerate, 0.0, dot / np.where(degenerate, 1.0, norm))
        return np.clip(cos, -1.0, 1.0), degenerate
    norm = float(np.linalg.norm(a) * np.linalg.norm(b))
    if norm == 0.0:
        return 0.0, True
    return float(np.clip(np.vdot(a, b) / norm, -1.0, 1.0)), False


def coverage_expectation(m: int) -> float:
    """Expected uniform draws with replacement to visit all ``m`` pixels: m * H_m."""
    if m < 1:
        raise ValueError("m must be positive")
    return m * math.fsum(1.0 / k for k in range(1, m + 1))


def coverage_counts(m: int, trials: int, seed: int) -> np.ndarray:
    """Per-trial draw counts; trial ``i`` uses stream ``derive_seed(seed, i)``."""
    if m < 1 or trials < 1:
        raise ValueError("m and trials must be positive")
    states = [initial_state(derive_seed(seed, i)) for i in range(trials)]
    return kernels.coupon_collector_counts(m, states)


def coverage_simulation(m: int, trials: int, seed: int) -> float:
    return float(coverage_counts(m, trials, seed).mean())


def saliency_heatmap(gprime: np.ndarray) -> np.ndarray:
    """Saliency rescaled to a ``(1, H, W)`` image in [0, 1] for PGM output."""
    gprime = np.asarray(gprime, dtype=np.float64)
    top = gprime.max()
    scaled = gprime / top if top > 0 else np.zeros_like(gprime)
    return scaled[None]
