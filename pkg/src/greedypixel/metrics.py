"""Attack quality metrics: ASR, SSIM, sparsity and perturbation rendering."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NTSC_WEIGHTS = (0.299, 0.587, 0.114)


class UndefinedMetricError(ValueError):
    pass


def asr(results) -> float:
    """Fraction of successful attacks.

    Items may be ``AttackResult`` objects, result dicts or plain booleans.
    """
    flags = []
    for r in results:
        if isinstance(r, dict):
            flags.append(bool(r["success"]))
        elif hasattr(r, "success"):
            flags.append(bool(r.success))
        else:
            flags.append(bool(r))
    if not flags:
        raise UndefinedMetricError("ASR of an empty result set is undefined")
    return sum(flags) / len(flags)


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window: int = 8

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def ssim(x, y, params: SsimParams = SsimParams()) -> float:
    """Single-scale SSIM with a uniform square window and stride 1.

    Local statistics use population (1/n) moments. The per-window index is
    averaged over all window positions for each channel, then over channels.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    win = params.window
    if win > a.shape[1] or win > a.shape[2]:
        raise ValueError(f"window {win} larger than image {a.shape[1:]}")
    wa = sliding_window_view(a, (win, win), axis=(1, 2))
    wb = sliding_window_view(b, (win, win), axis=(1, 2))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    c1, c2 = params.c1, params.c2
    index = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(index.mean(axis=(1, 2)).mean())


def perturbation_grayscale(delta, eps_min: float, eps_max: float) -> np.ndarray:
    """Render a perturbation as a ``(1, H, W)`` image in [0, 1].

    Values are mapped from ``[eps_min, eps_max]`` to [0, 1], then RGB is
    collapsed with the NTSC luma weights. Single-channel input is only
    rescaled.
    """
    if not eps_max > eps_min:
        raise ValueError("eps_max must exceed eps_min")
    d = np.asarray(delta, dtype=np.float64)
    span = eps_max - eps_min
    tol = 1e-9 * max(1.0, span)
    if d.min() < eps_min - tol or d.max() > eps_max + tol:
        raise ValueError("delta values fall outside [eps_min, eps_max]")
    rgb = np.clip((d - eps_min) / span, 0.0, 1.0)
    if rgb.shape[0] == 1:
        return rgb
    if rgb.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {rgb.shape[0]}")
    r, g, b = NTSC_WEIGHTS
    gray = r * rgb[0] + g * rgb[1] + b * rgb[2]
    return np.clip(gray, 0.0, 1.0)[None]


def sparsity_stats(x, adversarial) -> tuple[int, float]:
    """(pixels with any channel changed by more than 1e-12, max abs change)."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(adversarial, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(b - a)
    l0 = int(np.count_nonzero(np.any(diff > 1e-12, axis=0)))
    return l0, float(diff.max(initial=0.0))


@dataclass
class MetricsReport:
    asr: float
    mean_queries: float
    mean_ssim: float | None
    mean_l0: float
    mean_linf: float
    rows: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return asdict(self)


def build_report(rows: list[dict]) -> MetricsReport:
    """Aggregate per-sample rows with keys success, queries_used,
    modified_pixels, linf and optionally ssim."""
    if not rows:
        raise UndefinedMetricError("no samples to aggregate")
    ssims = [r["ssim"] for r in rows if r.get("ssim") is not None]
    return MetricsReport(
        asr=asr(rows),
        mean_queries=float(np.mean([r["queries_used"] for r in rows])),
        mean_ssim=float(np.mean(ssims)) if ssims else None,
        mean_l0=float(np.mean([r["modified_pixels"] for r in rows])),
        mean_linf=float(np.mean([r["linf"] for r in rows])),
        rows=list(rows),
    )
