"""Logits oracles, the CW margin loss and the built-in reference networks.

A model is anything with ``num_classes``, ``input_shape`` and
``logits(x)``. Models that can also return the input gradient of the CW loss
set ``has_gradient = True`` and implement ``loss_grad(x, y)``.
Evaluation is pure, so a single model may be queried from several threads.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import kernels
from .rng import XorShift64Star


class InvalidModelError(ValueError):
    """Model output cannot define a CW loss (fewer than two classes)."""


class CapabilityError(RuntimeError):
    """An operation needs input gradients the model does not expose."""


def runner_up(logits, y: int) -> int:
    """Index of the largest logit other than ``y``; lowest index wins ties."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise InvalidModelError(f"need at least 2 logits, got shape {z.shape}")
    if not 0 <= y < z.shape[0]:
        raise ValueError(f"label {y} out of range for {z.shape[0]} classes")
    masked = z.copy()
    masked[y] = -np.inf
    return int(np.argmax(masked))


def cw_loss(logits, y: int) -> float:
    """``Z_y - max_{i != y} Z_i``. Negative means misclassified."""
    z = np.asarray(logits, dtype=np.float64)
    i = runner_up(z, y)
    return float(z[y] - z[i])


def cw_loss_batch(logits, y: int) -> np.ndarray:
    """Row-wise CW loss for a ``(B, K)`` logits matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise InvalidModelError(f"need (B, K>=2) logits, got shape {z.shape}")
    others = z.copy()
    others[:, y] = -np.inf
    return z[:, y] - others.max(axis=1)


def _rowwise_affine(a, weight, bias):
    # BLAS matmul rounds differently depending on batch size; this keeps the
    # logits of an image bit-identical however it is batched
    return (a[:, None, :] * weight[None, :, :]).sum(axis=2) + bias


class Model:
    """Base logits oracle."""

    num_classes: int
    input_shape: tuple[int, int, int]
    has_gradient = False

    def logits(self, x) -> np.ndarray:
        return self.logits_batch(np.asarray(x)[None])[0]

    def logits_batch(self, xs) -> np.ndarray:
        return np.stack([self.logits(x) for x in xs])

    def loss(self, x, y: int) -> float:
        return cw_loss(self.logits(x), y)

    def loss_grad(self, x, y: int) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} exposes no input gradients")

    def _check_input(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[1:] != tuple(self.input_shape):
            raise ValueError(f"input shape {xs.shape[1:]} does not match model shape {self.input_shape}")
        return xs


class LinearNet(Model):
    """``logits = W @ flatten(x) + b``."""

    arch = "linear"
    has_gradient = True

    def __init__(self, weight, bias, input_shape, seed: int = 0):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = self.weight.shape[0]
        self.seed = seed
        n = int(np.prod(self.input_shape))
        if self.weight.shape != (self.num_classes, n) or self.bias.shape != (self.num_classes,):
            raise ValueError("weight must be (K, C*H*W) and bias (K,)")

    def logits_batch(self, xs):
        xs = self._check_input(xs)
        return _rowwise_affine(xs.reshape(xs.shape[0], -1), self.weight, self.bias)

    def loss_grad(self, x, y):
        i = runner_up(self.logits(x), y)
        return (self.weight[y] - self.weight[i]).reshape(self.input_shape)

    def weight_arrays(self):
        return {"weight": self.weight, "bias": self.bias}


class TinyConvNet(Model):
    """3x3 same conv (F filters) -> ReLU -> global average pool -> dense K x F."""

    arch = "tinyconv"
    has_gradient = True

    def __init__(self, conv_weight, conv_bias, dense_weight, dense_bias, input_shape, seed: int = 0):
        self.conv_weight = np.ascontiguousarray(conv_weight, dtype=np.float64)
        self.conv_bias = np.asarray(conv_bias, dtype=np.float64)
        self.dense_weight = np.asarray(dense_weight, dtype=np.float64)
        self.dense_bias = np.asarray(dense_bias, dtype=np.float64)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes, self.filters = self.dense_weight.shape
        self.seed = seed
        c = self.input_shape[0]
        if self.conv_weight.shape != (self.filters, c, 3, 3):
            raise ValueError(f"conv_weight must be (F, C, 3, 3), got {self.conv_weight.shape}")
        if self.conv_bias.shape != (self.filters,) or self.dense_bias.shape != (self.num_classes,):
            raise ValueError("bias shapes do not match F and K")

    def preactivations(self, xs) -> np.ndarray:
        xs = self._check_input(xs)
        return kernels.conv3x3_forward(xs, self.conv_weight, self.conv_bias)

    def logits_batch(self, xs):
        z = self.preactivations(xs)
        pooled = np.maximum(z, 0.0).mean(axis=(2, 3))
        return _rowwise_affine(pooled, self.dense_weight, self.dense_bias)

    def loss_grad(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        z = self.preactivations(x[None])
        pooled = np.maximum(z, 0.0).mean(axis=(2, 3))
        logits = _rowwise_affine(pooled, self.dense_weight, self.dense_bias)[0]
        i = runner_up(logits, y)
        g_pooled = self.dense_weight[y] - self.dense_weight[i]
        h, w = self.input_shape[1:]
        # ReLU'(0) is taken as 0
        g_z = (z > 0.0) * (g_pooled[None, :, None, None] / (h * w))
        return kernels.conv3x3_input_grad(g_z, self.conv_weight)[0]

    def kink_distance(self, x, y: int) -> tuple[float, float]:
        """Smallest |pre-activation| and the top-two competitor logit gap.

        Finite differences are only trustworthy when both are well above the
        step size times the local slope.
        """
        x = np.asarray(x, dtype=np.float64)
        z = self.preactivations(x[None])
        logits = self.logits(x)
        others = np.sort(np.delete(logits, y))
        gap = float(others[-1] - others[-2]) if others.size > 1 else np.inf
        return float(np.abs(z).min()), gap

    def weight_arrays(self):
        return {
            "conv_weight": self.conv_weight,
            "conv_bias": self.conv_bias,
            "dense_weight": self.dense_weight,
            "dense_bias": self.dense_bias,
        }


# --------------------------------------------------------------------------
# Seeded construction


def _uniform(rng: XorShift64Star, shape, scale: float) -> np.ndarray:
    n = int(np.prod(shape))
    return np.array([(2.0 * rng.uniform() - 1.0) * scale for _ in range(n)]).reshape(shape)


def random_linear(shape, num_classes: int, seed: int) -> LinearNet:
    n = int(np.prod(shape))
    rng = XorShift64Star(seed)
    weight = _uniform(rng, (num_classes, n), 1.0)
    bias = _uniform(rng, (num_classes,), 0.1)
    return LinearNet(weight, bias, shape, seed=seed)


def random_tinyconv(shape, num_classes: int, filters: int, seed: int) -> TinyConvNet:
    c = shape[0]
    rng = XorShift64Star(seed)
    conv_weight = _uniform(rng, (filters, c, 3, 3), 1.0 / np.sqrt(9 * c))
    conv_bias = _uniform(rng, (filters,), 0.1)
    dense_weight = _uniform(rng, (num_classes, filters), 1.0)
    dense_bias = _uniform(rng, (num_classes,), 0.1)
    return TinyConvNet(conv_weight, conv_bias, dense_weight, dense_bias, shape, seed=seed)


def spatial_mask(height: int, width: int, kind: str = "center") -> np.ndarray:
    """Non-negative pixel weights summing to 1.

    ``"uniform"`` weighs every pixel equally; ``"center"`` is a Gaussian bump
    (sigma = min(H, W) / 4) so that pixels differ in importance.
    """
    if kind == "uniform":
        return np.full((height, width), 1.0 / (height * width))
    if kind != "center":
        raise ValueError(f"unknown mask kind {kind!r}")
    hh, ww = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    sigma = max(min(height, width) / 4.0, 0.5)
    d2 = (hh - (height - 1) / 2.0) ** 2 + (ww - (width - 1) / 2.0) ** 2
    mask = np.exp(-d2 / (2.0 * sigma**2))
    return mask / mask.sum()


def dominant_channel_linear(shape, mask: str = "center") -> LinearNet:
    """Linear model whose logit k is the mask-weighted mean of channel k.

    Its prediction defines the dominant-channel task, so clean accuracy on
    the task is 100% by construction.
    """
    c, h, w = shape
    s = spatial_mask(h, w, mask).ravel()
    weight = np.zeros((c, c * h * w))
    for k in range(c):
        weight[k, k * h * w : (k + 1) * h * w] = s
    return LinearNet(weight, np.zeros(c), shape, seed=0)


def dominant_channel_sample(shape, seed: int, mask: str = "center",
                            margin: tuple[float, float] = (0.002, 0.02)):
    """Random image for the dominant-channel task and its label.

    Values start uniform in [0.1, 0.9]; a random channel is then shifted so
    its weighted mean leads the runner-up by a margin drawn from ``margin``.
    """
    c, h, w = shape
    rng = XorShift64Star(seed)
    x = 0.1 + 0.8 * np.array([rng.uniform() for _ in range(c * h * w)]).reshape(shape)
    s = spatial_mask(h, w, mask)
    y = rng.below(c)
    lo, hi = margin
    gap = lo + (hi - lo) * rng.uniform()
    means = (x * s).sum(axis=(1, 2))
    rival = np.max(np.delete(means, y))
    x[y] = np.clip(x[y] + (rival - means[y] + gap), 0.0, 1.0)
    means = (x * s).sum(axis=(1, 2))
    return x, int(np.argmax(means))


# --------------------------------------------------------------------------
# Weight files


def model_to_dict(model: Model) -> dict:
    c, h, w = model.input_shape
    doc = {"arch": model.arch, "k": model.num_classes, "c": c, "h": h, "w": w}
    if model.arch == "tinyconv":
        doc["filters"] = model.filters
    doc["seed"] = int(model.seed)
    doc["weights"] = {name: [float(v) for v in arr.ravel()] for name, arr in model.weight_arrays().items()}
    return doc


def model_from_dict(doc: dict) -> Model:
    try:
        arch = doc["arch"]
        k, shape = int(doc["k"]), (int(doc["c"]), int(doc["h"]), int(doc["w"]))
        weights = {name: np.asarray(v, dtype=np.float64) for name, v in doc["weights"].items()}
        seed = int(doc.get("seed", 0))
        if arch == "linear":
            return LinearNet(weights["weight"].reshape(k, -1), weights["bias"], shape, seed=seed)
        if arch == "tinyconv":
            f = int(doc["filters"])
            return TinyConvNet(
                weights["conv_weight"].reshape(f, shape[0], 3, 3),
                weights["conv_bias"],
                weights["dense_weight"].reshape(k, f),
                weights["dense_bias"],
                shape,
                seed=seed,
            )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed weight document: {exc}") from exc
    raise ValueError(f"unknown architecture {arch!r}")


def save_model(model: Model, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> Model:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Diagnostics and the PGD baseline


def finite_difference_grad(model: Model, x, y: int, step: float) -> np.ndarray:
    """Central-difference gradient of the CW loss, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    flat = x.ravel()
    probes = np.repeat(flat[None], 2 * n, axis=0)
    idx = np.arange(n)
    probes[2 * idx, idx] += step
    probes[2 * idx + 1, idx] -= step
    losses = cw_loss_batch(model.logits_batch(probes.reshape((2 * n,) + x.shape)), y)
    return ((losses[0::2] - losses[1::2]) / (2.0 * step)).reshape(x.shape)


def gradient_check(model: Model, x, y: int, step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Only coordinates whose analytic gradient exceeds 1e-8 in magnitude are
    compared; returns 0.0 when there are none.
    """
    analytic = model.loss_grad(x, y)
    numeric = finite_difference_grad(model, x, y, step)
    keep = np.abs(analytic) > 1e-8
    if not keep.any():
        return 0.0
    a, f = analytic[keep], numeric[keep]
    return float(np.max(np.abs(a - f) / np.maximum(np.abs(a), np.abs(f))))


def pgd_attack(model: Model, x, y: int, epsilon: float, step_size: float, iters: int) -> np.ndarray:
    """Signed-gradient descent on the CW loss, projected to the eps-ball and [0, 1]."""
    if not model.has_gradient:
        raise CapabilityError("PGD needs input gradients")
    x = np.asarray(x, dtype=np.float64)
    lo, hi = np.maximum(x - epsilon, 0.0), np.minimum(x + epsilon, 1.0)
    adv = x.copy()
    for _ in range(iters):
        adv = np.clip(adv - step_size * np.sign(model.loss_grad(adv, y)), lo, hi)
    return adv
