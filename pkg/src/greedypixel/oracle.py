"""Exhaustive search over the binary perturbation space and space-size counts.

This is the ground truth for the greedy search on tiny images. It shares the
model and the clamping rule with the attack but nothing else.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .models import Model, cw_loss_batch

DISCRETE = "discrete"
BINARY = "binary"
PER_PIXEL = "per_pixel"
ONE_PASS = "one_pass"

MAX_ORACLE_ELEMENTS = 16


class OracleSizeError(ValueError):
    """Instance too large for exhaustive enumeration."""


def count_space(kind: str, channels: int, height: int, width: int, epsilon: float | None = None) -> int:
    """Size of a perturbation search space as an exact integer."""
    if min(channels, height, width) < 1:
        raise ValueError("dimensions must be positive")
    n = channels * height * width
    if kind == DISCRETE:
        if epsilon is None:
            raise ValueError("DISCRETE needs epsilon")
        # round before truncating so 4/255 * 255 = 3.9999... still counts as 4
        levels = int(round(epsilon * 255, 9))
        if levels < 1:
            raise ValueError("epsilon must be at least one 8-bit level")
        return (2 * levels + 1) ** n
    if kind == BINARY:
        return 2**n
    if kind == PER_PIXEL:
        return 2**channels
    if kind == ONE_PASS:
        return height * width * 2**channels
    raise ValueError(f"unknown space kind {kind!r}")


@dataclass
class OracleResult:
    delta: np.ndarray
    loss: float
    states_visited: int


def brute_force_global(target: Model, x, y: int, epsilon: float, max_elements: int = MAX_ORACLE_ELEMENTS,
                       chunk: int = 4096) -> OracleResult:
    """Global minimum of the CW loss over every delta in {-eps, +eps}^(C*H*W).

    States are enumerated lexicographically over the flattened (c, h, w)
    elements, first element most significant and -eps before +eps; the first
    minimizer wins ties. The returned delta is post-clamp.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n > max_elements:
        raise OracleSizeError(f"{n} elements exceed the oracle cap of {max_elements}")
    if n > MAX_ORACLE_ELEMENTS:
        warnings.warn(f"enumerating 2**{n} states", RuntimeWarning, stacklevel=2)
    flat = x.ravel()
    low = np.clip(flat - epsilon, 0.0, 1.0)
    high = np.clip(flat + epsilon, 0.0, 1.0)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    total = 1 << n
    best_loss, best_index, visited = np.inf, -1, 0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((idx[:, None] >> shifts[None, :]) & 1).astype(bool)
        images = np.where(bits, high, low)
        losses = cw_loss_batch(target.logits_batch(images.reshape((len(idx),) + x.shape)), y)
        visited += len(idx)
        k = int(np.argmin(losses))
        if losses[k] < best_loss:
            best_loss, best_index = float(losses[k]), int(idx[k])
    bits = ((best_index >> shifts) & 1).astype(bool)
    delta = (np.where(bits, high, low) - flat).reshape(x.shape)
    return OracleResult(delta=delta, loss=best_loss, states_visited=visited)


def verify_coordinate_minimum(target: Model, x, y: int, delta, epsilon: float) -> bool:
    """True iff no single-pixel replacement from {-eps, +eps}^C lowers the loss."""
    x = np.asarray(x, dtype=np.float64)
    adv = np.clip(x + np.asarray(delta, dtype=np.float64), 0.0, 1.0)
    # snap round-off from x + (adv - x) back onto the exact candidate values
    for level in (x, np.clip(x - epsilon, 0.0, 1.0), np.clip(x + epsilon, 0.0, 1.0)):
        adv = np.where(np.abs(adv - level) < 1e-12, level, adv)
    c, height, width = x.shape
    current = cw_loss_batch(target.logits_batch(adv[None]), y)[0]
    grid = np.array(np.meshgrid(*[[-1.0, 1.0]] * c, indexing="ij")).reshape(c, -1).T
    for h in range(height):
        for w in range(width):
            batch = np.repeat(adv[None], len(grid), axis=0)
            batch[:, :, h, w] = np.clip(x[:, h, w][None, :] + epsilon * grid, 0.0, 1.0)
            if np.min(cw_loss_batch(target.logits_batch(batch), y)) < current:
                return False
    return True


def compare_with_greedy(target: Model, x, y: int, epsilon: float, max_passes: int = 50) -> dict:
    """Gap report between the global optimum and a converged greedy run."""
    from .attack import AttackConfig, one_pass_cost, run_attack

    x = np.asarray(x, dtype=np.float64)
    oracle = brute_force_global(target, x, y, epsilon)
    config = AttackConfig(
        epsilon=epsilon,
        max_queries=max_passes * one_pass_cost(*x.shape),
        threat="wb" if target.has_gradient else "bb",
        map_source="gradient" if target.has_gradient else "random",
        early_stop=False,
    )
    greedy = run_attack(target, target, x, y, config)
    return {
        "global_loss": oracle.loss,
        "greedy_loss": greedy.final_loss,
        "gap": greedy.final_loss - oracle.loss,
        "is_coordinate_min": verify_coordinate_minimum(target, x, y, greedy.adversarial - x, epsilon),
        "converged": greedy.stop_reason == "converged",
        "states_visited": oracle.states_visited,
    }
