"""Per-pixel greedy search with query feedback and the budgeted pipeline."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from .imagecore import as_image
from .models import CapabilityError, Model, cw_loss, cw_loss_batch
from .prioritymap import GRADIENT, RANDOM, PriorityMap, build_priority_map, random_priority_map
from .rng import derive_seed

WHITEBOX_LIMITED = "wb"
BLACKBOX_LIMITED = "bb"
BLACKBOX_UNLIMITED = "bb-unl"
THREATS = (WHITEBOX_LIMITED, BLACKBOX_LIMITED, BLACKBOX_UNLIMITED)


@dataclass(frozen=True)
class AttackConfig:
    """Attack settings. ``refresh_period=None`` disables map refreshes.

    ``refresh_on_iterate`` recomputes the surrogate gradient at the current
    adversarial image on refresh; set it to False to always use the clean
    image (which makes gradient refreshes a no-op).
    """

    epsilon: float = 4 / 255
    max_queries: int = 10_000
    refresh_period: int | None = None
    threat: str = BLACKBOX_LIMITED
    map_source: str = GRADIENT
    seed: int = 0
    early_stop: bool = True
    refresh_on_iterate: bool = True

    def __post_init__(self):
        if self.threat not in THREATS:
            raise ValueError(f"unknown threat model {self.threat!r}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.threat == BLACKBOX_UNLIMITED and self.epsilon != 1.0:
            raise ValueError("the unlimited threat model requires epsilon = 1")
        if self.map_source not in (GRADIENT, RANDOM):
            raise ValueError(f"unknown map source {self.map_source!r}")
        if self.refresh_period is not None and self.refresh_period < 1:
            raise ValueError("refresh_period must be positive or None")
        if self.max_queries < 1:
            raise ValueError("max_queries must be positive")

    @classmethod
    def unlimited(cls, **kwargs) -> "AttackConfig":
        return cls(epsilon=1.0, threat=BLACKBOX_UNLIMITED, **kwargs)


@dataclass
class AttackState:
    """Mutable engine state; ``adversarial`` is ``clamp(x + delta)``."""

    adversarial: np.ndarray
    current_loss: float
    t: int = 0
    queries_used: int = 0
    loss_trace: list[float] = field(default_factory=list)
    priority: PriorityMap | None = None
    map_cursor: int = 0
    commits: int = 0
    last_committed: bool = False


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: bool
    queries_used: int
    setup_queries: int
    pixel_steps: int
    modified_pixels: int
    final_loss: float
    loss_trace: list[float]
    linf: float
    stop_reason: str
    config: AttackConfig

    def to_json_dict(self) -> dict:
        return {
            "success": bool(self.success),
            "pixel_steps": int(self.pixel_steps),
            "queries_used": int(self.queries_used),
            "setup_queries": int(self.setup_queries),
            "modified_pixels": int(self.modified_pixels),
            "final_loss": float(self.final_loss),
            "loss_trace": [float(v) for v in self.loss_trace],
            "linf": float(self.linf),
            "stop_reason": self.stop_reason,
            "config": asdict(self.config),
        }


def candidate_signs(channels: int) -> np.ndarray:
    """All ``2**C`` sign vectors; channel 0 most significant, -1 before +1."""
    return np.array(list(itertools.product((-1.0, 1.0), repeat=channels)))


def one_pass_cost(channels: int, height: int, width: int) -> int:
    """Queries needed to visit every pixel once: ``H * W * 2**C``."""
    if min(channels, height, width) < 1:
        raise ValueError("dimensions must be positive")
    return height * width * 2**channels


def modified_pixel_count(x: np.ndarray, adversarial: np.ndarray) -> int:
    return int(np.count_nonzero(np.any(adversarial != x, axis=0)))


def greedy_pixel_step(target: Model, x, y: int, state: AttackState, p, epsilon: float) -> AttackState:
    """Try all ``2**C`` sign patterns at pixel ``p``; keep the best if it helps.

    Spends exactly ``2**C`` target queries. ``state.current_loss`` must be
    the loss of ``state.adversarial``; it is reused rather than re-queried.
    """
    h, w = p
    signs = candidate_signs(x.shape[0])
    values = np.clip(x[:, h, w][None, :] + epsilon * signs, 0.0, 1.0)
    batch = np.repeat(state.adversarial[None], len(signs), axis=0)
    batch[:, :, h, w] = values
    losses = cw_loss_batch(target.logits_batch(batch), y)
    best = int(np.argmin(losses))
    state.t += 1
    state.queries_used += len(signs)
    state.last_committed = bool(losses[best] < state.current_loss)
    if state.last_committed:
        adv = state.adversarial.copy()
        adv[:, h, w] = values[best]
        state.adversarial = adv
        state.current_loss = float(losses[best])
        state.commits += 1
    state.loss_trace.append(state.current_loss)
    return state


def _make_map(config, surrogate, image, y, x_shape, refresh_index, t):
    _, height, width = x_shape
    if config.map_source == RANDOM:
        return random_priority_map(height, width, derive_seed(config.seed, refresh_index), computed_at=t)
    return build_priority_map(surrogate, image, y, computed_at=t)


def run_attack(target: Model, surrogate: Model | None, x, y: int, config: AttackConfig,
               callback=None) -> AttackResult:
    """Run the full budgeted attack on one image.

    Stops on misclassification (when ``config.early_stop``), when the next
    pixel step would exceed ``config.max_queries``, or when every pixel has
    been rejected since the last commit (a coordinate-wise minimum).
    ``callback(state)`` is called after every pixel step.
    """
    x = as_image(x)
    c, height, width = x.shape
    per_step = 2**c
    if config.max_queries < per_step:
        raise ValueError(f"max_queries must be at least 2**C = {per_step}")
    if config.threat == WHITEBOX_LIMITED:
        surrogate = target
    if config.map_source == GRADIENT and (surrogate is None or not surrogate.has_gradient):
        raise CapabilityError("gradient priority map needs a surrogate with input gradients")

    loss0 = cw_loss(target.logits(x), y)
    state = AttackState(adversarial=x.copy(), current_loss=loss0, loss_trace=[loss0])
    m = height * width
    stop_reason = "budget"
    if loss0 < 0:
        stop_reason = "initial"
    else:
        state.priority = _make_map(config, surrogate, x, y, x.shape, 0, 0)
        refreshes = 0
        rejected_since_commit: set = set()
        while (state.t + 1) * per_step <= config.max_queries:
            if config.refresh_period and state.t > 0 and state.t % config.refresh_period == 0:
                refreshes += 1
                source = state.adversarial if config.refresh_on_iterate else x
                state.priority = _make_map(config, surrogate, source, y, x.shape, refreshes, state.t)
                state.map_cursor = 0
            p = state.priority[state.map_cursor % m]
            state.map_cursor += 1
            greedy_pixel_step(target, x, y, state, p, config.epsilon)
            if callback is not None:
                callback(state)
            if state.last_committed:
                rejected_since_commit.clear()
            else:
                rejected_since_commit.add(p)
            if state.current_loss < 0 and config.early_stop:
                stop_reason = "success"
                break
            if len(rejected_since_commit) == m:
                stop_reason = "converged"
                break

    adv = state.adversarial
    return AttackResult(
        adversarial=adv,
        success=state.current_loss < 0,
        queries_used=state.queries_used,
        setup_queries=1,
        pixel_steps=state.t,
        modified_pixels=modified_pixel_count(x, adv),
        final_loss=state.current_loss,
        loss_trace=state.loss_trace,
        linf=float(np.abs(adv - x).max()),
        stop_reason=stop_reason,
        config=config,
    )
