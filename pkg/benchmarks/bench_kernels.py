"""Compare the compiled and numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``. The full-attack row
patches the backend used by the model code so both variants run the same
search.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from greedypixel import _pykernels, kernels, models
from greedypixel.attack import AttackConfig, run_attack
from greedypixel.models import random_tinyconv
from greedypixel.rng import derive_seed, initial_state

try:
    from greedypixel import _ckernels
except ImportError:
    _ckernels = None


def _attack_once():
    model = random_tinyconv((3, 16, 16), 10, 8, seed=1)
    x = np.random.default_rng(1).random((3, 16, 16))
    y = int(np.argmax(model.logits(x)))
    run_attack(model, model, x, y, AttackConfig(epsilon=8 / 255, max_queries=2048, threat="wb", early_stop=False))


def _with_backend(impl, fn):
    saved = models.kernels
    shim = type("shim", (), {
        "conv3x3_forward": staticmethod(impl.conv3x3_forward),
        "conv3x3_input_grad": staticmethod(impl.conv3x3_input_grad),
    })
    models.kernels = shim
    try:
        return fn()
    finally:
        models.kernels = saved


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    xs = rng.random((8, 3, 16, 16))
    w = rng.standard_normal((8, 3, 3, 3))
    b = rng.standard_normal(8)
    gz = rng.standard_normal((8, 8, 16, 16))
    states = [initial_state(derive_seed(7, i)) for i in range(10_000)]

    cases = {
        "conv forward 8x3x16x16, F=8": lambda k: k.conv3x3_forward(xs, w, b),
        "conv input grad 8x8x16x16": lambda k: k.conv3x3_input_grad(gz, w),
        "coupon sim M=256, 10k trials": lambda k: k.coupon_collector_counts(256, states),
        "tinyconv attack, 256 steps": lambda k: _with_backend(k, _attack_once),
    }
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"active backend: {kernels.BACKEND}")
    header = f"{'case':32s}" + "".join(f"{name:>12s}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for label, fn in cases.items():
        times = []
        for _, impl in backends:
            times.append(min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)))
        row = f"{label:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
