"""Command-line entry point.

Exit codes: 0 ok (attack succeeded), 2 usage or configuration error,
3 attack budget exhausted without success, 4 remote model unreachable,
5 internal error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import kernels
from .attack import THREATS, WHITEBOX_LIMITED, BLACKBOX_UNLIMITED, AttackConfig, run_attack
from .imagecore import ImageFormatError, read_image, write_image
from .metrics import SsimParams, build_report, perturbation_grayscale, ssim
from .models import (
    CapabilityError,
    InvalidModelError,
    dominant_channel_linear,
    dominant_channel_sample,
    load_model,
    random_linear,
    random_tinyconv,
    save_model,
)
from .oracle import OracleSizeError, compare_with_greedy
from .prioritymap import (
    GRADIENT,
    RANDOM,
    build_priority_map,
    coverage_expectation,
    coverage_simulation,
    saliency_heatmap,
)
from .remote import RemoteModel, ShapeMismatchError, TransportError, serve_in_thread
from .rng import XorShift64Star

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_NETWORK = 4
EXIT_INTERNAL = 5

log = logging.getLogger("greedypixel")


class ConfigError(Exception):
    pass


def parse_real(text: str) -> float:
    """Accept ``0.03`` or fractions such as ``8/255``."""
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def parse_shape(text: str) -> tuple[int, int, int]:
    try:
        c, h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"shape must look like 3x16x16, got {text!r}") from exc
    if min(c, h, w) < 1:
        raise argparse.ArgumentTypeError("shape dimensions must be positive")
    return c, h, w


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def open_model(spec: str, shape=None, retries: int = 2, timeout: float = 10.0):
    kind, _, where = spec.partition(":")
    if kind == "file":
        return load_model(where)
    if kind == "url":
        return RemoteModel(where, input_shape=shape, timeout=timeout, retries=retries)
    raise ConfigError(f"model spec must be file:PATH or url:ENDPOINT, got {spec!r}")


# --------------------------------------------------------------------------
# attack


def cmd_attack(args) -> int:
    started = time.perf_counter()
    started_at = dt.datetime.now(dt.timezone.utc).isoformat()
    eps = args.eps
    if args.threat == BLACKBOX_UNLIMITED:
        if eps is not None and eps != 1.0:
            raise ConfigError("--threat bb-unl fixes --eps to 1.0")
        eps = 1.0
    elif eps is None:
        eps = 4 / 255
    refresh = None if args.refresh == "off" else int(args.refresh)

    x = read_image(args.image)
    target = open_model(args.target, shape=x.shape, retries=args.retries, timeout=args.timeout)
    if tuple(target.input_shape) != x.shape:
        raise ConfigError(f"image shape {x.shape} does not match target shape {tuple(target.input_shape)}")
    if not 0 <= args.label < target.num_classes:
        raise ConfigError(f"label {args.label} out of range for {target.num_classes} classes")

    if args.threat == WHITEBOX_LIMITED:
        if not target.has_gradient:
            raise ConfigError("white-box attacks need a local target with gradients (file:...)")
        surrogate, map_source = target, GRADIENT
    elif args.surrogate == "random":
        surrogate, map_source = None, RANDOM
    else:
        surrogate, map_source = open_model(args.surrogate), GRADIENT
        if tuple(surrogate.input_shape) != x.shape:
            raise ConfigError("surrogate input shape does not match the image")

    config = AttackConfig(
        epsilon=eps,
        max_queries=args.max_queries,
        refresh_period=refresh,
        threat=args.threat,
        map_source=map_source,
        seed=args.seed,
    )
    result = run_attack(target, surrogate, x, args.label, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    adv_path = out / ("adversarial.ppm" if x.shape[0] == 3 else "adversarial.pgm")
    outputs = {"adversarial": adv_path, "delta_gray": out / "delta_gray.pgm", "result": out / "result.json"}
    write_image(result.adversarial, adv_path)
    write_image(perturbation_grayscale(result.adversarial - x, -eps, eps), outputs["delta_gray"])
    write_json(result.to_json_dict(), outputs["result"])
    if args.dump_priority and surrogate is not None:
        pmap = build_priority_map(surrogate, x, args.label)
        outputs["priority"] = out / "priority.json"
        outputs["saliency"] = out / "saliency.pgm"
        write_json(pmap.to_json(), outputs["priority"])
        write_image(saliency_heatmap(pmap.saliency), outputs["saliency"])

    inputs = {"image": {"spec": str(args.image), "path": str(args.image), "sha256": sha256_file(args.image)}}
    for name, spec in (("target", args.target), ("surrogate", args.surrogate)):
        entry = {"spec": spec}
        if spec.startswith("file:"):
            entry["path"] = spec[5:]
            entry["sha256"] = sha256_file(spec[5:])
        inputs[name] = entry
    manifest = {
        "command": "attack",
        "argv": list(args.argv),
        "config": result.to_json_dict()["config"],
        "label": args.label,
        "seed": args.seed,
        "inputs": inputs,
        "outputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in outputs.items()},
        "started_at": started_at,
        "wall_clock_seconds": time.perf_counter() - started,
        "kernel_backend": kernels.BACKEND,
    }
    write_json(manifest, out / "manifest.json")
    print(json.dumps({k: v for k, v in result.to_json_dict().items() if k != "loss_trace"}, sort_keys=True))
    return EXIT_OK if result.success else EXIT_BUDGET


# --------------------------------------------------------------------------
# other subcommands


def tiny_image(shape, seed: int) -> np.ndarray:
    rng = XorShift64Star(seed)
    n = int(np.prod(shape))
    return 0.1 + 0.8 * np.array([rng.uniform() for _ in range(n)]).reshape(shape)


def cmd_oracle_compare(args) -> int:
    model = load_model(args.weights)
    x = read_image(args.image) if args.image else tiny_image(model.input_shape, args.seed)
    label = args.label if args.label is not None else int(np.argmax(model.logits(x)))
    report = compare_with_greedy(model, x, label, args.eps, max_passes=args.max_passes)
    report["label"] = label
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_gen_model(args) -> int:
    if args.task == "dominant-channel":
        if args.arch != "linear":
            raise ConfigError("the dominant-channel task is defined for --arch linear only")
        model = dominant_channel_linear(args.shape, mask=args.mask)
    elif args.arch == "linear":
        model = random_linear(args.shape, args.k, args.seed)
    else:
        model = random_tinyconv(args.shape, args.k, args.filters, args.seed)
    save_model(model, args.out)
    print(json.dumps({"path": args.out, "sha256": sha256_file(args.out)}))
    return EXIT_OK


def cmd_gen_sample(args) -> int:
    x, label = dominant_channel_sample(args.shape, args.seed, mask=args.mask)
    write_image(x, args.out)
    # the written file is 8-bit quantized; report the label of what was written
    model = dominant_channel_linear(args.shape, mask=args.mask)
    label = int(np.argmax(model.logits(read_image(args.out))))
    print(json.dumps({"path": args.out, "label": label}))
    return EXIT_OK


def cmd_metrics(args) -> int:
    rows = []
    for path in args.results:
        path = Path(path)
        doc = json.loads(path.read_text())
        row = {k: doc[k] for k in ("success", "queries_used", "modified_pixels", "linf")}
        row["source"] = str(path)
        manifest = path.with_name("manifest.json")
        row["ssim"] = None
        if manifest.exists():
            man = json.loads(manifest.read_text())
            try:
                clean = read_image(man["inputs"]["image"]["path"])
                adv = read_image(man["outputs"]["adversarial"]["path"])
                row["ssim"] = ssim(clean, adv, SsimParams(window=min(args.window, *clean.shape[1:])))
            except (OSError, KeyError, ImageFormatError) as exc:
                log.warning("no SSIM for %s: %s", path, exc)
        rows.append(row)
    report = build_report(rows).to_json_dict()
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_coverage_sim(args) -> int:
    expectation = coverage_expectation(args.m)
    empirical = coverage_simulation(args.m, args.trials, args.seed)
    print(json.dumps({
        "m": args.m,
        "trials": args.trials,
        "expectation": expectation,
        "empirical": empirical,
        "relative_error": abs(empirical - expectation) / expectation,
    }, sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    model = load_model(args.weights)
    with serve_in_thread(model, args.host, args.port) as server:
        print(json.dumps({"url": server.base_url}), flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greedypixel", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="attack one image")
    p.add_argument("--image", required=True, help="input PPM (RGB) or PGM (gray)")
    p.add_argument("--label", type=int, required=True, help="true class index")
    p.add_argument("--target", required=True, help="file:WEIGHTS.json or url:ENDPOINT")
    p.add_argument("--surrogate", default="random", help="file:WEIGHTS.json or 'random' (black-box only)")
    p.add_argument("--eps", type=parse_real, default=None, help="L-inf budget, e.g. 8/255 (default 4/255)")
    p.add_argument("--max-queries", type=int, default=10_000)
    p.add_argument("--refresh", default="off", help="priority map refresh period, or 'off'")
    p.add_argument("--threat", choices=THREATS, default="bb")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--retries", type=int, default=2, help="HTTP retries per query")
    p.add_argument("--timeout", type=float, default=10.0, help="HTTP timeout in seconds")
    p.add_argument("--dump-priority", action="store_true", help="also write the priority order and saliency")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("oracle-compare", help="brute force vs converged greedy on a tiny image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", help="input image; default is a seeded random image")
    p.add_argument("--label", type=int, help="default: the model's prediction")
    p.add_argument("--eps", type=parse_real, default=8 / 255)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-passes", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("gen-model", help="write seeded model weights")
    p.add_argument("--arch", choices=("linear", "tinyconv"), required=True)
    p.add_argument("--task", choices=("random", "dominant-channel"), default="random")
    p.add_argument("--shape", type=parse_shape, default=(3, 16, 16))
    p.add_argument("--k", type=int, default=3, help="number of classes")
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--mask", choices=("center", "uniform"), default="center")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-sample", help="write a dominant-channel task image")
    p.add_argument("--shape", type=parse_shape, default=(3, 16, 16))
    p.add_argument("--mask", choices=("center", "uniform"), default="center")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_sample)

    p = sub.add_parser("metrics", help="aggregate result.json files")
    p.add_argument("results", nargs="+")
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("coverage-sim", help="coupon-collector expectation vs simulation")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_coverage_sim)

    p = sub.add_parser("serve", help="serve a weights file over the HTTP logits protocol")
    p.add_argument("--weights", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TransportError as exc:
        if isinstance(exc, ShapeMismatchError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (ConfigError, ImageFormatError, CapabilityError, InvalidModelError, OracleSizeError,
            ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
