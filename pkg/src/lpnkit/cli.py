"""``lpnkit`` command line: analyze, bench, decode, gradcheck, schedule, train-toy.

Exit codes: 0 success, 1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import LpnError, ScheduleError, SpecError

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _floats(n):
    def parse(text):
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            vals = ()
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals
    return parse


def _emit(text: str, out=None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- analyze

PRESETS = {
    "table3": [("lpn", d, gc) for d in (50, 101, 152) for gc in (False, True)],
    "table1": [("simple_baseline", d, False) for d in (50, 101, 152)] + [("lpn", d, True) for d in (50, 101, 152)],
}
PRESETS["all"] = PRESETS["table3"] + PRESETS["table1"][:3]


def _network_specs(args):
    from .network import NetworkSpec, load_spec

    specs = []
    size = tuple(args.input_size)
    for name in args.preset or ():
        specs += [NetworkSpec(family=f, depth=d, use_gc=gc, input_size=size) for f, d, gc in PRESETS[name]]
    for path in args.config or ():
        try:
            specs.append(load_spec(path))
        except OSError as exc:
            raise SpecError(f"cannot read config {path}: {exc}") from None
    if args.family is not None or args.depth is not None:
        family = args.family or "lpn"
        use_gc = args.gc if args.gc is not None else family == "lpn"
        specs.append(NetworkSpec(family=family, depth=args.depth or 50, use_gc=use_gc, input_size=size))
    return specs


def _add_network_flags(p):
    p.add_argument("--family", choices=["lpn", "simple_baseline"])
    p.add_argument("--depth", type=int, choices=[50, 101, 152])
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gc", dest="gc", action="store_true", default=None, help="add GC blocks (LPN default)")
    g.add_argument("--no-gc", dest="gc", action="store_false")
    p.add_argument("--config", action="append", metavar="JSON", help="network config file (repeatable)")
    p.add_argument("--input-size", type=_size, default=(256, 192), metavar="HxW")


def cmd_analyze(args) -> int:
    from .network import compare_table

    table = compare_table(_network_specs(args))
    sys.stdout.write(table.to_text())
    if args.out:
        Path(args.out).write_text(table.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------- bench

class CountingModel:
    """Forwards to ``predict`` and counts the calls."""

    def __init__(self, model):
        self.model = model
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.model.predict(x)


def bench_model(model, input_size, flip: bool, warmup: int, iters: int, flip_pairs, seed=0) -> dict:
    from .posecodec import flip_test

    counter = CountingModel(model)
    x = np.random.default_rng(seed).standard_normal((1, 3, *input_size)).astype(np.float32)

    def once():
        return flip_test(counter, x, flip_pairs) if flip else counter(x)

    for _ in range(warmup):
        once()
    counter.calls = 0
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        once()
        times.append(time.perf_counter() - t0)
    mean = statistics.fmean(times)
    return {"model": model.spec.name, "input_size": list(input_size), "flip": flip,
            "fps": 1.0 / mean, "ms_per_image": 1e3 * mean, "median_ms": 1e3 * statistics.median(times),
            "forward_passes_per_image": counter.calls / iters}


def cmd_bench(args) -> int:
    from .network import NetworkSpec, build_network
    from .posecodec import coco_flip_pairs
    from .tensor_core import available_backends, get_backend, use_backend
    from .weights import load_weights

    specs = _network_specs(args) or [NetworkSpec(input_size=tuple(args.input_size))]
    if args.backend and args.backend not in available_backends():
        raise UsageError(f"backend {args.backend!r} not available; have {available_backends()}")
    modes = {"on": [True], "off": [False], "both": [False, True]}[args.flip]
    results = []
    backend = args.backend or get_backend()
    with use_backend(backend):
        for spec in specs:
            model = build_network(spec, np.random.default_rng(args.seed)).eval()
            if args.weights:
                load_weights(model, args.weights)
            pairs = coco_flip_pairs() if spec.num_joints == 17 else []
            for flip in modes:
                res = bench_model(model, spec.input_size, flip, args.warmup, args.iters, pairs, args.seed)
                res["backend"] = backend
                res["threads"] = args.threads
                results.append(res)
                print(json.dumps(res), flush=True)
    if args.out:
        Path(args.out).write_text("".join(json.dumps(r) + "\n" for r in results))
    return EXIT_OK


# ---------------------------------------------------------------- decode

def cmd_decode(args) -> int:
    from .posecodec import box_from_center, box_to_input, decode, flip_average, load_flip_pairs, to_image
    from .tensor_core import lpt

    h = lpt.load(args.input)
    if h.ndim == 3:
        h = h[None]
    if h.ndim != 4:
        raise UsageError(f"expected a (n, K, h, w) heatmap tensor, got shape {h.shape}")
    if args.flip_pairs:
        if h.shape[0] != 2:
            raise UsageError("--flip-pairs needs two heatmap sets: the original and the flipped prediction")
        h = flip_average(h[:1], h[1:], load_flip_pairs(args.flip_pairs))
    transform = box_to_input(box_from_center(*args.box), output_size=(4 * h.shape[2], 4 * h.shape[3])) \
        if args.box else None
    lines = []
    for sample in range(h.shape[0]):
        kps = decode(h[sample], args.mode, args.beta, args.quarter_offset)
        if transform is not None:
            kps = to_image(kps, transform)
        for rec in kps.records():
            if h.shape[0] > 1:
                rec["sample"] = sample
            lines.append(json.dumps(rec))
    _emit("".join(line + "\n" for line in lines), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args) -> int:
    from .gradsuite import CASES, format_table, run_suite

    names = args.ops or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown ops {unknown}; choose from {list(CASES)}")
    results = run_suite(names, args.seed, args.eps, args.threshold)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed (threshold {args.threshold:g})")
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------- schedule / train-toy

def _schedule(args, **defaults):
    from .sched_train import IterativeSchedule

    kw = dict(defaults)
    for key in ("base_lr", "gamma", "stage_end_epoch", "restart_epoch"):
        if getattr(args, key) is not None:
            kw[key] = getattr(args, key)
    if args.milestones is not None:
        kw["milestones"] = tuple(int(m) for m in args.milestones.split(","))
    kw["num_stages"] = args.stages
    return IterativeSchedule(**kw)


def _add_schedule_flags(p, stages):
    p.add_argument("--stages", type=int, default=stages)
    p.add_argument("--base-lr", type=float)
    p.add_argument("--milestones", help="comma-separated epochs")
    p.add_argument("--gamma", type=float)
    p.add_argument("--stage-end-epoch", type=int)
    p.add_argument("--restart-epoch", type=int)


def cmd_schedule(args) -> int:
    _emit(_schedule(args).trace_csv(), args.out)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from dataclasses import replace

    from .sched_train import (TOY_CONFIG, TOY_SCHEDULE, build_tiny_lpn, make_toy_dataset, mse_evaluator,
                              run_strategy)

    base = {k: getattr(TOY_SCHEDULE, k) for k in ("base_lr", "milestones", "gamma", "stage_end_epoch",
                                                  "restart_epoch")}
    schedule = _schedule(args, **base)
    config = replace(TOY_CONFIG, sigma=args.sigma, augment=args.augment)
    data = make_toy_dataset(args.samples + args.val, seed=args.seed, sigma=args.sigma)
    train, val = data.split(args.val)
    model = build_tiny_lpn(args.seed, config)
    out = Path(args.out)

    def progress(rec):
        if args.verbose:
            print(f"stage {rec.stage} epoch {rec.epoch:>3} lr {rec.lr:.0e} loss {rec.train_loss:.6f} "
                  f"val {rec.val_metric:.6f}", file=sys.stderr)

    report = run_strategy(model, train, schedule, config, mse_evaluator(val), args.seed, out, progress)
    (out / "train_log.csv").write_text(report.log_csv())
    print(report.to_text())
    print(f"checkpoints and train_log.csv written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lpnkit", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="parameter and FLOP table")
    _add_network_flags(a)
    a.add_argument("--preset", action="append", choices=sorted(PRESETS))
    a.add_argument("--out", help="write the table as CSV")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="batch-1 CPU inference throughput")
    _add_network_flags(b)
    b.add_argument("--flip", choices=["on", "off", "both"], default="both")
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--iters", type=int, default=10)
    b.add_argument("--backend", choices=["compiled", "python"])
    b.add_argument("--weights", help="LPNW1 weight file")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="write results as JSON lines")
    b.set_defaults(func=cmd_bench, preset=None)

    d = sub.add_parser("decode", help="heatmaps (LPT1) to keypoints (JSON lines)")
    d.add_argument("input")
    d.add_argument("--mode", choices=["argmax", "soft", "beta"], default="beta")
    d.add_argument("--beta", type=float, default=160.0)
    d.add_argument("--quarter-offset", action="store_true", help="argmax only: shift 0.25 px to the larger neighbour")
    d.add_argument("--flip-pairs", metavar="JSON", help="average sample 0 with the flipped prediction in sample 1")
    d.add_argument("--box", type=_floats(4), metavar="cx,cy,w,h", help="map keypoints back to the original image")
    d.add_argument("--out")
    d.set_defaults(func=cmd_decode)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--ops", nargs="*")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--threshold", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("schedule", help="dump the (stage, epoch, lr) trace as CSV")
    _add_schedule_flags(s, 7)
    s.add_argument("--out")
    s.set_defaults(func=cmd_schedule)

    t = sub.add_parser("train-toy", help="staged training of a tiny LPN on synthetic data")
    _add_schedule_flags(t, 3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--samples", type=int, default=128)
    t.add_argument("--val", type=int, default=64)
    t.add_argument("--sigma", type=float, default=2.0)
    t.add_argument("--augment", action="store_true")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    if args.threads < 1:
        print("lpnkit: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, SpecError, ScheduleError, ValueError, LpnError, OSError) as exc:
        print(f"lpnkit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
