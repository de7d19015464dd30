"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from lpnkit.blocks import BottleneckSpec, analytic_params
from lpnkit.cli import main
from lpnkit.gradsuite import format_table, run_suite
from lpnkit.network import PUBLISHED, NetworkSpec, build_network, compare_table
from lpnkit.posecodec import (argmax_decode, beta_soft_argmax, coco_flip_pairs, flip_test, mirror_keypoints,
                              render_gaussian)
from lpnkit.sched_train import build_tiny_lpn, make_toy_dataset, mse_evaluator, run_strategy, train_steps
from lpnkit.tensor_core import ConvParams, available_backends, conv2d, conv_transpose2d, use_backend
from oracles import conv2d_naive, conv_transpose2d_naive, rel_err

GOLDEN = Path(__file__).parent / "golden"


def test_criterion_01_lpn_cost_table(acceptance):
    t0 = time.perf_counter()
    specs = [NetworkSpec("lpn", d, gc) for d in (50, 101, 152) for gc in (False, True)]
    table = compare_table(specs)
    elapsed = time.perf_counter() - t0
    devs = [r.deviation() for r in table.rows]
    ok_p = all(abs(dp) <= 0.05 for dp, _ in devs)
    ok_f = all(abs(df) <= 0.03 for _, df in devs)
    gaps = [r.model for r, (dp, df) in zip(table.rows, devs) if abs(dp) > 0.01 or abs(df) > 0.005]
    explained = all(any(n.startswith(f"note: {m} ") for n in table.notes()) for m in gaps)
    worst_p = max(abs(dp) for dp, _ in devs)
    worst_f = max(abs(df) for _, df in devs)
    passed = ok_p and ok_f and elapsed < 1.0 and explained
    acceptance(1, passed, f"6 LPN rows; worst params dev {worst_p:.2%} (<=5%), worst FLOPs dev {worst_f:.3%} "
                          f"(<=3%); {elapsed:.2f}s; gaps explained for {gaps or 'none'}")
    assert passed, table.to_text()


def test_criterion_02_baseline_and_ratios(acceptance):
    table = compare_table([NetworkSpec("simple_baseline", 50, False), NetworkSpec("lpn", 50, False),
                           NetworkSpec("lpn", 50, True)])
    sb, lpn, lpn_gc = table.rows
    dp, df = sb.deviation()
    rp = max(lpn.params, lpn_gc.params) / sb.params
    rf = max(lpn.flops, lpn_gc.flops) / sb.flops
    passed = abs(dp) <= 0.05 and abs(df) <= 0.05 and rp <= 0.11 and rf <= 0.13
    acceptance(2, passed, f"SimpleBaseline-50 {sb.params_m:.2f}M / {sb.flops_g:.3f}G (dev {dp:+.2%} / {df:+.2%}); "
                          f"LPN-50 / SimpleBaseline-50 ratios params {rp:.3f} (<=0.11), FLOPs {rf:.3f} (<=0.13)")
    assert passed


@pytest.mark.xfail(strict=True, reason="at M = 512 the gap to 2/17 is 9/(17*512) = 1.034e-3, above 1e-3; "
                                       "the bound holds from M = 530")
def test_criterion_03_block_formulas(acceptance):
    exact = all(analytic_params(BottleneckSpec(m, "standard")) == 17 * m * m
                and analytic_params(BottleneckSpec(m, "lightweight")) == 2 * m * m + 9 * m
                for m in (64, 128, 256, 512))

    def gap(m):
        return abs(analytic_params(BottleneckSpec(m, "lightweight")) / analytic_params(BottleneckSpec(m, "standard"))
                   - 2 / 17)

    ms = [512, 1024, 2048, 4096]
    converge = all(gap(m) <= 1e-3 for m in ms)
    passed = exact and converge
    acceptance(3, passed, f"closed forms exact for M in 64..512: {exact}; ratio gap to 2/17 at M=512 is "
                          f"{gap(512):.4e} (bound 1e-3, first met at M=530, gap {gap(530):.4e}); "
                          f"M=1024 gap {gap(1024):.4e}")
    assert passed


@pytest.mark.xfail(strict=True, reason="on peak-1 sigma=2 targets beta=160 is already argmax-like; the "
                                       "error minimum sits near beta=20")
def test_criterion_04_decoder_accuracy(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    centers = np.c_[rng.uniform(0, 47, 1000), rng.uniform(0, 63, 1000)]
    maps = np.stack([render_gaussian(c, 2.0, (64, 48)).heatmap for c in centers])

    def mean_err(xy):
        return float(np.mean(np.hypot(*(xy - centers).T)))

    err_arg = mean_err(argmax_decode(maps).xy)
    errs = {b: mean_err(beta_soft_argmax(maps, b).xy) for b in (20, 80, 160, 200)}
    elapsed = time.perf_counter() - t0
    conds = {"err(160) < err(argmax)": errs[160] < err_arg,
             "err(20) > err(160)": errs[20] > errs[160],
             "err(160) < 0.1 px": errs[160] < 0.1,
             "under 5 s": elapsed < 5}
    passed = all(conds.values())
    failed = [k for k, v in conds.items() if not v]
    acceptance(4, passed, f"mean px error argmax {err_arg:.3f}, beta=20 {errs[20]:.3f}, 80 {errs[80]:.3f}, "
                          f"160 {errs[160]:.3f}, 200 {errs[200]:.3f}; {elapsed:.2f}s; "
                          f"unmet: {failed or 'none'}")
    # the one ordering the literal formula does satisfy must keep holding
    assert conds["err(160) < err(argmax)"] and conds["under 5 s"]
    assert passed


def test_criterion_05_gradient_suite(acceptance):
    t0 = time.perf_counter()
    names = ["conv2d", "conv2d_grouped", "conv2d_depthwise", "conv_transpose2d", "conv_transpose2d_grouped",
             "batch_norm_train", "gc_block", "lightweight_bottleneck", "mse_loss"]
    results = run_suite(names)
    elapsed = time.perf_counter() - t0
    worst = max(r.report.max_error for r in results)
    passed = all(r.passed for r in results) and elapsed < 30
    acceptance(5, passed, f"{sum(r.passed for r in results)}/{len(results)} ops pass, worst rel err {worst:.2e} "
                          f"(<=1e-5, float64); {elapsed:.2f}s")
    assert passed, format_table(results)


def test_criterion_06_kernel_oracles(acceptance):
    rng = np.random.default_rng(99)
    cases = 0
    worst = {}
    for backend in available_backends():
        worst[backend] = 0.0
        with use_backend(backend):
            for i in range(60):
                groups = int(rng.choice([1, 2, 4]))
                depthwise = i % 4 == 0
                cin = 4 if depthwise else groups * int(rng.integers(1, 4))
                cout = cin if depthwise else groups * int(rng.integers(1, 4))
                groups = cin if depthwise else groups
                k = int(rng.integers(1, 5))
                s = int(rng.integers(1, 3))
                pad = int(rng.integers(0, k))
                x = rng.standard_normal((int(rng.integers(1, 3)), cin, int(rng.integers(k, 9)),
                                         int(rng.integers(k, 9))))
                w = rng.standard_normal((cout, cin // groups, k, k))
                b = rng.standard_normal(cout)
                e1 = rel_err(conv2d(x, ConvParams(w, b, s, pad, groups)), conv2d_naive(x, w, b, (s, s), (pad, pad), groups))
                wt = rng.standard_normal((cin, cout // groups, k, k))
                op = int(rng.integers(0, s))
                if (x.shape[2] - 1) * s - 2 * pad + k + op > 0 and (x.shape[3] - 1) * s - 2 * pad + k + op > 0:
                    got = conv_transpose2d(x, ConvParams(wt, b, s, pad, groups), op)
                    e2 = rel_err(got, conv_transpose2d_naive(x, wt, b, (s, s), (pad, pad), (op, op), groups))
                else:
                    e2 = 0.0
                worst[backend] = max(worst[backend], e1, e2)
                cases += 1
    passed = cases >= 50 and all(v <= 1e-6 for v in worst.values())
    detail = ", ".join(f"{b} {v:.1e}" for b, v in worst.items())
    acceptance(6, passed, f"{cases // len(worst)} random shapes per backend (dense, grouped, depthwise; conv and "
                          "transposed); "
                          f"worst rel err {detail} (<=1e-6)")
    assert passed


def test_criterion_07_schedule_golden(acceptance, capsys):
    code = main(["schedule", "--stages", "7"])
    out = capsys.readouterr().out
    golden = (GOLDEN / "schedule_7.csv").read_bytes()
    rows = out.splitlines()[1:]
    expect = [f"{s},{e},{'1e-05' if e >= 120 else '0.0001' if e >= 90 else '0.001'}"
              for s in range(7) for e in range(0 if s == 0 else 60, 150)]
    passed = code == 0 and len(rows) == 690 and rows == expect and out.encode() == golden
    acceptance(7, passed, f"{len(rows)} rows; matches hand enumeration: {rows == expect}; "
                          f"byte-identical to golden: {out.encode() == golden}")
    assert passed


def test_criterion_08_toy_training(acceptance):
    data = make_toy_dataset(256, seed=0)
    losses = train_steps(build_tiny_lpn(0), data, 300)
    ratio = float(np.mean(losses[-10:]) / losses[0])
    strat = make_toy_dataset(192, seed=1)
    train, val = strat.split(64)
    report = run_strategy(build_tiny_lpn(0), train, evaluator=mse_evaluator(val), seed=0)
    s0, final = report.stages[0].best_metric, report.final_metric
    passed = ratio < 0.2 and final >= s0
    acceptance(8, passed, f"300 steps: loss {losses[0]:.4f} -> {np.mean(losses[-10:]):.4f} "
                          f"({ratio:.1%} of initial, need <20%); 3-stage best val -MSE "
                          + " -> ".join(f"{s.best_metric:.5f}" for s in report.stages) + f" (final >= stage 0: {final >= s0})")
    assert passed


def test_criterion_09_shapes_and_flip_symmetry(acceptance):
    shapes_ok = True
    x = np.random.default_rng(0).standard_normal((1, 3, 256, 192)).astype(np.float32)
    checked = []
    for family, gcs in (("lpn", (False, True)), ("simple_baseline", (False,))):
        for depth in (50, 101, 152):
            for gc in gcs:
                net = build_network(NetworkSpec(family, depth, gc), np.random.default_rng(depth)).eval()
                out = net.predict(x)
                shapes_ok &= out.shape == (1, 17, 64, 48)
                checked.append(net.spec.name)
    net = build_network(NetworkSpec("lpn", 50, True), np.random.default_rng(1), init_std=0.05).eval()
    pairs = coco_flip_pairs()
    img = np.random.default_rng(5).random((1, 3, 256, 192)).astype(np.float32)
    direct = beta_soft_argmax(flip_test(net.predict, img, pairs))
    mirrored = beta_soft_argmax(flip_test(net.predict, img[..., ::-1], pairs))
    expect = mirror_keypoints(direct, 48, pairs)
    err = float(np.abs(mirrored.xy - expect.xy).max())
    passed = shapes_ok and err <= 1e-4
    acceptance(9, passed, f"(1,3,256,192) -> (1,17,64,48) for {len(checked)} networks: {shapes_ok}; "
                          f"flip-averaged decode of mirrored input vs mirrored decode: {err:.2e} px (<=1e-4)")
    assert passed


def test_criterion_10_bench(acceptance, capsys):
    code = main(["bench", "--family", "lpn", "--depth", "50", "--gc", "--iters", "5", "--warmup", "1"])
    lines = capsys.readouterr().out.splitlines()
    recs = [json.loads(l) for l in lines]
    fields = {"model", "input_size", "flip", "fps", "ms_per_image"}
    main(["bench", "--family", "lpn", "--depth", "152", "--gc", "--iters", "2", "--warmup", "1", "--flip", "off"])
    fps152 = json.loads(capsys.readouterr().out)["fps"]
    passed = code == 0 and all(fields <= set(r) for r in recs) and [r["forward_passes_per_image"] for r in recs] == [1, 2]
    by_flip = {r["flip"]: r for r in recs}
    acceptance(10, passed, f"LPN-50+GC batch 1 at 256x192 on {recs[0]['backend']} backend, 1 thread: "
                           f"{by_flip[False]['fps']:.1f} FPS ({by_flip[False]['ms_per_image']:.1f} ms), flip test "
                           f"{by_flip[True]['fps']:.1f} FPS; LPN-152+GC {fps152:.1f} FPS; reference figure 17 FPS "
                           "(desktop CPU) recorded as context only")
    assert passed
