"""Compare the compiled and pure-NumPy backends on the kernels LPN spends its time in.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

import argparse
import json
import time

import numpy as np
from threadpoolctl import threadpool_limits

from lpnkit.network import NetworkSpec, build_network
from lpnkit.tensor_core import ConvParams, available_backends, conv2d, conv_transpose2d, use_backend


def timeit(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return 1e3 * best


def cases(rng):
    f32 = np.float32
    # depthwise 3x3 at the three LPN stage resolutions
    for c, h, w in [(64, 64, 48), (128, 32, 24), (256, 16, 12)]:
        x = rng.standard_normal((1, c, h, w)).astype(f32)
        p = ConvParams(rng.standard_normal((c, 1, 3, 3)).astype(f32), None, 1, 1, c)
        yield f"depthwise3x3 c={c} {h}x{w}", lambda x=x, p=p: conv2d(x, p)
    # group deconvolutions of the upsampling head
    for cin, h, w in [(512, 8, 6), (256, 16, 12)]:
        x = rng.standard_normal((1, cin, h, w)).astype(f32)
        g = np.gcd(cin, 256)
        p = ConvParams(rng.standard_normal((cin, 256 // g, 4, 4)).astype(f32), None, 2, 1, g)
        yield f"group deconv {cin}->256 {h}x{w}", lambda x=x, p=p: conv_transpose2d(x, p)
    net = build_network(NetworkSpec(), rng).eval()
    img = rng.standard_normal((1, 3, 256, 192)).astype(f32)
    yield "LPN-50+GC forward 256x192", lambda: net.predict(img)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--json")
    args = ap.parse_args()
    backends = available_backends()
    rows = []
    with threadpool_limits(1):
        for name, fn in cases(np.random.default_rng(0)):
            row = {"case": name}
            for b in backends:
                with use_backend(b):
                    row[b] = timeit(fn, args.repeat)
            rows.append(row)
    print(f"{'case':<32}" + "".join(f"{b + ' ms':>14}" for b in backends) + (f"{'speedup':>10}" if len(backends) > 1 else ""))
    for row in rows:
        line = f"{row['case']:<32}" + "".join(f"{row[b]:>14.3f}" for b in backends)
        if "compiled" in row:
            line += f"{row['python'] / row['compiled']:>9.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
