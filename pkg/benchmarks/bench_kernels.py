#!/usr/bin/env python3
"""Times every hot kernel on both backends and prints a comparison table.

The compiled backend wins where fusing saves temporaries (optimizer steps,
sigmoid, the quadratic penalty); numpy wins the vectorized tanh and the
batched gemm paths since both backends sit on the same BLAS.  Run from the
repo root:

    python3 benchmarks/bench_kernels.py [--repeats N] [--large]
"""

import argparse
import time

import numpy as np

from clvqa import kernels


def best_of(fn, repeats):
    fn()  # warm up caches and lazy allocations
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(large):
    rng = np.random.default_rng(0)
    sizes = [(64, 128, 128), (256, 512, 512)]
    heads = [(256, 64, 500), (512, 256, 1500)]
    vecs = [100_000, 1_000_000]
    if large:
        sizes.append((512, 1224, 2048))
        heads.append((512, 512, 3000))
        vecs.append(4_000_000)

    out = []
    for b, din, dout in sizes:
        x = rng.normal(size=(b, din))
        w = rng.normal(size=(dout, din))
        bias = rng.normal(size=dout)
        z = rng.normal(size=(b, dout))
        a = np.tanh(z)
        da = rng.normal(size=(b, dout))
        shape = f"[{b}x{din}]->[{dout}]"
        out.append(("affine_forward", shape,
                    lambda k, x=x, w=w, bias=bias: k.affine_forward(x, w, bias)))
        out.append(("affine_backward", shape,
                    lambda k, x=x, w=w, dz=da: k.affine_backward(x, w, dz)))
        out.append(("act_forward tanh", f"[{b}x{dout}]",
                    lambda k, z=z: k.act_forward(z, kernels.TANH)))
        out.append(("act_backward tanh", f"[{b}x{dout}]",
                    lambda k, a=a, da=da: k.act_backward(a, da, kernels.TANH)))
        out.append(("sigmoid", f"[{b}x{dout}]",
                    lambda k, z=z: k.sigmoid(z)))
        t = rng.uniform(size=z.shape)
        out.append(("bce_soft", f"[{b}x{dout}]",
                    lambda k, z=z, t=t: k.bce_soft(z, t)))
    for b, h, c in heads:
        x = rng.normal(size=(b, h))
        w = rng.normal(size=(c, h))
        bias = rng.normal(size=c)
        out.append(("head_forward", f"[{b}x{h}]->[{c}]",
                    lambda k, x=x, w=w, bias=bias: k.head_forward(x, w, bias)))
    for n in vecs:
        g = rng.normal(size=n)
        anchor = rng.normal(size=n)
        fisher = rng.uniform(size=n)
        label = f"[{n:,}]"

        def adam(k, n=n, g=g):
            p = np.zeros(n)
            m = np.zeros(n)
            v = np.zeros(n)
            k.adam_step(p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8)

        def sgd(k, n=n, g=g):
            p = np.zeros(n)
            k.sgd_step(p, g, 1e-3)

        def ewc(k, g=g, anchor=anchor, fisher=fisher):
            out_g = np.zeros_like(g)
            k.ewc_penalty_grad(g, anchor, fisher, 1.0, out_g)

        out.append(("adam_step", label, adam))
        out.append(("sgd_step", label, sgd))
        out.append(("ewc_penalty_grad", label, ewc))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7,
                    help="timing repeats per case (best-of)")
    ap.add_argument("--large", action="store_true",
                    help="add reference-scale shapes")
    args = ap.parse_args()

    backends = {}
    for name in ("numpy", "compiled"):
        try:
            backends[name] = kernels.get_backend(name)
        except Exception as e:  # compiled module may not be built
            print(f"backend {name!r} unavailable: {e}")
    if "compiled" not in backends:
        print("nothing to compare; build the extension first "
              "(pip install -e . --no-build-isolation)")
        return

    rows = []
    for name, shape, call in cases(args.large):
        t = {bk: best_of(lambda b=b: call(b), args.repeats)
             for bk, b in backends.items()}
        rows.append((name, shape, t.get("numpy"), t["compiled"]))

    w_name = max(len(r[0]) for r in rows)
    w_shape = max(len(r[1]) for r in rows)
    print(f"{'kernel':<{w_name}}  {'shape':<{w_shape}}  "
          f"{'numpy':>10}  {'compiled':>10}  {'speedup':>8}")
    for name, shape, t_np, t_c in rows:
        ratio = t_np / t_c if t_np else float("nan")
        print(f"{name:<{w_name}}  {shape:<{w_shape}}  "
              f"{t_np * 1e6:>8.1f}us  {t_c * 1e6:>8.1f}us  "
              f"{ratio:>7.2f}x")


if __name__ == "__main__":
    main()
