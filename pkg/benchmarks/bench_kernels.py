"""Compare the compiled and the numpy symbolic bound pass.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both kernels run on the same composed networks and boxes; the script checks
that they agree and prints the mean time per pass.
"""
import argparse
import time

import numpy as np

from occver import fixtures
from occver.occlusion import Multiform, OcclusionSpec, Uniform
from occver.onn import PositionRegion, build_onn, compose, input_box
from occver.verifier import _reference, backend
from occver.verifier.bounds import split_weights


def cases():
    f = fixtures.network("desk_shapes")
    x = fixtures.image("shape_0")
    for label, spec in (("uniform 2x2 int", OcclusionSpec(2, 2, Uniform(0.0))),
                        ("uniform 5x5 real", OcclusionSpec(5, 5, Uniform(0.0), "real")),
                        ("multiform 5x5 eps=0.1", OcclusionSpec(5, 5, Multiform(0.1)))):
        bundle = build_onn(x, spec)
        net = compose(bundle, f)
        yield label, net, input_box(bundle, PositionRegion.full(x.m, x.n))


def timed(fn, args, repeat):
    fn(*args)
    start = time.perf_counter()
    for _ in range(repeat):
        out = fn(*args)
    return (time.perf_counter() - start) / repeat, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    opts = ap.parse_args()
    if backend.BACKEND != "compiled":
        print("compiled kernel not available; rebuild with `pip install -e . --no-build-isolation`")
        return
    compiled = backend.KERNELS["compiled"]
    print(f"{'case':<24}{'relus':>7}{'free':>6}{'numpy ms':>11}{'compiled ms':>13}{'speedup':>9}")
    for label, net, box in cases():
        wpos, wneg, biases = split_weights(net)
        free = np.flatnonzero(box.hi > box.lo).astype(np.intp)
        args = (wpos, wneg, biases, box.lo, box.hi, free)
        t_ref, r_ref = timed(_reference.symbolic_pass, args, opts.repeat)
        t_cmp, r_cmp = timed(compiled, args, opts.repeat)
        assert np.allclose(r_ref[2], r_cmp[2]) and np.allclose(r_ref[3], r_cmp[3])
        print(f"{label:<24}{net.num_relus:>7}{free.size:>6}{1e3 * t_ref:>11.3f}"
              f"{1e3 * t_cmp:>13.3f}{t_ref / t_cmp:>8.1f}x")


if __name__ == "__main__":
    main()
