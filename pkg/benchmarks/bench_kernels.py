"""Compare the compiled kernel backend against the NumPy fallback.

Run:  python benchmarks/bench_kernels.py [--batch 128] [--repeats 5]

Times the four data-movement primitives on CNN-sized tensors and a full
forward+backward pass through the image reference net under each backend.
"""

import argparse
import os
import time

import numpy as np


def _time(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000


def bench_primitives(backend, batch, repeats):
    rng = np.random.default_rng(0)
    xp1 = rng.random((batch, 34, 34, 3)).astype(np.float32)
    xp2 = rng.random((batch, 18, 18, 32)).astype(np.float32)
    dcols = rng.standard_normal((batch, 16, 16, 3, 3, 32)).astype(np.float32)
    pool_in = rng.random((batch, 32, 32, 32)).astype(np.float32)
    _, idx = backend.maxpool2_forward(pool_in)
    dy = rng.standard_normal((batch, 16, 16, 32)).astype(np.float32)
    return {
        "im2col 3ch": _time(lambda: backend.im2col(xp1, 3, 3), repeats),
        "im2col 32ch": _time(lambda: backend.im2col(xp2, 3, 3), repeats),
        "col2im": _time(lambda: backend.col2im(dcols, 18, 18), repeats),
        "pool fwd": _time(lambda: backend.maxpool2_forward(pool_in), repeats),
        "pool bwd": _time(lambda: backend.maxpool2_backward(dy, idx, 32, 32), repeats),
    }


def bench_model(batch, repeats):
    import unlearnkit as uk
    from unlearnkit.models import CrossEntropyObjective, _backward, _forward

    state = uk.init_state(uk.make_cnn_s(10), 10, 0)
    rng = np.random.default_rng(1)
    x = rng.random((batch, 32, 32, 3)).astype(np.float32)
    obj = CrossEntropyObjective(rng.integers(0, 10, batch))

    def step():
        logits, caches, _ = _forward(state, x, np.float32)
        _backward(state, caches, obj.dlogits(logits).astype(np.float32))

    return _time(step, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    from unlearnkit._kernels import numpy_backend

    backends = [numpy_backend]
    try:
        from unlearnkit._kernels import _conv_ops

        backends.append(_conv_ops)
    except ImportError:
        print("compiled backend unavailable; benchmarking NumPy only")

    rows = {b.NAME: bench_primitives(b, args.batch, args.repeats) for b in backends}
    names = list(next(iter(rows.values())))
    width = max(len(n) for n in names) + 2
    header = "".join(f"{b.NAME:>12}" for b in backends)
    print(f"{'primitive':<{width}}{header}   (ms, batch={args.batch})")
    for name in names:
        cells = "".join(f"{rows[b.NAME][name]:>12.2f}" for b in backends)
        print(f"{name:<{width}}{cells}")

    print()
    for b in backends:
        os.environ["UNLEARNKIT_KERNELS"] = "numpy" if b.NAME == "numpy" else ""
        import importlib

        import unlearnkit._kernels as K

        importlib.reload(K)
        import unlearnkit.models

        importlib.reload(unlearnkit.models)
        ms = bench_model(args.batch, args.repeats)
        print(f"cnn_s forward+backward [{K.BACKEND:>6}]: {ms:8.2f} ms")


if __name__ == "__main__":
    main()
