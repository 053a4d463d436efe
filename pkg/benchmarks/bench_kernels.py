"""Time the numba kernels against their numpy reference implementations.

    python benchmarks/bench_kernels.py [--n 10] [--repeat 5]

Each kernel is called once to warm up (JIT compilation happens there) and
then timed with best-of-``repeat``. Results are checked for agreement
before timing.
"""
import argparse
import time

import numpy as np

from otoclab.kernels import BACKENDS


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=10, help="sites; matrices are 2^n x 2^n")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--betas", type=int, default=3, help="weight vectors per reduction")
    args = ap.parse_args()

    if "numba" not in BACKENDS:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    n, d = args.n, 1 << args.n
    j = rng.normal(size=(n, n))
    j = j + j.T
    np.fill_diagonal(j, 0.0)
    energies = np.sort(rng.normal(size=d))
    op = rng.normal(size=(d, d))
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    b = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    p = rng.random((args.betas, d))
    q = rng.random((args.betas, d))

    cases = {
        "ising_diagonal": (j, n),
        "dress_real": (op, energies, 0.7),
        "dress_complex": (a, energies, 0.7),
        "pair_trace": (a, b, p, q),
        "hermitian_reductions": (a.real.copy(), a.imag.copy(), p, q),
    }
    print(f"D = {d}, best of {args.repeat}")
    print(f"{'kernel':<22} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for name, call_args in cases.items():
        ref = getattr(BACKENDS["numpy"], name)
        fast = getattr(BACKENDS["numba"], name)
        got, want = fast(*call_args), ref(*call_args)
        if isinstance(got, np.ndarray):
            got, want = (got,), (want,)
        for x, y in zip(got, want):
            assert np.allclose(x, y, rtol=1e-9, atol=1e-9), name
        t_np = best_of(ref, call_args, args.repeat)
        t_nb = best_of(fast, call_args, args.repeat)
        print(f"{name:<22} {t_np * 1e3:11.3f} {t_nb * 1e3:11.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
