"""Benchmark the compiled coordinate-descent kernel against the fallback.

Run as ``python -m pdml.solver.bench``. Times warm- and cold-start solves
at sweep-representative sizes, checks that the two backends agree, and
prints a speedup table.
"""

from __future__ import annotations

import time

import numpy as np

from pdml.solver import HAS_COMPILED, cd_solve_numpy

if HAS_COMPILED:
    from pdml.solver._cd_fast import cd_solve as cd_solve_fast
else:  # pragma: no cover
    cd_solve_fast = None


def _problem(n: int, p: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: max(1, p // 10)] = rng.uniform(0.5, 2.0, size=max(1, p // 10))
    y = x @ beta + rng.standard_normal(n)
    gram = np.ascontiguousarray(x.T @ x / n)
    linear = x.T @ y / n
    lam = 0.2 * np.abs(linear).max()
    return gram, linear, lam


def _time_backend(solver, gram, linear, lam, repeats: int) -> tuple[float, np.ndarray]:
    best = np.inf
    coef = np.zeros_like(linear)
    for _ in range(repeats):
        coef = np.zeros_like(linear)
        t0 = time.perf_counter()
        solver(gram, linear, lam, coef, 1e-7, 100_000)
        best = min(best, time.perf_counter() - t0)
    return best, coef


def run(sizes=((200, 100), (400, 500), (800, 1000)), repeats: int = 3) -> list[dict]:
    rows = []
    for n, p in sizes:
        gram, linear, lam = _problem(n, p, seed=n + p)
        t_np, c_np = _time_backend(cd_solve_numpy, gram, linear, lam, repeats)
        row = {"n": n, "p": p, "numpy_ms": t_np * 1e3}
        if cd_solve_fast is not None:
            t_c, c_c = _time_backend(cd_solve_fast, gram, linear, lam, repeats)
            agreement = float(np.max(np.abs(c_np - c_c)))
            row.update({"compiled_ms": t_c * 1e3, "speedup": t_np / t_c, "linf_diff": agreement})
            if agreement > 1e-8:
                raise AssertionError(f"backends disagree by {agreement:.3e} at n={n}, p={p}")
        rows.append(row)
    return rows


def main() -> None:
    print(f"compiled kernel available: {HAS_COMPILED}")
    rows = run()
    header = f"{'n':>6} {'p':>6} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8} {'linf diff':>10}"
    print(header)
    print("-" * len(header))
    for r in rows:
        if "compiled_ms" in r:
            print(f"{r['n']:>6} {r['p']:>6} {r['numpy_ms']:>10.2f} {r['compiled_ms']:>12.2f} "
                  f"{r['speedup']:>8.1f} {r['linf_diff']:>10.2e}")
        else:
            print(f"{r['n']:>6} {r['p']:>6} {r['numpy_ms']:>10.2f} {'-':>12} {'-':>8} {'-':>10}")


if __name__ == "__main__":
    main()
