"""Simulated annealing against exhaustive search on QBoost-style QUBOs, plus the lambda sweep.

Prints how often annealing reaches the exact optimum per pool size, then the number of
selected learners and the energy along a lambda grid for one pool.

    python3 scripts/qubo_solver_study.py --trials 50
"""

import argparse
import time

import numpy as np

from amlgraph.qboost import build_qubo, solve_brute_force, solve_simulated_annealing


def random_votes(rng, S, N, accuracy=0.6):
    y = np.where(rng.random(S) < 0.5, 1, -1)
    agree = rng.random((S, N)) < accuracy
    return np.where(agree, y[:, None], -y[:, None]), y


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--sizes", default="6,10,14,18,22")
    p.add_argument("--sweeps", type=int, default=2000)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    rng = np.random.default_rng(a.seed)

    print("N   exact  mean gap   brute s  anneal s")
    for N in (int(n) for n in a.sizes.split(",")):
        hits, gaps, t_bf, t_sa = 0, [], 0.0, 0.0
        for trial in range(a.trials):
            H, y = random_votes(rng, a.samples, N)
            q = build_qubo(H, y, float(rng.choice([0.0, 0.05, 0.1])) * a.samples / N ** 2)
            t0 = time.perf_counter()
            _, e_bf = solve_brute_force(q)
            t_bf += time.perf_counter() - t0
            t0 = time.perf_counter()
            _, e_sa = solve_simulated_annealing(q, a.sweeps, a.restarts, seed=trial)
            t_sa += time.perf_counter() - t0
            hits += abs(e_sa - e_bf) <= 1e-9
            gaps.append(e_sa - e_bf)
        print(f"{N:<3} {hits:>3}/{a.trials}  {np.mean(gaps):9.2e}  {t_bf / a.trials:8.4f}  {t_sa / a.trials:8.4f}")

    N = 16
    H, y = random_votes(rng, a.samples, N)
    print(f"\nlambda sweep, N={N}, S={a.samples} (lambda in units of S/N^2)")
    for g in (0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0):
        w, e = solve_brute_force(build_qubo(H, y, g * a.samples / N ** 2))
        print(f"  {g:5.2f}: {int(w.sum()):2d} selected, energy {e:.2f}")


if __name__ == "__main__":
    main()
