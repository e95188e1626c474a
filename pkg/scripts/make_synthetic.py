"""Write a synthetic dataset in the Elliptic csv layout.

    python3 scripts/make_synthetic.py data/synthetic --steps 49 --nodes-per-step 200
"""

import argparse

from amlgraph.synthetic import make_synthetic_elliptic


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out_dir")
    p.add_argument("--steps", type=int, default=49)
    p.add_argument("--nodes-per-step", type=int, default=200)
    p.add_argument("--illicit-rate", type=float, default=0.1)
    p.add_argument("--unknown-rate", type=float, default=0.7)
    p.add_argument("--shift", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    out = make_synthetic_elliptic(a.out_dir, n_steps=a.steps, nodes_per_step=a.nodes_per_step,
                                  illicit_rate=a.illicit_rate, unknown_rate=a.unknown_rate, shift=a.shift,
                                  seed=a.seed)
    print(out)


if __name__ == "__main__":
    main()
