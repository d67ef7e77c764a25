"""Distance of the collapsed configuration chain to the Kingman semigroup.

Prints norm-vs-N tables (fixed symmetric environment and the random coin
environment) together with the log-log slope; slope -1 is the 1/N rate.

    python scripts/moehle_convergence.py --n 3 --seeds 20
"""
import argparse

import numpy as np

from quenched_coalescent.config_chain import fixed_env_limit_check, random_env_limit_check
from quenched_coalescent.model import IslandStructure
from quenched_coalescent.scenarios import two_island_coin


def slope(Ns, norms):
    return float(np.polyfit(np.log(Ns), np.log(norms), 1)[0])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--N-list", default="100,200,400,800,1600")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    Ns = [int(x) for x in args.N_list.split(",")]
    half = (0.5, 0.5)

    fixed = [fixed_env_limit_check(np.full((2, 2), 0.5), half, args.n, N, args.t).norm
             for N in Ns]
    print("fixed symmetric environment")
    for N, v in zip(Ns, fixed):
        print(f"  N={N:>6}  norm={v:.4e}")
    print(f"  log-log slope {slope(Ns, fixed):.3f}")

    print(f"random coin environment (median over {args.seeds} seeds)")
    med = []
    for N in Ns:
        spec, st = two_island_coin(half, N), IslandStructure(half, N)
        checks = [random_env_limit_check(spec, st, args.n, N, args.t, args.seed, stream_id=i)
                  for i in range(args.seeds)]
        med.append(float(np.median([c.norm for c in checks])))
        c_mean = np.mean([c.c for c in checks])
        print(f"  N={N:>6}  median norm={med[-1]:.4e}  mean c_hat={c_mean:.4f}")
    print(f"  log-log slope {slope(Ns, med):.3f}")


if __name__ == "__main__":
    main()
