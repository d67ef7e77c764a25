"""Scaled level times of simulated genealogies against Kingman expectations.

    python scripts/genealogy_vs_kingman.py --scenario coin --N 2000 --n 5 --reps 50000
"""
import argparse

from quenched_coalescent.ancestry import simulate_tree
from quenched_coalescent.model import IslandStructure
from quenched_coalescent.scenarios import build, closed_forms, normalize_name


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="coin")
    p.add_argument("--a", default="0.5,0.5")
    p.add_argument("--N", type=int, default=2000)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--reps", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args(argv)
    name = normalize_name(args.scenario)
    a = tuple(float(x) for x in args.a.split(","))
    c = closed_forms(name, a)["c_q"][0]
    summ = simulate_tree(build(name, a, args.N), IslandStructure(a, args.N), args.seed, args.n,
                         args.reps, c_reference=c, workers=args.workers)
    print(f"{name}, a={a}, N={args.N}, c_q={c:.4f}")
    print(" k   c*E[T_k]/N   Kingman   ratio")
    for k in range(args.n, 1, -1):
        s, km = summ.scaled_means[k], summ.kingman_means[k]
        print(f"{k:>2}   {s:10.4f}  {km:8.4f}  {s / km:6.3f}")
    print(f"KS(T2 vs exponential limit) = {summ.ks_T2:.4f}; "
          f"multi-merger fraction = {summ.multi_merger_fraction:.2e}; capped = {summ.capped}")


if __name__ == "__main__":
    main()
