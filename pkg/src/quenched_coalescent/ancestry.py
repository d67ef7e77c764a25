"""Backward-in-time genealogy of sampled lineages.

Each generation every lineage on island ``i`` picks a source island ``j``
with probability ``B(N)[i, j]`` and then a parent uniformly among the
individuals of island ``j``.  Lineages that pick the same parent merge.  No
forward population is stored; parents are drawn lazily.

Replicates are simulated in fixed-size chunks, each on its own random
stream ``(seed, chunk index)``, so results do not depend on the number of
worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import rng as _rng
from .ergodics import DEFAULT_MAX_STEPS, DEFAULT_TOL, NonConvergenceError
from .model import (
    EnvironmentBatch,
    EnvironmentSpec,
    IslandStructure,
    block_sizes,
    validate,
)

CHUNK = 32768
POLICIES = ("stationary", "fixed", "uniform")


@dataclass(frozen=True)
class LineageSet:
    """Lineages as ``(island, parent id within the island block)`` pairs.

    Islands are 0-based; parent ids are 1-based positions inside the block,
    ``None`` before the first step.
    """

    entries: tuple[tuple[int, int | None], ...]
    generation: int = 0

    @classmethod
    def on_islands(cls, islands: Sequence[int]) -> "LineageSet":
        return cls(tuple((int(i), None) for i in islands), 0)

    @property
    def islands(self) -> list[int]:
        return [i for i, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def step_back(lineages: LineageSet, B1N: np.ndarray, structure: IslandStructure,
              rng: np.random.Generator) -> tuple[LineageSet, list[int]]:
    """Advance one generation into the past.

    Returns the surviving lineages and the multiplicity (>= 2) of every
    merger that occurred.
    """
    sizes = block_sizes(structure)
    B1N = np.asarray(B1N, dtype=float)
    groups: dict[tuple[int, int], int] = {}
    for island, _ in lineages.entries:
        j = int(rng.choice(len(sizes), p=B1N[island]))
        parent = int(rng.integers(sizes[j])) + 1
        groups[(j, parent)] = groups.get((j, parent), 0) + 1
    merges = [m for m in groups.values() if m >= 2]
    return LineageSet(tuple(groups), lineages.generation + 1), merges


@dataclass
class CoalescenceSample:
    """Per-replicate level times.

    ``level_times[r, k]`` is the number of generations replicate ``r`` spent
    with exactly ``k`` lineages (columns 0 and 1 unused).
    """

    level_times: np.ndarray
    capped: np.ndarray
    multi_merger_count: int
    merger_steps: int
    n: int
    N: int
    seed: int

    @property
    def t2_samples(self) -> np.ndarray:
        return self.level_times[~self.capped, 2]

    @property
    def tree_times(self) -> np.ndarray:
        """Columns ``T_n, ..., T_2`` for uncapped replicates."""
        return self.level_times[~self.capped][:, self.n:1:-1]

    @property
    def heights(self) -> np.ndarray:
        return self.level_times[~self.capped].sum(axis=1)

    @property
    def multi_merger_fraction(self) -> float:
        """Share of coalescence generations with more than one pairwise merger."""
        return self.multi_merger_count / self.merger_steps if self.merger_steps else 0.0

    def to_csv(self, header_lines: Sequence[str] = ()) -> str:
        cols = ["replicate", "capped"] + [f"T{k}" for k in range(self.n, 1, -1)]
        lines = [f"# {h}" for h in header_lines]
        lines.append(",".join(cols))
        for r in range(self.level_times.shape[0]):
            vals = [str(r), str(int(self.capped[r]))]
            vals += [str(int(self.level_times[r, k])) for k in range(self.n, 1, -1)]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# vectorized engine


def _stationary_islands(spec: EnvironmentSpec, gen: np.random.Generator, reps: int, n: int,
                        tol: float, max_steps: int) -> np.ndarray:
    mats = spec.stacked()
    L = mats.shape[1]
    env = EnvironmentBatch(spec, gen, reps, reverse=True)
    R = np.broadcast_to(np.eye(L), (reps, L, L)).copy()
    for _ in range(max_steps):
        R = mats[env.step()] @ R
        lo, hi = R.min(axis=1), R.max(axis=1)
        if np.max(hi - lo) <= tol:
            break
    else:
        raise NonConvergenceError(
            f"stationary start: backward products not flat after {max_steps} steps")
    gamma = 0.5 * (lo + hi)
    cdf = np.cumsum(gamma / gamma.sum(axis=1, keepdims=True), axis=1)
    cdf[:, -1] = 1.0
    u = gen.random((reps, n))
    return (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)


def _uniform_islands(structure: IslandStructure, gen: np.random.Generator, reps: int,
                     n: int) -> np.ndarray:
    N = structure.N
    if n > N:
        raise ValueError("cannot sample more individuals than N")
    ids = gen.integers(N, size=(reps, n))
    while True:
        s = np.sort(ids, axis=1)
        bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
        if not bad.any():
            break
        ids[bad] = gen.integers(N, size=(int(bad.sum()), n))
    ends = np.cumsum(block_sizes(structure))
    return np.searchsorted(ends, ids, side="right")


@njit(cache=True)
def _advance(cum, states, u_src, u_par, sizes, starts, isl, alive, count, active, times, m):
    # one generation for the first m active replicates, compacting survivors in place
    n = isl.shape[1]
    L = cum.shape[2]
    ids = np.empty(n, dtype=np.int64)
    w = 0
    merges = 0
    multi = 0
    for r in range(m):
        c = count[r]
        times[active[r], c] += 1
        s = states[r]
        for i in range(n):
            if alive[r, i]:
                u = u_src[r, i]
                j = 0
                while j < L - 1 and u >= cum[s, isl[r, i], j]:
                    j += 1
                isl[r, i] = j
                ids[i] = starts[j] + np.int64(u_par[r, i] * sizes[j])
            else:
                ids[i] = -1 - i
        left = 0
        for i in range(n):
            if alive[r, i]:
                for k in range(i):
                    if ids[k] == ids[i]:
                        alive[r, i] = False
                        break
                if alive[r, i]:
                    left += 1
        if left < c:
            merges += 1
            if c - left > 1:
                multi += 1
        if left > 1:
            active[w] = active[r]
            count[w] = left
            for i in range(n):
                isl[w, i] = isl[r, i]
                alive[w, i] = alive[r, i]
            w += 1
    return w, merges, multi


def _run_chunk(job: dict) -> tuple[np.ndarray, np.ndarray, int, int]:
    spec: EnvironmentSpec = job["spec"]
    structure: IslandStructure = job["structure"]
    n, reps, cap = job["n"], job["reps"], job["cap"]
    gen = _rng.make_rng(job["seed"], _rng.SIM, job["chunk"])
    N = structure.N

    policy = job["policy"]
    if policy == "stationary":
        isl = _stationary_islands(spec, gen, reps, n, job["tol"], job["max_steps"])
    elif policy == "uniform":
        isl = _uniform_islands(structure, gen, reps, n)
    else:
        isl = np.tile(np.asarray(job["islands"], dtype=np.int64), (reps, 1))
    isl = np.ascontiguousarray(isl, dtype=np.int64)

    sizes = block_sizes(structure)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    cum = np.cumsum(spec.stacked(N), axis=2)
    cum[..., -1] = 1.0
    env = EnvironmentBatch(spec, gen, reps)

    times = np.zeros((reps, n + 1), dtype=np.int64)
    active = np.arange(reps, dtype=np.int64)
    alive = np.ones((reps, n), dtype=np.bool_)
    count = np.full(reps, n, dtype=np.int64)
    multi = merges = 0
    m = reps
    g = 0
    while m and g < cap:
        g += 1
        states = env.step(active[:m])
        u_src = gen.random((m, n))
        u_par = gen.random((m, n))
        m, a, b = _advance(cum, states, u_src, u_par, sizes, starts, isl, alive, count,
                           active, times, m)
        merges += a
        multi += b
    capped = np.zeros(reps, dtype=bool)
    capped[active[:m]] = True
    return times, capped, multi, merges


def _simulate(spec: EnvironmentSpec, structure: IslandStructure, seed: int, n: int,
              replicates: int, sampling_policy: str, islands, cap: int | None,
              tol: float, max_steps: int, workers: int) -> CoalescenceSample:
    problems = validate(spec, structure)
    if problems:
        raise ValueError("; ".join(problems))
    if n < 2:
        raise ValueError("need at least two lineages")
    if sampling_policy not in POLICIES:
        raise ValueError(f"sampling_policy must be one of {POLICIES}")
    if sampling_policy == "fixed":
        if islands is None or len(islands) != n:
            raise ValueError("fixed policy needs one island per lineage")
        if any(not 0 <= i < structure.L for i in islands):
            raise ValueError("fixed islands out of range")
    cap = 100 * structure.N if cap is None else int(cap)
    jobs = [dict(spec=spec, structure=structure, n=n, reps=min(CHUNK, replicates - s),
                 cap=cap, seed=seed, chunk=c, policy=sampling_policy, islands=islands,
                 tol=tol, max_steps=max_steps)
            for c, s in enumerate(range(0, replicates, CHUNK))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    return CoalescenceSample(
        level_times=np.concatenate([p[0] for p in parts]),
        capped=np.concatenate([p[1] for p in parts]),
        multi_merger_count=sum(p[2] for p in parts),
        merger_steps=sum(p[3] for p in parts),
        n=n, N=structure.N, seed=seed,
    )


# ----------------------------------------------------------------------------
# goodness of fit


def ks_exponential(x: Sequence[float]) -> float:
    """Two-sided KS distance of continuous samples to Exp(1)."""
    x = np.sort(np.asarray(x, dtype=float))
    m = x.size
    F = 1.0 - np.exp(-x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


def ks_discretized_exponential(T: Sequence[int], N: int, c: float) -> float:
    """KS distance of integer times ``T`` to ``ceil(N E / c)``, ``E ~ Exp(1)``.

    The reference is the exponential limit placed on the same integer grid,
    i.e. ``P(T <= t) = 1 - exp(-c t / N)``; both distribution functions jump
    only at integers, so the supremum is attained at observed values or just
    below them.
    """
    T = np.sort(np.asarray(T, dtype=np.int64))
    m = T.size
    vals, counts = np.unique(T, return_counts=True)
    emp = np.cumsum(counts) / m
    emp_before = np.concatenate([[0.0], emp[:-1]])
    G = -np.expm1(-c * vals / N)
    G_before = -np.expm1(-c * (vals - 1) / N)
    return float(max(np.max(np.abs(emp - G)), np.max(np.abs(emp_before - G_before))))


# ----------------------------------------------------------------------------
# public entry points


@dataclass
class T2Summary:
    sample: CoalescenceSample = field(repr=False)
    mean_T2: float
    se: float
    Ne_hat: float
    c_hat: float
    c_hat_se: float
    ks: float
    ks_reference_c: float
    capped: int
    multi_merger_fraction: float

    def to_record(self) -> dict:
        return {"mean_T2": self.mean_T2, "se": self.se, "Ne_hat": self.Ne_hat,
                "c_hat": self.c_hat, "c_hat_se": self.c_hat_se, "ks": self.ks,
                "ks_reference_c": self.ks_reference_c, "capped": self.capped,
                "multi_merger_fraction": self.multi_merger_fraction,
                "replicates": int(self.sample.level_times.shape[0]),
                "N": self.sample.N, "seed": self.sample.seed}


def simulate_T2(spec: EnvironmentSpec, structure: IslandStructure, seed: int, replicates: int,
                sampling_policy: str = "stationary", *, islands: Sequence[int] | None = None,
                c_reference: float | None = None, cap: int | None = None,
                tol: float = DEFAULT_TOL, max_steps: int = DEFAULT_MAX_STEPS,
                workers: int = 1) -> T2Summary:
    """Pairwise coalescence times; ``Ne_hat = mean(T2)`` and ``c_hat = N / Ne_hat``.

    ``ks`` compares ``T2`` with the exponential limit at rate
    ``c_reference / N`` (``c_hat`` when no reference is given).
    """
    if replicates < 100:
        raise ValueError("need at least 100 replicates")
    sample = _simulate(spec, structure, seed, 2, replicates, sampling_policy, islands, cap,
                       tol, max_steps, workers)
    t2 = sample.t2_samples
    mean = float(t2.mean())
    se = float(t2.std(ddof=1) / math.sqrt(t2.size))
    c_hat = structure.N / mean
    c_ref = c_hat if c_reference is None else float(c_reference)
    return T2Summary(
        sample=sample, mean_T2=mean, se=se, Ne_hat=mean, c_hat=c_hat,
        c_hat_se=c_hat * se / mean, ks=ks_discretized_exponential(t2, structure.N, c_ref),
        ks_reference_c=c_ref, capped=int(sample.capped.sum()),
        multi_merger_fraction=sample.multi_merger_fraction,
    )


@dataclass
class TreeSummary:
    sample: CoalescenceSample = field(repr=False)
    mean_times: dict       # k -> mean generations with k lineages
    se_times: dict
    scaled_means: dict     # k -> mean(T_k) * c / N
    kingman_means: dict    # k -> 1 / binom(k, 2)
    c: float
    ks_T2: float
    multi_merger_fraction: float
    capped: int

    def to_record(self) -> dict:
        return {"mean_times": {str(k): v for k, v in self.mean_times.items()},
                "se_times": {str(k): v for k, v in self.se_times.items()},
                "scaled_means": {str(k): v for k, v in self.scaled_means.items()},
                "kingman_means": {str(k): v for k, v in self.kingman_means.items()},
                "c": self.c, "ks_T2": self.ks_T2,
                "multi_merger_fraction": self.multi_merger_fraction,
                "multi_merger_count": self.sample.multi_merger_count,
                "capped": self.capped, "n": self.sample.n,
                "replicates": int(self.sample.level_times.shape[0]),
                "N": self.sample.N, "seed": self.sample.seed}


def simulate_tree(spec: EnvironmentSpec, structure: IslandStructure, seed: int, n: int,
                  replicates: int, sampling_policy: str = "stationary", *,
                  islands: Sequence[int] | None = None, c_reference: float | None = None,
                  cap: int | None = None, tol: float = DEFAULT_TOL,
                  max_steps: int = DEFAULT_MAX_STEPS, workers: int = 1) -> TreeSummary:
    """Trace ``n`` lineages to their common ancestor.

    ``scaled_means[k]`` should approach ``1 / binom(k, 2)`` when ``c`` is the
    right effective-size factor.  Generations in which the count drops by
    more than one are attributed as consecutive level drops, leaving zero time
    at the skipped levels.
    """
    sample = _simulate(spec, structure, seed, n, replicates, sampling_policy, islands, cap,
                       tol, max_steps, workers)
    lt = sample.level_times[~sample.capped]
    N = structure.N
    mean_T2 = float(lt[:, 2].mean())
    c = N / mean_T2 if c_reference is None else float(c_reference)
    ks = ks_discretized_exponential(lt[:, 2], N, c)
    root = math.sqrt(max(lt.shape[0], 1))
    return TreeSummary(
        sample=sample,
        mean_times={k: float(lt[:, k].mean()) for k in range(2, n + 1)},
        se_times={k: float(lt[:, k].std(ddof=1) / root) for k in range(2, n + 1)},
        scaled_means={k: float(lt[:, k].mean() * c / N) for k in range(2, n + 1)},
        kingman_means={k: 1.0 / math.comb(k, 2) for k in range(2, n + 1)},
        c=c, ks_T2=ks, multi_merger_fraction=sample.multi_merger_fraction,
        capped=int(sample.capped.sum()),
    )
