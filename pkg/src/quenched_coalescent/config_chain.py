"""The n-lineage configuration chain as dense block matrices.

States at level ``r`` are island-count vectors ``x`` with ``sum(x) == r``;
the stacked space is levels ``1..n`` in order.  Within a level states are in
descending lexicographic order, which for two islands is
``(r,0), (r-1,1), ..., (0,r)``.

The finite-N one-generation kernel is ``B(N) @ (I + C/N)``: migrate every
lineage, then coalesce pairs that share a parent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from . import rng as _rng
from .ergodics import DEFAULT_WARMUP, NonConvergenceError, c_f_factor, gamma_path, warm_gamma
from .model import (
    EnvironmentSpec,
    EnvironmentStream,
    IslandStructure,
    effective_migration,
    stationary_distribution,
)

MAX_STACKED_DIM = 5000


class GuardError(ValueError):
    """Stacked state space is too large for dense matrices."""


def _proportions(a) -> np.ndarray:
    return np.asarray(getattr(a, "a", a), dtype=float)


@lru_cache(maxsize=None)
def _compositions(L: int, r: int) -> tuple[tuple[int, ...], ...]:
    if L == 1:
        return ((r,),)
    out = []
    for first in range(r, -1, -1):
        for rest in _compositions(L - 1, r - first):
            out.append((first,) + rest)
    return tuple(out)


def enumerate_states(L: int, r: int) -> list[tuple[int, ...]]:
    """All ``x`` in ``N^L`` with ``sum(x) == r``, descending lexicographic."""
    if L < 1 or r < 0:
        raise ValueError("need L >= 1 and r >= 0")
    return list(_compositions(L, r))


def level_size(L: int, r: int) -> int:
    return math.comb(r + L - 1, r)


@dataclass(frozen=True)
class ConfigStateSpace:
    L: int
    n: int

    def __post_init__(self):
        if self.L < 1 or self.n < 1:
            raise ValueError("need L >= 1 and n >= 1")
        dim = sum(level_size(self.L, r) for r in range(1, self.n + 1))
        if dim > MAX_STACKED_DIM:
            raise GuardError(
                f"stacked dimension {dim} for L={self.L}, n={self.n} exceeds {MAX_STACKED_DIM}")

    @cached_property
    def levels(self) -> list[list[tuple[int, ...]]]:
        return [enumerate_states(self.L, r) for r in range(1, self.n + 1)]

    @cached_property
    def offsets(self) -> list[int]:
        """Start of level r at ``offsets[r-1]``; ``offsets[n]`` is the dimension."""
        out = [0]
        for lev in self.levels:
            out.append(out[-1] + len(lev))
        return out

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {x: self.offsets[r] + i for r, lev in enumerate(self.levels) for i, x in enumerate(lev)}

    def level_slice(self, r: int) -> slice:
        return slice(self.offsets[r - 1], self.offsets[r])

    def states(self) -> list[tuple[int, ...]]:
        return [x for lev in self.levels for x in lev]


def coalescence_functional(x: Sequence[int], a) -> float:
    """``C(x) = sum_k binom(x_k, 2) / a_k``: pair-coalescence rate of config x."""
    a = _proportions(a)
    return float(sum(math.comb(int(xk), 2) / ak for xk, ak in zip(x, a)))


def build_C(a, n: int) -> np.ndarray:
    """Coalescence generator over the stacked space.

    Row ``x`` has ``binom(x_k,2)/a_k`` at ``x - e_k`` and minus their sum on the
    diagonal.
    """
    a = _proportions(a)
    space = ConfigStateSpace(len(a), n)
    C = np.zeros((space.dim, space.dim))
    for x, i in space.index.items():
        total = 0.0
        for k, xk in enumerate(x):
            if xk >= 2:
                rate = math.comb(xk, 2) / a[k]
                y = x[:k] + (xk - 1,) + x[k + 1:]
                C[i, space.index[y]] += rate
                total += rate
        C[i, i] = -total
    return C


def _level_migration(B1: np.ndarray, x: tuple[int, ...]) -> dict[tuple[int, ...], float]:
    # lineages on island i scatter multinomially over B1[i]; convolve islands
    L = B1.shape[0]
    dist = {(0,) * L: 1.0}
    for i, xi in enumerate(x):
        if xi == 0:
            continue
        moves = []
        for f in _compositions(L, xi):
            p = float(math.factorial(xi))
            for j, fj in enumerate(f):
                p *= B1[i, j] ** fj / math.factorial(fj)
            if p > 0:
                moves.append((f, p))
        new: dict[tuple[int, ...], float] = {}
        for y, q in dist.items():
            for f, p in moves:
                z = tuple(yj + fj for yj, fj in zip(y, f))
                new[z] = new.get(z, 0.0) + q * p
        dist = new
    return dist


def lift_migration(B1: np.ndarray, L: int, r: int) -> np.ndarray:
    """Level-``r`` kernel of ``r`` lineages migrating independently by ``B1``.

    Entry ``(x, y)`` sums, over flow matrices ``f`` with row sums ``x`` and
    column sums ``y``, the product of per-island multinomial probabilities.
    """
    B1 = np.asarray(B1, dtype=float)
    if B1.shape != (L, L):
        raise ValueError(f"B1 shape {B1.shape} != ({L}, {L})")
    states = enumerate_states(L, r)
    idx = {x: i for i, x in enumerate(states)}
    out = np.zeros((len(states), len(states)))
    for x in states:
        for y, p in _level_migration(B1, x).items():
            out[idx[x], idx[y]] = p
    return out


def build_B(B1: np.ndarray, n: int) -> np.ndarray:
    """Block-diagonal pure-migration kernel over levels 1..n."""
    B1 = np.asarray(B1, dtype=float)
    L = B1.shape[0]
    space = ConfigStateSpace(L, n)
    out = np.zeros((space.dim, space.dim))
    for r in range(1, n + 1):
        sl = space.level_slice(r)
        out[sl, sl] = lift_migration(B1, L, r)
    return out


def multinomial_weights(gamma: Sequence[float], r: int) -> np.ndarray:
    """Multinomial(r, gamma) probabilities over level-r states."""
    gamma = np.asarray(gamma, dtype=float)
    out = []
    for x in enumerate_states(len(gamma), r):
        coef = math.factorial(r)
        for xk in x:
            coef //= math.factorial(xk)
        out.append(coef * float(np.prod(gamma ** np.asarray(x))))
    return np.asarray(out)


def build_P(gamma: Sequence[float], n: int) -> np.ndarray:
    """Block-diagonal matrix whose level-r block has identical rows ``pi_r``."""
    gamma = np.asarray(gamma, dtype=float)
    space = ConfigStateSpace(len(gamma), n)
    P = np.zeros((space.dim, space.dim))
    for r in range(1, n + 1):
        sl = space.level_slice(r)
        P[sl, sl] = multinomial_weights(gamma, r)[None, :]
    return P


def star_product(G: np.ndarray, P: np.ndarray, space: ConfigStateSpace) -> np.ndarray:
    """Block ``(i, j)`` is ``g_ij`` times ``d_i`` copies of the row ``pi_j``."""
    G = np.asarray(G, dtype=float)
    n = space.n
    if G.shape != (n, n):
        raise ValueError(f"G shape {G.shape} != ({n}, {n})")
    out = np.zeros((space.dim, space.dim))
    for j in range(1, n + 1):
        cj = space.level_slice(j)
        pi_j = P[space.offsets[j - 1], cj]
        for i in range(1, n + 1):
            out[space.level_slice(i), cj] = G[i - 1, j - 1] * pi_j[None, :]
    return out


def default_anchors(space: ConfigStateSpace) -> list[tuple[int, ...]]:
    return [lev[0] for lev in space.levels]


def collapse(R: np.ndarray, space: ConfigStateSpace,
             anchors: Sequence[Sequence[int]] | None = None) -> np.ndarray:
    """``n x n`` matrix ``sum_{y in S_j} R(x_i, y)`` for one anchor ``x_i`` per level."""
    if anchors is None:
        anchors = default_anchors(space)
    if len(anchors) != space.n:
        raise ValueError("need exactly one anchor state per level")
    out = np.zeros((space.n, space.n))
    for i, x in enumerate(anchors):
        x = tuple(int(v) for v in x)
        if sum(x) != i + 1 or x not in space.index:
            raise ValueError(f"anchor {x} is not a level-{i + 1} state")
        row = R[space.index[x]]
        for j in range(1, space.n + 1):
            out[i, j - 1] = row[space.level_slice(j)].sum()
    return out


def build_Q(n: int) -> np.ndarray:
    """Kingman block-counting generator on ``{1..n}``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    Q = np.zeros((n, n))
    for i in range(2, n + 1):
        Q[i - 1, i - 1] = -math.comb(i, 2)
        Q[i - 1, i - 2] = math.comb(i, 2)
    return Q


def max_row_sum_norm(M: np.ndarray) -> float:
    return float(np.abs(M).sum(axis=1).max())


def mat_exp(M: np.ndarray, t: float = 1.0, tol: float = 1e-12) -> np.ndarray:
    """``exp(t*M)`` by scaling, truncated Taylor series and squaring.

    With ``A = t*M / 2**s`` and ``||A|| <= 1/2`` the series is cut once the
    tail bound is below ``tol / (2**s * exp(||t*M||))``, which bounds the
    error after ``s`` squarings by ``tol`` in the max-row-sum norm (up to
    floating-point rounding).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = np.asarray(M, dtype=float) * t
    k = A.shape[0]
    norm = max_row_sum_norm(A) if A.size else 0.0
    if norm == 0.0:
        return np.eye(k)
    s = max(0, int(math.ceil(math.log2(norm / 0.5))))
    A = A / 2.0**s
    a_norm = norm / 2.0**s
    # log space: exp(norm) overflows for large generators; an underflowed
    # target simply runs the series to the term cap
    target = math.exp(math.log(tol) - s * math.log(2.0) - norm)
    out = np.eye(k)
    term = np.eye(k)
    m = 0
    while True:
        m += 1
        term = term @ A / m
        out = out + term
        # tail after order m: sum_{j>m} a^j / j! <= a^(m+1)/(m+1)! / (1 - a/(m+2))
        tail = a_norm ** (m + 1) / math.factorial(m + 1) / (1 - a_norm / (m + 2))
        if tail <= target or m > 60:
            break
    for _ in range(s):
        out = out @ out
    return out


def transition_matrix(B1N: np.ndarray, a, n: int, N: int) -> np.ndarray:
    """One-generation configuration kernel ``B(N) @ (I + C/N)``."""
    a = _proportions(a)
    C = build_C(a, n)
    worst = float(-np.diag(C).min()) if C.size else 0.0
    if N <= worst:
        raise ValueError(f"N={N} must exceed max_x C(x) = {worst:g}")
    B = build_B(B1N, n)
    return B @ (np.eye(C.shape[0]) + C / float(N))


@dataclass
class LimitCheck:
    norm: float
    collapsed: np.ndarray
    reference: np.ndarray
    c: float
    N: int
    t: float
    n: int
    seed: int | None = None
    full_norm: float | None = None
    warmup_oscillation: float | None = None

    def to_record(self) -> dict:
        return {"norm": self.norm, "full_norm": self.full_norm, "N": self.N, "t": self.t,
                "n": self.n, "seed": self.seed, "c_hat": self.c}


def fixed_env_limit_check(B1: np.ndarray, a, n: int, N: int, t: float,
                          anchors=None) -> LimitCheck:
    """Collapsed ``Pi**[N t]`` against ``exp(c_f t Q)`` in a constant environment."""
    a = _proportions(a)
    B1 = np.asarray(B1, dtype=float)
    try:
        gamma = stationary_distribution(B1)
    except ValueError as exc:
        raise NonConvergenceError(str(exc)) from exc
    c_f = c_f_factor(a, gamma)
    space = ConfigStateSpace(len(a), n)
    Pi = transition_matrix(B1, a, n, N)
    steps = int(math.floor(N * t))
    power = np.linalg.matrix_power(Pi, steps)
    collapsed = collapse(power, space, anchors)
    ref = mat_exp(build_Q(n), c_f * t)
    return LimitCheck(norm=max_row_sum_norm(collapsed - ref), collapsed=collapsed,
                      reference=ref, c=c_f, N=N, t=t, n=n)


def random_env_limit_check(spec: EnvironmentSpec, structure: IslandStructure, n: int,
                           N: int, t: float, seed: int, warmup: int = DEFAULT_WARMUP,
                           anchors=None, stream_id: int = 0) -> LimitCheck:
    """Product of random configuration kernels against ``exp(c t Q) * P``.

    One environment path of ``warmup + [N t]`` generations is drawn; the
    warm-up stands in for the infinite past and fixes ``gamma^(0)``.
    ``c`` is the path average of ``c^(j)`` over the last ``[N t]``
    generations.  ``norm`` compares the collapsed matrices; ``full_norm`` is
    the max-row-sum distance of the full block matrices.
    """
    a = structure.proportions
    space = ConfigStateSpace(len(a), n)
    steps = int(math.floor(N * t))
    stream = EnvironmentStream(spec, seed, stream_id, domain=_rng.LIMIT)
    states = stream.next_states(warmup + steps)
    mats = spec.stacked()
    g0, osc = warm_gamma(mats, states[:warmup])
    if osc > 1e-6:
        raise NonConvergenceError(
            f"warm-up of {warmup} generations leaves oscillation {osc:.3g} > 1e-6")
    path = states[warmup:]
    kernels = {s: transition_matrix(effective_migration(spec, s, N), a, n, N)
               for s in np.unique(path)}
    prod = np.eye(space.dim)
    for s in path:
        prod = prod @ kernels[s]
    if steps:
        gam = gamma_path(mats, g0, path)
        c_hat = float(((gam**2) / a).sum(axis=1).mean())
        g_last = gam[-1]
    else:
        c_hat = c_f_factor(a, g0)
        g_last = g0
    G = mat_exp(build_Q(n), c_hat * t)
    ref = star_product(G, build_P(g_last, n), space)
    if steps == 0:
        ref = np.eye(space.dim)
    collapsed = collapse(prod, space, anchors)
    return LimitCheck(norm=max_row_sum_norm(collapsed - G), collapsed=collapsed, reference=G,
                      c=c_hat, N=N, t=t, n=n, seed=seed,
                      full_norm=max_row_sum_norm(prod - ref), warmup_oscillation=osc)


def matrix_to_csv(M: np.ndarray, space: ConfigStateSpace) -> str:
    """Row-major CSV; the header names the state order."""
    labels = ["(" + " ".join(str(v) for v in x) + ")" for x in space.states()]
    lines = ["state," + ",".join(labels)]
    for lab, row in zip(labels, M):
        lines.append(lab + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
