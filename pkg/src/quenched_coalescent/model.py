"""Island structure and the stationary random environment.

The environment is a finite-state stationary sequence ``omega_1, omega_2, ...``
and generation ``u`` uses the backward migration matrix ``M(omega_u)``,
optionally shifted by an ``N``-dependent perturbation ``D(omega_u) / N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import rng as _rng

ROW_TOL = 1e-12


@dataclass(frozen=True)
class IslandStructure:
    """Total size ``N`` split into ``L`` islands with proportions ``a``."""

    a: tuple[float, ...]
    N: int

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(x) for x in self.a))
        object.__setattr__(self, "N", int(self.N))

    @property
    def L(self) -> int:
        return len(self.a)

    @property
    def proportions(self) -> np.ndarray:
        return np.asarray(self.a, dtype=float)

    def problems(self) -> list[str]:
        out = []
        if self.L < 1:
            out.append("island count must be >= 1")
            return out
        if self.N < 2:
            out.append(f"population size N={self.N} must be >= 2")
        if any(x <= 0 for x in self.a):
            out.append("island proportions must be positive")
        if abs(sum(self.a) - 1.0) > ROW_TOL:
            out.append(f"proportions sum != 1 (sum={sum(self.a)!r})")
        if not out:
            lengths = _block_lengths(self.a, self.N)
            empty = [i for i, m in enumerate(lengths) if m < 1]
            if empty:
                out.append(f"N={self.N} too small: islands {empty} have no individuals")
        return out

    def check(self) -> "IslandStructure":
        probs = self.problems()
        if probs:
            raise ValueError("invalid island structure: " + "; ".join(probs))
        return self


def _cumulative_floors(a: Sequence[float], N: int) -> list[int]:
    # the small offset keeps N*A_k from rounding just below an integer
    bounds = [0]
    acc = 0.0
    for x in a[:-1]:
        acc += x
        bounds.append(math.floor(N * acc + 1e-9))
    bounds.append(N)
    return bounds


def _block_lengths(a: Sequence[float], N: int) -> list[int]:
    b = _cumulative_floors(a, N)
    return [b[i + 1] - b[i] for i in range(len(a))]


def island_blocks(structure: IslandStructure) -> list[range]:
    """Individuals ``1..N`` assigned to islands by cumulative floors.

    Island ``i`` holds ``floor(N*A_{i-1})+1 .. floor(N*A_i)`` where ``A_i`` is
    the cumulative proportion.  Returned as 1-based ``range`` objects.
    """
    bounds = _cumulative_floors(structure.a, structure.N)
    blocks = [range(bounds[i] + 1, bounds[i + 1] + 1) for i in range(structure.L)]
    empty = [i for i, blk in enumerate(blocks) if len(blk) == 0]
    if empty:
        raise ValueError(
            f"N={structure.N} is too small for proportions {structure.a}: "
            f"islands {empty} are empty"
        )
    return blocks


def block_sizes(structure: IslandStructure) -> np.ndarray:
    return np.array([len(b) for b in island_blocks(structure)], dtype=np.int64)


# ----------------------------------------------------------------------------
# environment drivers


@dataclass(frozen=True)
class Constant:
    """Always state 0."""


@dataclass(frozen=True)
class IIDWeights:
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


@dataclass(frozen=True)
class MarkovChain:
    """Stationary Markov driver; started from its stationary law."""

    transition: np.ndarray
    stationary: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = _frozen_array(self.transition)
        object.__setattr__(self, "transition", P)
        try:
            pi = stationary_distribution(P)
        except (ValueError, np.linalg.LinAlgError):
            pi = np.full(P.shape[0], np.nan)
        object.__setattr__(self, "stationary", _frozen_array(pi))

    def reversed_transition(self) -> np.ndarray:
        pi = self.stationary
        return (self.transition.T * pi[None, :]) / pi[:, None]


Driver = Union[Constant, IIDWeights, MarkovChain]


def _frozen_array(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


def stationary_distribution(P: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Left fixed vector of a stochastic matrix by power iteration.

    Stops when successive iterates differ by at most ``tol`` in l1.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("stationary_distribution needs a square matrix")
    v = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        w = v @ P
        w /= w.sum()
        if np.abs(w - v).sum() <= tol:
            return w
        v = w
    raise ValueError("power iteration did not converge (periodic or reducible matrix?)")


def is_primitive(P: np.ndarray) -> bool:
    """Irreducible and aperiodic: some power of the pattern is all positive."""
    A = (np.asarray(P) > 0).astype(np.int64)
    k = A.shape[0]
    M = A.copy()
    # Wielandt: primitive iff A^((k-1)^2+1) > 0
    for _ in range((k - 1) ** 2 + 1):
        if M.all():
            return True
        M = ((M @ A) > 0).astype(np.int64)
    return bool(M.all())


@dataclass(frozen=True)
class EnvironmentSpec:
    """Finite-state stationary law over backward migration matrices.

    ``matrices[s]`` is the L x L matrix used in environment state ``s``
    (states are 0-based).  ``perturbations[s]``, when present, is the
    zero-row-sum correction ``D`` giving ``M(s) + D/N`` at population size N.
    """

    matrices: tuple[np.ndarray, ...]
    driver: Driver = Constant()
    perturbations: tuple[np.ndarray, ...] | None = None
    perturbation_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "matrices", tuple(_frozen_array(m) for m in self.matrices))
        if self.perturbations is not None:
            object.__setattr__(
                self, "perturbations", tuple(_frozen_array(d) for d in self.perturbations)
            )

    @property
    def K(self) -> int:
        return len(self.matrices)

    @property
    def L(self) -> int:
        return self.matrices[0].shape[0]

    def support(self) -> list[int]:
        """States that occur with positive probability."""
        d = self.driver
        if isinstance(d, Constant):
            return [0]
        if isinstance(d, IIDWeights):
            return [s for s, w in enumerate(d.weights) if w > 0]
        return [s for s in range(self.K) if d.stationary[s] > 0]

    def is_constant(self) -> bool:
        supp = self.support()
        return all(np.array_equal(self.matrices[s], self.matrices[supp[0]]) for s in supp)

    def stacked(self, N: int | None = None) -> np.ndarray:
        """(K, L, L) array of the matrices, perturbed at N when given."""
        if N is None:
            return np.stack(self.matrices)
        return np.stack([effective_migration(self, s, N) for s in range(self.K)])

    def problems(self) -> list[str]:
        return _spec_problems(self)

    def check(self) -> "EnvironmentSpec":
        probs = self.problems()
        if probs:
            raise ValueError("invalid environment: " + "; ".join(probs))
        return self


def _stochastic_problems(M: np.ndarray, name: str) -> list[str]:
    out = []
    if np.any(M < 0) or np.any(M > 1):
        out.append(f"{name}: entries outside [0, 1]")
    sums = M.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
    for i in bad:
        out.append(f"{name}: row sum != 1 (row {i}, sum={float(sums[i])!r})")
    return out


def _spec_problems(spec: EnvironmentSpec) -> list[str]:
    out = []
    if spec.K < 1:
        return ["environment has no states"]
    L = spec.matrices[0].shape[0] if spec.matrices[0].ndim == 2 else -1
    for s, M in enumerate(spec.matrices):
        if M.shape != (L, L):
            out.append(f"matrix {s}: shape {M.shape} is not square/consistent")
            continue
        out.extend(_stochastic_problems(M, f"matrix {s}"))
    d = spec.driver
    if isinstance(d, IIDWeights):
        w = np.asarray(d.weights)
        if w.shape != (spec.K,):
            out.append(f"IID weights length {w.size} != K={spec.K}")
        elif np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
            out.append("IID weights must be non-negative and sum to 1")
    elif isinstance(d, MarkovChain):
        P = d.transition
        if P.shape != (spec.K, spec.K):
            out.append(f"Markov transition shape {P.shape} != ({spec.K}, {spec.K})")
        else:
            out.extend(_stochastic_problems(P, "Markov transition"))
            if not is_primitive(P):
                out.append("Markov driver must be irreducible and aperiodic")
            elif not np.all(np.isfinite(d.stationary)):
                out.append("Markov driver stationary law did not converge")
    elif not isinstance(d, Constant):
        out.append(f"unknown driver {d!r}")
    if spec.perturbations is not None:
        if len(spec.perturbations) != spec.K:
            out.append("perturbations must be given for every state")
        for s, D in enumerate(spec.perturbations):
            if D.shape != (L, L):
                out.append(f"perturbation {s}: shape {D.shape} != ({L}, {L})")
                continue
            sums = D.sum(axis=1)
            if np.any(np.abs(sums) > ROW_TOL):
                out.append(f"perturbation {s}: row sums != 0")
            if spec.perturbation_bound is not None and np.abs(D).max() > spec.perturbation_bound:
                out.append(f"perturbation {s}: entries exceed declared bound {spec.perturbation_bound}")
    return out


def validate(spec: EnvironmentSpec, structure: IslandStructure) -> list[str]:
    """Return every violated invariant of ``(spec, structure)``; empty if valid."""
    out = list(structure.problems())
    out.extend(spec.problems())
    if structure.L >= 1 and spec.K >= 1 and spec.matrices[0].ndim == 2:
        if spec.L != structure.L:
            out.append(f"matrix dimension {spec.L} != island count {structure.L}")
        elif not out and spec.perturbations is not None:
            for s in range(spec.K):
                try:
                    effective_migration(spec, s, structure.N)
                except ValueError as exc:
                    out.append(str(exc))
    return out


def effective_migration(spec: EnvironmentSpec, state: int, N: int) -> np.ndarray:
    """Backward migration matrix ``M(state) + D(state)/N`` at population size N."""
    B = np.array(spec.matrices[state], dtype=float)
    if spec.perturbations is None:
        return B
    B = B + spec.perturbations[state] / float(N)
    if np.any(B < -ROW_TOL) or np.any(B > 1 + ROW_TOL):
        raise ValueError(
            f"state {state}: perturbed matrix leaves [0, 1] at N={N}; "
            f"need N > {np.abs(spec.perturbations[state]).max() * spec.L:g}"
        )
    np.clip(B, 0.0, 1.0, out=B)
    return B


# ----------------------------------------------------------------------------
# environment realizations


class EnvironmentStream:
    """Seeded realization ``omega_1, omega_2, ...`` of an environment.

    With ``reverse=True`` the stream yields ``omega_0, omega_{-1}, ...``: the
    past of a stationary sequence read backwards.  For IID drivers this is the
    same law; Markov drivers then run with the time-reversed kernel.
    """

    _BUFFER = 256

    def __init__(self, spec: EnvironmentSpec, seed: int, stream_id: int = 0,
                 reverse: bool = False, domain: int = _rng.ENV):
        self.spec = spec
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.reverse = reverse
        self.cursor = 0
        self._gen = _rng.make_rng(seed, domain, stream_id)
        self._buf = np.empty(0)
        self._pos = 0
        self._state: int | None = None
        d = spec.driver
        if isinstance(d, IIDWeights):
            self._cdf = np.cumsum(d.weights)
        elif isinstance(d, MarkovChain):
            P = d.reversed_transition() if reverse else d.transition
            self._rows_cdf = np.cumsum(P, axis=1)
            self._cdf = np.cumsum(d.stationary)

    def _uniforms(self, k: int) -> np.ndarray:
        out = np.empty(k)
        filled = 0
        while filled < k:
            if self._pos >= self._buf.size:
                self._buf = self._gen.random(self._BUFFER)
                self._pos = 0
            take = min(k - filled, self._buf.size - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        return out

    def next_states(self, length: int) -> np.ndarray:
        if length < 0:
            raise ValueError("length must be >= 0")
        d = self.spec.driver
        self.cursor += length
        if isinstance(d, Constant):
            return np.zeros(length, dtype=np.int64)
        u = self._uniforms(length)
        if isinstance(d, IIDWeights):
            return _invert(self._cdf, u)
        out = np.empty(length, dtype=np.int64)
        s = self._state
        for i in range(length):
            s = int(_invert(self._cdf if s is None else self._rows_cdf[s], u[i]))
            out[i] = s
        self._state = s
        return out

    def next_matrices(self, length: int, N: int | None = None) -> np.ndarray:
        return self.spec.stacked(N)[self.next_states(length)]


def _invert(cdf: np.ndarray, u):
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(cdf) - 1)


def sample_env_stream(stream: EnvironmentStream, length: int) -> np.ndarray:
    """Next ``length`` environment states (0-based) from ``stream``."""
    return stream.next_states(length)


class EnvironmentBatch:
    """Independent environment paths for many replicates, advanced together."""

    def __init__(self, spec: EnvironmentSpec, gen: np.random.Generator, size: int,
                 reverse: bool = False):
        self.spec = spec
        self.gen = gen
        d = spec.driver
        self.kind = type(d)
        if isinstance(d, IIDWeights):
            self._cdf = np.cumsum(d.weights)
        elif isinstance(d, MarkovChain):
            P = d.reversed_transition() if reverse else d.transition
            self._rows_cdf = np.cumsum(P, axis=1)
            self._rows_cdf[:, -1] = 1.0
            self.state = _invert(np.cumsum(d.stationary), gen.random(size))
        self.size = size

    def step(self, active: np.ndarray | None = None) -> np.ndarray:
        """States for the next generation; ``active`` selects replicate indices."""
        m = self.size if active is None else active.size
        if self.kind is Constant:
            return np.zeros(m, dtype=np.int64)
        u = self.gen.random(m)
        if self.kind is IIDWeights:
            return _invert(self._cdf, u)
        cur = self.state if active is None else self.state[active]
        nxt = (u[:, None] >= self._rows_cdf[cur]).sum(axis=1)
        if active is None:
            self.state = nxt
        else:
            self.state[active] = nxt
        return nxt


# ----------------------------------------------------------------------------
# positivity conditions


def _pattern(M: np.ndarray) -> np.ndarray:
    return np.asarray(M) > 0


def _bool_product(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A.astype(np.int64) @ B.astype(np.int64)) > 0


def condition_checks(spec: EnvironmentSpec) -> dict[str, bool]:
    """Irreducibility ``irr`` and column-positivity ``st`` of matrix products.

    Breadth-first closure of the positivity patterns of products
    ``M(omega_1)...M(omega_u)`` over admissible environment paths.
    """
    support = spec.support()
    d = spec.driver
    if isinstance(d, MarkovChain):
        nxt = {s: [t for t in support if d.transition[s, t] > 0] for s in support}
    elif isinstance(d, Constant):
        nxt = {0: [0]}
    else:
        nxt = {s: support for s in support}
    pats = {s: _pattern(spec.matrices[s]) for s in support}

    seen: set[tuple[bytes, int]] = set()
    frontier = []
    for s in support:
        key = (pats[s].tobytes(), s)
        if key not in seen:
            seen.add(key)
            frontier.append((pats[s], s))
    closure = [p for p, _ in frontier]
    while frontier:
        new = []
        for p, s in frontier:
            for t in nxt[s]:
                q = _bool_product(p, pats[t])
                key = (q.tobytes(), t)
                if key not in seen:
                    seen.add(key)
                    new.append((q, t))
                    closure.append(q)
        frontier = new
    reach = np.zeros_like(closure[0])
    st = False
    for p in closure:
        reach |= p
        st = st or bool(p.all(axis=0).any())
    return {"irr": bool(reach.all()), "st": st}


def permuted(spec: EnvironmentSpec, order: Sequence[int]) -> EnvironmentSpec:
    """Same environment law with its states relabelled by ``order``."""
    order = list(order)
    d = spec.driver
    if isinstance(d, IIDWeights):
        d = IIDWeights([d.weights[i] for i in order])
    elif isinstance(d, MarkovChain):
        d = MarkovChain(d.transition[np.ix_(order, order)])
    pert = None if spec.perturbations is None else [spec.perturbations[i] for i in order]
    return EnvironmentSpec([spec.matrices[i] for i in order], d, pert, spec.perturbation_bound)
