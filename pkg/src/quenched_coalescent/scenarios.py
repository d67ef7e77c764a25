"""Canned environments with closed-form effective-size factors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as _rng
from .ergodics import forward_product
from .model import (
    Constant,
    EnvironmentSpec,
    IIDWeights,
    IslandStructure,
    _block_lengths,
)

# favoured-island-1 / favoured-island-2 matrices of the two-island coin model
COIN_LOW = np.array([[0.5, 0.5], [0.0, 1.0]])
COIN_HIGH = np.array([[1.0, 0.0], [0.5, 0.5]])


@dataclass(frozen=True)
class ScenarioDescriptor:
    name: str
    L: int
    a: tuple[float, ...]
    closed_forms: dict = field(default_factory=dict)  # factor -> (value, formula)


def two_island_coin(a: Sequence[float], N: int | None = None) -> EnvironmentSpec:
    """IID fair coin between ``[[1/2,1/2],[0,1]]`` and ``[[1,0],[1/2,1/2]]``.

    With ``N`` given, the rows are corrected to the exact floor-based
    fractions of the labelling rule (zero correction when they are exact).
    """
    a = tuple(float(x) for x in a)
    if len(a) != 2:
        raise ValueError("two_island_coin needs exactly two proportions")
    pert = None
    if N is not None:
        IslandStructure(a, N).check()
        n1 = math.floor(N * a[0] + 1e-9)
        m2 = N - n1
        # island 2 favoured: individuals 1..[N a1/2] draw parents from island 1
        low = np.array([[math.floor(N * a[0] / 2 + 1e-9) / n1, 0.0], [0.0, 1.0]])
        low[0, 1] = 1 - low[0, 0]
        # island 1 favoured: individuals up to [N(a1 + a2/2)] draw from island 1
        high = np.array([[1.0, 0.0], [(math.floor(N * (a[0] + a[1] / 2) + 1e-9) - n1) / m2, 0.0]])
        high[1, 1] = 1 - high[1, 0]
        pert = [N * (low - COIN_LOW), N * (high - COIN_HIGH)]
    return EnvironmentSpec([COIN_LOW, COIN_HIGH], IIDWeights([0.5, 0.5]), pert,
                           None if pert is None else 2.0)


def favored_island(L: int) -> EnvironmentSpec:
    """Each generation one of ``L`` islands, chosen uniformly, parents everyone."""
    if L < 2:
        raise ValueError("favored_island needs L >= 2")
    mats = [np.tile(np.eye(L)[k], (L, 1)) for k in range(L)]
    return EnvironmentSpec(mats, IIDWeights([1.0 / L] * L))


def dummy_island(a: Sequence[float], N: int) -> EnvironmentSpec:
    """Plain Wright-Fisher population cut into islands by labels.

    Every row of the main matrix is ``a``; the correction ``D`` carries the
    floor-block discrepancy ``len_j - N a_j``, bounded by 1 in absolute value.
    """
    a = tuple(float(x) for x in a)
    IslandStructure(a, N).check()
    L = len(a)
    lengths = np.asarray(_block_lengths(a, N), dtype=float)
    d = lengths - N * np.asarray(a)
    d -= d.sum() / L  # exact zero row sum despite rounding in N*a
    D = np.tile(d, (L, 1))
    return EnvironmentSpec([np.tile(np.asarray(a), (L, 1))], Constant(), [D], float(L))


def closed_forms(name: str, a: Sequence[float]) -> dict:
    a = np.asarray(a, dtype=float)
    inv = float(np.sum(1.0 / a))
    L = len(a)
    if name == "two_island_coin":
        return {
            "c_a": (inv / 4, "(1/4)(1/a_1 + 1/a_2): annealed, mean stationary vector (1/2, 1/2)"),
            "c_q": (inv / 3, "(1/3)(1/a_1 + 1/a_2): quenched, gamma_1 ~ U(0,1) so E[gamma^2] = 1/3"),
        }
    if name == "favored_island":
        return {
            "c_a": (inv / L**2, "(1/L^2) sum 1/a_k: annealed, mean stationary vector uniform"),
            "c_q": (inv / L, "(1/L) sum 1/a_k: quenched, gamma ~ Multinomial(1, 1/L, ..., 1/L)"),
        }
    if name == "dummy_island":
        return {
            "c_f": (1.0, "gamma = a gives sum a_k = 1"),
            "c_a": (1.0, "constant environment: annealed = fixed"),
            "c_q": (1.0, "constant environment: quenched = fixed"),
        }
    raise KeyError(name)


SCENARIO_NAMES = ("two_island_coin", "favored_island", "dummy_island")


def normalize_name(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    aliases = {"coin": "two_island_coin", "two_island": "two_island_coin",
               "favored": "favored_island", "favoured_island": "favored_island",
               "dummy": "dummy_island"}
    key = aliases.get(key, key)
    if key not in SCENARIO_NAMES:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    return key


def build(name: str, a: Sequence[float], N: int | None = None) -> EnvironmentSpec:
    name = normalize_name(name)
    if name == "two_island_coin":
        return two_island_coin(a, N)
    if name == "favored_island":
        return favored_island(len(a))
    return dummy_island(a, N if N is not None else 1000)


def describe(name: str, a: Sequence[float]) -> ScenarioDescriptor:
    name = normalize_name(name)
    a = tuple(float(x) for x in a)
    return ScenarioDescriptor(name, len(a), a, closed_forms(name, a))


# ----------------------------------------------------------------------------
# forward / backward products of the coin model


@dataclass
class ZRecursion:
    eps: np.ndarray
    Z: np.ndarray        # Z_0 .. Z_u
    Z_star: np.ndarray   # Z*_0 .. Z*_u
    forward: np.ndarray  # M_1 ... M_u
    backward: np.ndarray  # M_u ... M_1


def _z_matrix(z: float, u: int) -> np.ndarray:
    h = 2.0**-u
    return np.array([[z, 1 - z], [z - h, 1 - z + h]])


def z_recursions(seed: int, u: int, stream_id: int = 0) -> ZRecursion:
    """Coin products in both orders and their scalar recursions.

    ``eps_j`` is 1/2 when ``M_j = [[1,0],[1/2,1/2]]`` and 0 otherwise, so
    ``Z_{j+1} = Z_j/2 + eps_j`` tracks ``M_1...M_{j+1}``.  The reverse
    product ``M_{j+1}...M_1`` uses the complementary digit
    ``Z*_{j+1} = Z*_j - 2**-j (1/2 - eps_j)``.  Both are checked against
    explicit matrix multiplication to 1e-12.
    """
    if u < 1:
        raise ValueError("u must be >= 1")
    gen = _rng.make_rng(seed, _rng.ZREC, stream_id)
    eps = 0.5 * (gen.random(u) < 0.5)
    mats = [COIN_HIGH if e else COIN_LOW for e in eps]
    Z = np.empty(u + 1)
    Zs = np.empty(u + 1)
    Z[0] = Zs[0] = 1.0
    for j in range(u):
        Z[j + 1] = Z[j] / 2 + eps[j]
        Zs[j + 1] = Zs[j] - 2.0**-j * (0.5 - eps[j])
    fwd = forward_product(mats)
    bwd = forward_product(mats[::-1])
    if np.abs(fwd - _z_matrix(Z[u], u)).max() > 1e-12:
        raise AssertionError("forward product does not match the Z recursion")
    if np.abs(bwd - _z_matrix(Zs[u], u)).max() > 1e-12:
        raise AssertionError("backward product does not match the Z* recursion")
    return ZRecursion(eps, Z, Zs, fwd, bwd)


def ks_uniform(samples: Sequence[float]) -> float:
    """Two-sided Kolmogorov-Smirnov distance to U(0, 1)."""
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    if m < 100:
        raise ValueError("ks_uniform needs at least 100 samples")
    if x[0] < 0 or x[-1] > 1:
        raise ValueError("samples must lie in [0, 1]")
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - x), np.max(x - (i - 1) / m)))


def ks_critical(m: int, level: float = 0.01) -> float:
    """Asymptotic two-sided KS critical value ``c(level) / sqrt(m)``."""
    c = {0.01: 1.628, 0.05: 1.358, 0.10: 1.224}[level]
    return c / math.sqrt(m)
