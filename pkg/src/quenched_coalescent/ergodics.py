"""Products of random stochastic matrices and effective-size factors.

The random stationary vector ``gamma`` is read off the backward product
``M(omega_{-u}) ... M(omega_0)`` whose columns flatten as ``u`` grows.  The
column minima ``alpha`` and maxima ``beta`` bracket ``gamma`` at every step,
so the interval width is a certificate of the error.

Factors (``a`` = island proportions):

* ``c_f = sum_k gamma_k**2 / a_k``            -- fixed environment
* ``c_q = sum_k E[gamma_k**2] / a_k``         -- quenched
* ``c_a = sum_k E[gamma_k]**2 / a_k``         -- annealed
* ``c_q - c_a = sum_k Var(gamma_k) / a_k``
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as _rng
from .model import EnvironmentSpec, EnvironmentStream, IslandStructure

DEFAULT_TOL = 1e-10
DEFAULT_MAX_STEPS = 10_000
DEFAULT_WARMUP = 1_000


class NonConvergenceError(RuntimeError):
    """Backward product did not flatten within ``max_steps``."""

    def __init__(self, message: str, estimate: "StationaryVectorEstimate | None" = None):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class StationaryVectorEstimate:
    gamma: np.ndarray
    oscillation: float
    steps_used: int
    alpha: np.ndarray
    beta: np.ndarray
    history: np.ndarray = field(repr=False)  # certified oscillation after each step


def forward_product(matrices: Sequence[np.ndarray], L: int | None = None) -> np.ndarray:
    """Left-to-right product ``B1 @ B2 @ ... @ Bu``; identity when empty."""
    if len(matrices) == 0:
        if L is None:
            raise ValueError("empty product needs the dimension L")
        return np.eye(L)
    out = np.array(matrices[0], dtype=float)
    for B in matrices[1:]:
        B = np.asarray(B, dtype=float)
        if B.shape[0] != out.shape[1]:
            raise ValueError(f"dimension mismatch: {out.shape} @ {B.shape}")
        out = out @ B
    return out


def column_oscillation(R: np.ndarray) -> float:
    return float(np.max(R.max(axis=0) - R.min(axis=0)))


def _midpoint(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    g = 0.5 * (alpha + beta)
    return g / g.sum()


def backward_stationary(stream: EnvironmentStream, tol: float = DEFAULT_TOL,
                        max_steps: int = DEFAULT_MAX_STEPS) -> StationaryVectorEstimate:
    """Certified stationary vector from the backward product of ``stream``.

    Each newly drawn matrix is one generation further in the past and
    left-multiplies the running product.  The per-column bracket
    ``[alpha_k, beta_k]`` only shrinks, so the reported oscillation is
    non-increasing step by step.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mats = stream.spec.stacked()
    L = mats.shape[1]
    R = np.eye(L)
    alpha = np.zeros(L)
    beta = np.ones(L)
    history = []
    osc = 1.0
    steps = 0
    while steps < max_steps:
        (s,) = stream.next_states(1)
        R = mats[s] @ R
        steps += 1
        alpha = np.maximum(alpha, R.min(axis=0))
        beta = np.minimum(beta, R.max(axis=0))
        beta = np.maximum(beta, alpha)
        osc = float(np.max(beta - alpha))
        history.append(osc)
        if osc <= tol:
            break
    est = StationaryVectorEstimate(
        gamma=_midpoint(alpha, beta), oscillation=osc, steps_used=steps,
        alpha=alpha, beta=beta, history=np.asarray(history),
    )
    if osc > tol:
        raise NonConvergenceError(
            f"backward product oscillation {osc:.3g} > tol {tol:g} after {steps} steps "
            "(the positivity condition may fail)", est)
    return est


def draw_gamma(spec: EnvironmentSpec, seed: int, stream_id: int,
               tol: float = DEFAULT_TOL, max_steps: int = DEFAULT_MAX_STEPS) -> StationaryVectorEstimate:
    """One realization of the random stationary vector on its own stream."""
    stream = EnvironmentStream(spec, seed, stream_id, reverse=True, domain=_rng.GAMMA)
    return backward_stationary(stream, tol, max_steps)


def c_f_factor(a: Sequence[float], gamma: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if a.shape != gamma.shape:
        raise ValueError(f"dimension mismatch: a{a.shape} vs gamma{gamma.shape}")
    return float(np.sum(gamma**2 / a))


# ----------------------------------------------------------------------------
# replicate estimator


@dataclass
class EPSReport:
    gamma_mean: np.ndarray
    gamma_second_moment: np.ndarray
    gamma_variance: np.ndarray
    c_f: float | None
    c_a: float
    c_q: float
    gap: float
    weighted_variance: float  # sum_k Var(gamma_k) / a_k from the same moments
    std_errors: dict
    replicates: int
    seed: int
    a: tuple = ()
    max_steps_used: int = 0

    def to_record(self) -> dict:
        rec = {
            "c_f": self.c_f,
            "c_a": self.c_a,
            "c_q": self.c_q,
            "gap": self.gap,
            "weighted_variance": self.weighted_variance,
            "gamma_mean": self.gamma_mean.tolist(),
            "gamma_second_moment": self.gamma_second_moment.tolist(),
            "gamma_variance": self.gamma_variance.tolist(),
            "std_errors": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                           for k, v in self.std_errors.items()},
            "replicates": self.replicates,
            "seed": self.seed,
            "a": list(self.a),
        }
        return rec

    def csv_header(self) -> list[str]:
        L = len(self.gamma_mean)
        cols = ["c_f", "c_a", "c_q", "gap"]
        for k in range(1, L + 1):
            cols += [f"gamma_mean_{k}", f"gamma_sq_{k}", f"gamma_var_{k}"]
        cols += ["se_c_a", "se_c_q", "se_gap"]
        for k in range(1, L + 1):
            cols += [f"se_gamma_mean_{k}", f"se_gamma_sq_{k}", f"se_gamma_var_{k}"]
        return cols + ["replicates", "seed"]

    def csv_row(self) -> list:
        se = self.std_errors
        row = ["" if self.c_f is None else repr(self.c_f), repr(self.c_a), repr(self.c_q), repr(self.gap)]
        for k in range(len(self.gamma_mean)):
            row += [repr(float(self.gamma_mean[k])), repr(float(self.gamma_second_moment[k])),
                    repr(float(self.gamma_variance[k]))]
        row += [repr(se["c_a"]), repr(se["c_q"]), repr(se["gap"])]
        for k in range(len(self.gamma_mean)):
            row += [repr(float(se["gamma_mean"][k])), repr(float(se["gamma_second_moment"][k])),
                    repr(float(se["gamma_variance"][k]))]
        return row + [self.replicates, self.seed]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2, sort_keys=True)


def _gamma_block(args) -> tuple[np.ndarray, int]:
    spec, seed, ids, tol, max_steps = args
    out = np.empty((len(ids), spec.L))
    worst = 0
    for i, sid in enumerate(ids):
        est = draw_gamma(spec, seed, sid, tol, max_steps)
        out[i] = est.gamma
        worst = max(worst, est.steps_used)
    return out, worst


def sample_gammas(spec: EnvironmentSpec, seed: int, replicates: int, tol: float = DEFAULT_TOL,
                  max_steps: int = DEFAULT_MAX_STEPS, workers: int = 1) -> tuple[np.ndarray, int]:
    """``replicates`` independent stationary vectors; stream id = replicate index."""
    block = 1024
    jobs = [(spec, seed, range(s, min(s + block, replicates)), tol, max_steps)
            for s in range(0, replicates, block)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_gamma_block, jobs))
    else:
        parts = [_gamma_block(j) for j in jobs]
    return np.concatenate([p[0] for p in parts]), max(p[1] for p in parts)


def moments_report(gammas: np.ndarray, a: Sequence[float], seed: int = 0,
                   c_f: float | None = None) -> EPSReport:
    """Quenched/annealed factors and standard errors from sampled vectors.

    Standard errors use the sample variance of the per-replicate summands
    (delta method for the annealed factor and the gap).
    """
    a = np.asarray(a, dtype=float)
    R = gammas.shape[0]
    mean = gammas.mean(axis=0)
    second = (gammas**2).mean(axis=0)
    var = second - mean**2
    c_q = float(np.sum(second / a))
    c_a = float(np.sum(mean**2 / a))
    weighted_var = float(np.sum(var / a))

    root = np.sqrt(R)
    cq_terms = (gammas**2 / a).sum(axis=1)
    ca_terms = (gammas * (2 * mean / a)).sum(axis=1)
    se = {
        "c_q": float(cq_terms.std(ddof=1) / root),
        "c_a": float(ca_terms.std(ddof=1) / root),
        "gap": float((cq_terms - ca_terms).std(ddof=1) / root),
        "gamma_mean": gammas.std(axis=0, ddof=1) / root,
        "gamma_second_moment": (gammas**2).std(axis=0, ddof=1) / root,
        "gamma_variance": ((gammas - mean) ** 2).std(axis=0, ddof=1) / root,
    }
    return EPSReport(
        gamma_mean=mean, gamma_second_moment=second, gamma_variance=var,
        c_f=c_f, c_a=c_a, c_q=c_q, gap=c_q - c_a, weighted_variance=weighted_var,
        std_errors=se, replicates=R, seed=seed, a=tuple(a.tolist()),
    )


def estimate_eps(spec: EnvironmentSpec, structure: IslandStructure, seed: int,
                 replicates: int, tol: float = DEFAULT_TOL,
                 max_steps: int = DEFAULT_MAX_STEPS, workers: int = 1) -> EPSReport:
    """Monte Carlo ``c_q``, ``c_a`` and their gap over independent vectors.

    ``c_f`` is filled in only when the environment is constant.  Raises
    :class:`NonConvergenceError` if any replicate fails to flatten.
    """
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    structure.check()
    spec.check()
    gammas, worst = sample_gammas(spec, seed, replicates, tol, max_steps, workers)
    c_f = c_f_factor(structure.a, gammas[0]) if spec.is_constant() else None
    report = moments_report(gammas, structure.a, seed=seed, c_f=c_f)
    report.max_steps_used = worst
    return report


# ----------------------------------------------------------------------------
# single-path estimator


def warm_gamma(mats: np.ndarray, states: np.ndarray) -> tuple[np.ndarray, float]:
    """Stationary vector after the chronological product of a warm-up path."""
    L = mats.shape[1]
    R = np.eye(L)
    for s in states:
        R = R @ mats[s]
    alpha, beta = R.min(axis=0), R.max(axis=0)
    return _midpoint(alpha, beta), float(np.max(beta - alpha))


def gamma_path(mats: np.ndarray, gamma0: np.ndarray, states: np.ndarray) -> np.ndarray:
    """``gamma^(j) = gamma^(j-1) @ M(omega_j)`` for j = 1..len(states)."""
    out = np.empty((len(states), mats.shape[1]))
    g = np.array(gamma0, dtype=float)
    for j, s in enumerate(states):
        g = g @ mats[s]
        g /= g.sum()
        out[j] = g
    return out


def ergodic_path_c(spec: EnvironmentSpec, structure: IslandStructure, seed: int,
                   path_length: int, warmup: int = DEFAULT_WARMUP,
                   stream_id: int = 0) -> np.ndarray:
    """Per-generation factors ``c^(j) = sum_k gamma_k^(j)**2 / a_k`` on one path."""
    if path_length < 1:
        raise ValueError("path_length must be >= 1")
    mats = spec.stacked()
    stream = EnvironmentStream(spec, seed, stream_id, domain=_rng.ERGODIC)
    states = stream.next_states(warmup + path_length)
    g0, osc = warm_gamma(mats, states[:warmup])
    if osc > 1e-6:
        raise NonConvergenceError(f"warm-up of {warmup} steps left oscillation {osc:.3g}")
    gam = gamma_path(mats, g0, states[warmup:])
    return (gam**2 / structure.proportions).sum(axis=1)


def ergodic_average_cq(spec: EnvironmentSpec, structure: IslandStructure, seed: int,
                       path_length: int, warmup: int = DEFAULT_WARMUP) -> float:
    """Path average of ``c^(j)``: a single-trajectory estimate of ``c_q``."""
    return float(ergodic_path_c(spec, structure, seed, path_length, warmup).mean())


def batch_means_se(x: np.ndarray, batches: int = 50) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    m = x.size // batches
    if m < 1:
        raise ValueError("series too short for batch means")
    means = x[: m * batches].reshape(batches, m).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))
