"""Run configuration: YAML file + command-line overrides.

Key schema::

    scenario: two-island-coin        # or give an explicit env block
    islands:
      a: [0.5, 0.5]
      N: 2000
    env:
      kind: iid                      # constant | iid | markov
      weights: [0.5, 0.5]            # iid only
      matrices:                      # one row-major list per state
        - [0.5, 0.5, 0.0, 1.0]
        - [1.0, 0.0, 0.5, 0.5]
      markov: [0.9, 0.1, 0.2, 0.8]   # markov only, row-major K x K
      perturbations: [[...], ...]    # optional, row-major L x L per state
      perturbation_bound: 1.0
    seed: 7
    reps: 20000
    workers: 1
    out_dir: results
    eps: {tol: 1.0e-10, max_steps: 10000, path_length: 100000, warmup: 1000}
    simulate: {n: 2, policy: stationary, islands: [0, 1], cap: 200000}
    moehle: {n: 3, t: [1.0], N: [100, 200, 400, 800], mode: fixed, seeds: 20}
    ergodics: {u: 30, samples: 10000, paths: 5}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import scenarios
from .model import Constant, EnvironmentSpec, IIDWeights, IslandStructure, MarkovChain


class ConfigError(ValueError):
    pass


def parse_proportions(value) -> tuple[float, ...]:
    """``"0.3,0.7"``, ``"1/3,1/3,1/3"`` or a list of numbers / fraction strings."""
    items = value.split(",") if isinstance(value, str) else list(value)
    try:
        return tuple(float(Fraction(str(x).strip())) for x in items)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse island proportions {value!r}") from exc


def _square(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        return arr
    k = int(round(math.sqrt(arr.size)))
    if arr.ndim != 1 or k * k != arr.size:
        raise ConfigError(f"{name}: expected a square matrix as a row-major list")
    return arr.reshape(k, k)


def env_from_mapping(env: dict) -> EnvironmentSpec:
    kind = str(env.get("kind", "iid")).lower()
    if "matrices" not in env:
        raise ConfigError("env.matrices is required")
    mats = [_square(m, f"env.matrices[{i}]") for i, m in enumerate(env["matrices"])]
    if kind == "constant":
        driver = Constant()
    elif kind == "iid":
        w = env.get("weights")
        driver = IIDWeights(w if w is not None else [1.0 / len(mats)] * len(mats))
    elif kind == "markov":
        if "markov" not in env:
            raise ConfigError("env.markov is required for kind: markov")
        driver = MarkovChain(_square(env["markov"], "env.markov"))
    else:
        raise ConfigError(f"env.kind must be constant, iid or markov, not {kind!r}")
    pert = env.get("perturbations")
    if pert is not None:
        pert = [_square(d, f"env.perturbations[{i}]") for i, d in enumerate(pert)]
    return EnvironmentSpec(mats, driver, pert, env.get("perturbation_bound"))


def env_to_mapping(spec: EnvironmentSpec) -> dict:
    d = spec.driver
    out: dict[str, Any] = {"matrices": [m.ravel().tolist() for m in spec.matrices]}
    if isinstance(d, Constant):
        out["kind"] = "constant"
    elif isinstance(d, IIDWeights):
        out["kind"] = "iid"
        out["weights"] = list(d.weights)
    else:
        out["kind"] = "markov"
        out["markov"] = d.transition.ravel().tolist()
    if spec.perturbations is not None:
        out["perturbations"] = [p.ravel().tolist() for p in spec.perturbations]
        out["perturbation_bound"] = spec.perturbation_bound
    return out


@dataclass
class RunConfig:
    scenario: str | None = None
    a: tuple[float, ...] | None = None
    N: int = 1000
    env: dict | None = None
    seed: int = 0
    reps: int | None = None
    workers: int = 1
    out_dir: str = "results"
    options: dict = field(default_factory=dict)

    def structure(self) -> IslandStructure:
        if self.a is None:
            raise ConfigError("island proportions (islands.a / --a) are required")
        st = IslandStructure(self.a, self.N)
        probs = st.problems()
        if probs:
            raise ConfigError("; ".join(probs))
        return st

    def spec(self, N: int | None = None) -> EnvironmentSpec:
        """Environment at population size ``N`` (defaults to the configured N)."""
        N = self.N if N is None else N
        if self.scenario is not None:
            if self.a is None:
                raise ConfigError("island proportions (islands.a / --a) are required")
            try:
                return scenarios.build(self.scenario, self.a, N)
            except KeyError as exc:
                raise ConfigError(str(exc.args[0])) from exc
        if self.env is None:
            raise ConfigError("give --scenario or an env block in --config")
        return env_from_mapping(self.env)

    def resolved(self) -> dict:
        """Everything that determines the numbers.  ``workers`` and ``out_dir``
        are left out: they never change a result."""
        rec = {"scenario": self.scenario, "a": None if self.a is None else list(self.a),
               "N": self.N, "seed": self.seed, "reps": self.reps, "options": self.options}
        try:
            rec["env"] = env_to_mapping(self.spec())
        except (ConfigError, ValueError):
            rec["env"] = self.env
        return rec


def load_file(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return data


def from_mapping(data: dict, command: str | None = None) -> RunConfig:
    islands = data.get("islands", {}) or {}
    cfg = RunConfig(
        scenario=data.get("scenario"),
        a=parse_proportions(islands["a"]) if "a" in islands else None,
        N=int(islands.get("N", 1000)),
        env=data.get("env"),
        seed=int(data.get("seed", 0)),
        reps=data.get("reps"),
        workers=int(data.get("workers", 1)),
        out_dir=str(data.get("out_dir", "results")),
    )
    if command and isinstance(data.get(command), dict):
        cfg.options.update(data[command])
    return cfg
