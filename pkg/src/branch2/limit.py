"""Limit model: logistic Feller diffusion inside each cell, Yule cell division."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as kn
from .model import InvalidParamsError, LimitState, Params
from .particle import _check_times
from .rng import replicate_rng, run_replicates


def feller_forward_step(x: float, dt: float, params: Params, rng: np.random.Generator) -> float:
    """One full-truncation Euler step of dX = X(K - lam X)dt + sqrt(2 sigma X) dB."""
    if x < 0:
        raise ValueError("mass must be nonnegative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if x == 0.0:
        return 0.0
    return float(kn.logistic_feller_step(float(x), float(dt), params.capital_K, params.lam,
                                         params.sigma, rng.standard_normal()))


def default_dt(params: Params, masses: Sequence[float]) -> float:
    top = max(masses) if len(masses) else 0.0
    return 1e-3 / max(1.0, params.capital_K + params.lam * top)


@dataclass
class LimitTrajectory:
    initial: LimitState
    params: Params
    dt: float
    obs_times: np.ndarray
    snapshots: list[np.ndarray]
    split_times: np.ndarray

    def cell_counts(self) -> list[int]:
        return [s.size for s in self.snapshots]


def _check_limit_params(params: Params) -> None:
    if params.split_exponent != 0:
        raise InvalidParamsError("the limit model supports a constant split rate only (split_exponent = 0)")


def _masses(init) -> np.ndarray:
    if isinstance(init, LimitState):
        return np.asarray(init.masses, dtype=np.float64)
    return np.asarray(LimitState(tuple(init)).masses, dtype=np.float64)


def _run(x0, params, t_end, dt, obs, rng):
    rec_obs, rec_x, splits = kn.run_limit(
        x0, float(params.split_rate_base), float(params.theta), float(params.sigma),
        float(params.capital_K), float(params.lam), float(t_end), float(dt), obs, rng,
    )
    # DFS visits cells in lineage order; regroup per observation time
    order = np.argsort(rec_obs, kind="stable")
    rec_obs = rec_obs[order]
    rec_x = rec_x[order]
    bounds = np.searchsorted(rec_obs, np.arange(obs.size + 1))
    snaps = [rec_x[bounds[i]:bounds[i + 1]] for i in range(obs.size)]
    return snaps, np.sort(splits)


def simulate_limit(
    init: LimitState | Sequence[float],
    params: Params,
    t_end: float,
    dt: float | None = None,
    obs_times: Iterable[float] | None = None,
    seed: int | np.random.Generator = 0,
) -> LimitTrajectory:
    """One realization. Split times are exact; only the diffusion is discretized."""
    _check_limit_params(params)
    x0 = _masses(init)
    obs = _check_times(t_end, obs_times)
    dt = default_dt(params, x0) if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else replicate_rng(seed, 0)
    snaps, splits = _run(x0, params, t_end, dt, obs, rng)
    return LimitTrajectory(LimitState(tuple(x0)), params, float(dt), obs, snaps, splits)


def simulate_limit_replicates(init, params: Params, t_end: float, dt: float | None = None, obs_times=None,
                              n: int = 1, seed: int = 0, threads: int = 1) -> list[list[np.ndarray]]:
    _check_limit_params(params)
    x0 = _masses(init)
    obs = _check_times(t_end, obs_times)
    dt = default_dt(params, x0) if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be positive")

    def one(i, rng):
        return _run(x0, params, t_end, dt, obs, rng)[0]

    return run_replicates(one, n, seed, threads)
