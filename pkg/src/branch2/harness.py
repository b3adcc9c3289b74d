"""Monte-Carlo checks: duality, Yule laws, Gamma scaling, long-term behaviour, moments."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import _kernels as kn
from .analytics import (
    duality_residual,
    gap_test_functions,
    generator_gap,
    moment_bound,
    state_battery,
    yule_factorial_moment,
    yule_pgf,
)
from .dual import q_closed_form, simulate_dual_replicates
from .limit import simulate_limit_replicates
from .model import DualState, ParticleState, Params, eval_dual_function
from .particle import simulate_particle_replicates
from .rng import replicate_rng, run_replicates

Z_SCORE = 3.0


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    n: int
    seed: int | None = None

    @classmethod
    def from_samples(cls, values, seed=None) -> "MCEstimate":
        v = np.asarray(values, dtype=np.float64)
        if v.size < 2:
            raise ValueError("an estimate needs at least 2 replicates")
        # centring on the first sample makes identical samples give se == 0 exactly
        d = v - v[0]
        mean = float(v[0] + np.sum(d) / v.size)
        se = float(np.std(d, ddof=1) / math.sqrt(v.size))
        return cls(mean, se, int(v.size), seed)

    @classmethod
    def exact(cls, value: float) -> "MCEstimate":
        return cls(float(value), 0.0, 0, None)


def agree(a: MCEstimate, b: MCEstimate, z: float = Z_SCORE) -> tuple[bool, float, float]:
    """(|a-b| <= z * combined SE, |a-b|, threshold). A tiny floor absorbs rounding."""
    diff = abs(a.mean - b.mean)
    thr = z * math.hypot(a.se, b.se) + 1e-12 * (1.0 + abs(a.mean) + abs(b.mean))
    return diff <= thr, diff, thr


@dataclass
class CheckReport:
    name: str
    passed: bool
    parameters: dict
    lhs: dict | None = None
    rhs: dict | None = None
    statistic: float | None = None
    threshold: float | None = None
    details: dict = field(default_factory=dict)
    runtime: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("runtime")  # wall time would break byte-identical reruns
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def summary(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: statistic={self.statistic} threshold={self.threshold}"


def _est(e: MCEstimate) -> dict:
    return asdict(e)


# -- duality ---------------------------------------------------------------------

def _forward_masses(model, nu0, params, t_list, n, seed, dt, threads):
    """Per replicate, cell masses at each time in t_list."""
    t_end = max(t_list)
    if model == "particle":
        counts = ParticleState.from_masses(nu0, params.zeta)
        reps = simulate_particle_replicates(counts, params, t_end, t_list, n, seed, threads)
        return [[params.zeta * s.astype(np.float64) for s in snaps] for snaps in reps]
    if model == "limit":
        return simulate_limit_replicates(nu0, params, t_end, dt, t_list, n, seed, threads)
    raise ValueError(f"unknown forward model {model!r}")


def _dual_values(masses_list, s0: DualState) -> np.ndarray:
    return np.array([eval_dual_function(z, s0) for z in masses_list])


def estimate_duality_lhs(nu0, s0: DualState, t: float, params: Params, n: int, seed: int,
                         model: str = "particle", dt: float = 1e-3, threads: int = 1) -> MCEstimate:
    """Mean over forward trajectories of the dual function at time t, marks held at s0."""
    if n < 2:
        raise ValueError("N must be >= 2")
    reps = _forward_masses(model, nu0, params, [t], n, seed, dt, threads)
    return MCEstimate.from_samples(_dual_values([r[0] for r in reps], s0), seed)


def _rhs_values(nu0, s0: DualState, params: Params, t: float, m_t, lw_t, x_t) -> np.ndarray:
    z = np.asarray(nu0, dtype=np.float64)
    qt = q_closed_form(s0.q, params.r, t)
    vals = np.empty(len(m_t))
    for k, (m, lw, x) in enumerate(zip(m_t, lw_t, x_t)):
        st = DualState(qt, tuple(x[:m]))
        vals[k] = math.exp(lw) * eval_dual_function(z, st)
    return vals


def estimate_duality_rhs(nu0, s0: DualState, t: float, params: Params, n: int, seed: int,
                         dt: float = 1e-3, threads: int = 1) -> MCEstimate:
    """Mean over dual trajectories of exp(log-weight) times the dual function at the fixed nu0."""
    if n < 2:
        raise ValueError("N must be >= 2")
    _, reps = simulate_dual_replicates(s0, params, t, dt, [t], n, seed, threads)
    vals = _rhs_values(nu0, s0, params, t, [r[0][0] for r in reps], [r[1][0] for r in reps],
                       [r[2][0] for r in reps])
    return MCEstimate.from_samples(vals, seed)


@dataclass(frozen=True)
class DualityGrid:
    """Pinned grid for the Monte-Carlo duality check."""

    params: Params = Params(split_rate_base=1.0, theta=0.4, sigma=0.5, capital_K=0.5, lam=0.3, zeta=0.02)
    nu0: tuple = (1.0, 0.5)
    qs: tuple = (1.0, 0.7)
    ms: tuple = (1, 2)
    xs: tuple = (0.0, 0.5, 1.5)
    ts: tuple = (0.25, 0.5)
    n: int = 20_000
    dt: float = 1e-3
    model: str = "particle"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d


def check_duality_grid(grid: DualityGrid = DualityGrid(), seed: int = 0, threads: int = 1) -> CheckReport:
    """Every (q, m, x, t) cell of the grid: forward mean vs weighted dual mean.

    The forward sample is shared by all cells; each dual cell has its own stream.
    """
    t0 = time.perf_counter()
    ts = sorted(grid.ts)
    fwd = _forward_masses(grid.model, grid.nu0, grid.params, ts, grid.n, seed, grid.dt, threads)
    cells = []
    passed = True
    worst = 0.0
    idx = 0
    for q in grid.qs:
        for m in grid.ms:
            for x in grid.xs:
                idx += 1
                s0 = DualState(q, (x,) * m)
                dseed = seed + 1000 * idx + 1
                _, dreps = simulate_dual_replicates(s0, grid.params, ts[-1], grid.dt, ts, grid.n, dseed, threads)
                for ti, t in enumerate(ts):
                    lhs = MCEstimate.from_samples(_dual_values([r[ti] for r in fwd], s0), seed)
                    vals = _rhs_values(grid.nu0, s0, grid.params, t, [r[0][ti] for r in dreps],
                                       [r[1][ti] for r in dreps], [r[2][ti] for r in dreps])
                    rhs = MCEstimate.from_samples(vals, dseed)
                    ok, diff, thr = agree(lhs, rhs)
                    z = diff / math.hypot(lhs.se, rhs.se) if lhs.se or rhs.se else 0.0
                    worst = max(worst, z)
                    passed &= ok
                    cells.append({"q": q, "m": m, "x": x, "t": t, "lhs": _est(lhs), "rhs": _est(rhs),
                                  "diff": diff, "threshold": thr, "passed": ok})
    rep = CheckReport("duality", bool(passed), grid.to_dict(), statistic=worst, threshold=Z_SCORE,
                      details={"cells": cells, "seed": seed})
    rep.runtime = time.perf_counter() - t0
    return rep


def check_duality(nu0, s0: DualState, t: float, params: Params, n: int, seed: int = 0,
                  model: str = "particle", dt: float = 1e-3, threads: int = 1) -> CheckReport:
    t0 = time.perf_counter()
    lhs = estimate_duality_lhs(nu0, s0, t, params, n, seed, model, dt, threads)
    rhs = estimate_duality_rhs(nu0, s0, t, params, n, seed + 1, dt, threads)
    ok, diff, thr = agree(lhs, rhs)
    rep = CheckReport("duality", ok, {"params": params.to_dict(), "nu0": list(nu0), "q": s0.q,
                                      "marks": list(s0.marks), "t": t, "n": n, "model": model, "dt": dt},
                      _est(lhs), _est(rhs), diff, thr)
    rep.runtime = time.perf_counter() - t0
    return rep


def check_duality_pointwise(n_states: int = 100, seed: int = 0, tol: float = 1e-8) -> CheckReport:
    """Random small states: limit generator on the dual function vs dual generator plus potential."""
    t0 = time.perf_counter()
    rng = replicate_rng(seed, 0)
    worst = 0.0
    rows = []
    for _ in range(n_states):
        ncell = int(rng.integers(1, 5))
        nu = rng.uniform(0.0, 5.0, ncell)
        m = int(rng.integers(1, 4))
        s = DualState(float(rng.uniform(1e-3, 1.0)), tuple(rng.uniform(0.0, 2.0, m)))
        p = Params(split_rate_base=float(rng.uniform(0.1, 2.0)), theta=float(rng.uniform(0.05, 0.95)),
                   sigma=float(rng.uniform(0.1, 2.0)), capital_K=float(rng.uniform(-1.0, 1.0)),
                   lam=float(rng.uniform(0.0, 2.0)))
        res, gen = duality_residual(nu, s, p)
        rel = abs(res) / (1.0 + abs(gen))
        worst = max(worst, rel)
        rows.append({"nu": nu.tolist(), "q": s.q, "marks": list(s.marks), "residual": res, "generator": gen})
    rep = CheckReport("duality-pointwise", worst <= tol, {"n_states": n_states, "seed": seed},
                      statistic=worst, threshold=tol, details={"states": rows})
    rep.runtime = time.perf_counter() - t0
    return rep


# -- Yule ---------------------------------------------------------------------------

def sample_yule(w: int, r: float, t: float, n: int, seed: int, threads: int = 1) -> np.ndarray:
    """Cell counts W_t of n independent Yule processes started from w."""
    return np.array(run_replicates(lambda i, rng: kn.yule_count(w, r, t, rng), n, seed, threads), dtype=np.int64)


def check_yule(w: int = 1, r: float = 1.0, t: float = 1.0, z: float = 0.5, n: int = 100_000, seed: int = 0,
               moments: Sequence[int] = (1, 2), threads: int = 1) -> CheckReport:
    """Monte-Carlo pgf and rising factorial moments against their closed forms."""
    t0 = time.perf_counter()
    W = sample_yule(w, r, t, n, seed, threads).astype(np.float64)
    pgf = MCEstimate.from_samples(z**W, seed)
    exact = yule_pgf(w, r, t, z)
    ok, diff, thr = agree(pgf, MCEstimate.exact(exact))
    details = {"pgf": {"mc": _est(pgf), "exact": exact, "passed": ok}}
    worst = diff / pgf.se if pgf.se else 0.0
    for m in moments:
        rising = np.ones_like(W)
        for j in range(m):
            rising *= W + j
        est = MCEstimate.from_samples(rising, seed)
        ex = yule_factorial_moment(w, r, t, m)
        okm, dm, _ = agree(est, MCEstimate.exact(ex))
        ok &= okm
        worst = max(worst, dm / est.se if est.se else 0.0)
        details[f"moment_{m}"] = {"mc": _est(est), "exact": ex, "passed": okm}
    rep = CheckReport("yule", bool(ok), {"w": w, "r": r, "t": t, "z": z, "n": n, "seed": seed},
                      _est(pgf), _est(MCEstimate.exact(exact)), worst, Z_SCORE, details)
    rep.runtime = time.perf_counter() - t0
    return rep


# -- goodness of fit ------------------------------------------------------------------

def ks_critical(n: int, alpha: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value, about 1.63/sqrt(n) at alpha = 0.01."""
    return float(stats.kstwobign.isf(alpha) / math.sqrt(n))


def ks_gamma(sample, shape: float) -> float:
    """KS distance between the empirical law of ``sample`` and Gamma(shape, 1)."""
    return float(stats.kstest(np.asarray(sample, dtype=np.float64), stats.gamma(shape).cdf).statistic)


def check_gamma_scaling(w: int = 1, r: float = 1.0, t: float = 8.0, n: int = 10_000, seed: int = 0,
                        alpha: float = 0.01, threads: int = 1) -> CheckReport:
    """e^{-rt} W_t against Gamma(w, 1)."""
    t0 = time.perf_counter()
    W = sample_yule(w, r, t, n, seed, threads)
    scaled = math.exp(-r * t) * W
    d = ks_gamma(scaled, w)
    crit = ks_critical(n, alpha)
    rep = CheckReport("gamma-scaling", d < crit, {"w": w, "r": r, "t": t, "n": n, "seed": seed, "alpha": alpha},
                      statistic=d, threshold=crit, details={"mean_scaled": float(np.mean(scaled))})
    rep.runtime = time.perf_counter() - t0
    return rep


# -- long-term behaviour ------------------------------------------------------------------

LONGTERM_PARAMS = Params(split_rate_base=1.0, theta=0.5, sigma=1.0, capital_K=0.1, lam=1.0)


def check_longterm(nu0: Sequence[float] = (1.0, 1.0), params: Params = LONGTERM_PARAMS,
                   ts: Sequence[float] = (2.0, 4.0, 6.0), n: int = 5_000, eps: float = 0.01,
                   seed: int = 0, dt: float | None = None, alpha: float = 0.01, threads: int = 1) -> CheckReport:
    """Limit model: Gamma(k, 1) law of the rescaled cell count at the last time, and a
    fraction of cells carrying mass above eps that decreases along ``ts``."""
    t0 = time.perf_counter()
    ts = sorted(ts)
    k = len(nu0)
    obs = [0.0] + list(ts)
    reps = simulate_limit_replicates(nu0, params, ts[-1], dt, obs, n, seed, threads)
    fractions = []
    for i, _t in enumerate(obs):
        frac = [float(np.mean(r[i] > eps)) for r in reps]
        fractions.append(MCEstimate.from_samples(frac, seed))
    counts = np.array([r[-1].size for r in reps], dtype=np.float64)
    d = ks_gamma(math.exp(-params.r * ts[-1]) * counts, k)
    crit = ks_critical(n, alpha)
    means = [f.mean for f in fractions[1:]]
    monotone = all(a > b for a, b in zip(means, means[1:]))
    rep = CheckReport(
        "longterm", bool(d < crit and monotone),
        {"nu0": list(nu0), "params": params.to_dict(), "ts": ts, "n": n, "eps": eps, "seed": seed,
         "dt": dt, "alpha": alpha},
        statistic=d, threshold=crit,
        details={"infected_fraction": {str(t): _est(f) for t, f in zip(obs, fractions)},
                 "fraction_decreasing": monotone, "ks_passed": bool(d < crit)},
    )
    rep.runtime = time.perf_counter() - t0
    return rep


# -- generator convergence -----------------------------------------------------------------

GENERATOR_PARAMS = Params(split_rate_base=1.0, theta=0.5, sigma=1.0, capital_K=0.5, lam=0.3)
GAP_ZETAS = (0.1, 0.05, 0.02, 0.01)
RATIO_PAIRS = ((0.1, 0.025), (0.02, 0.005))
RATIO_RANGE = (1.4, 2.8)


def check_generator(params: Params = GENERATOR_PARAMS, zetas: Sequence[float] = GAP_ZETAS) -> CheckReport:
    """Particle vs limit generator on the pinned battery.

    Total gaps must strictly decrease in zeta for every test function. The split-term
    ratio gap(zeta)/gap(zeta/4) is held to the square-root rate on the Lipschitz test
    function; smooth functions converge faster (ratio near 4) and are reported only.
    """
    t0 = time.perf_counter()
    battery = state_battery()
    funcs = gap_test_functions()
    table = {}
    ok = True
    for F in funcs:
        gaps = [generator_gap(F, z, battery, params) for z in zetas]
        decreasing = all(a > b for a, b in zip(gaps, gaps[1:]))
        ratios = [generator_gap(F, a, battery, params, "split") / generator_gap(F, b, battery, params, "split")
                  for a, b in RATIO_PAIRS]
        lipschitz = F.name.startswith("|")
        in_range = all(RATIO_RANGE[0] <= x <= RATIO_RANGE[1] for x in ratios)
        ok &= decreasing and (in_range or not lipschitz)
        table[F.name] = {"zetas": list(zetas), "gaps": gaps, "decreasing": decreasing,
                         "split_ratio_pairs": [list(p) for p in RATIO_PAIRS], "split_ratios": ratios,
                         "ratio_checked": lipschitz, "ratio_in_range": in_range}
    rep = CheckReport("generator-convergence", bool(ok), {"params": params.to_dict(), "battery": battery},
                      threshold=None, details={"functions": table, "ratio_range": list(RATIO_RANGE)})
    rep.runtime = time.perf_counter() - t0
    return rep


# -- moments -----------------------------------------------------------------------------

MOMENT_PARAMS = (
    Params(split_rate_base=1.0, theta=0.5, sigma=1.0, capital_K=0.5, lam=0.5, zeta=0.05),
    Params(split_rate_base=2.0, theta=0.3, sigma=0.5, capital_K=1.0, lam=0.0, zeta=0.05),
)


def _second_moment(masses) -> float:
    z = np.asarray(masses, dtype=np.float64)
    return float(np.sum(1.0 + z * z))


def check_moments(params_sets: Sequence[Params] = MOMENT_PARAMS, nu0: Sequence[float] = (1.0, 0.5),
                  t: float = 1.0, n: int = 10_000, seed: int = 0, threads: int = 1) -> CheckReport:
    """Empirical mean of sum_i (1 + z_i^2) at time t against the exponential moment bound."""
    t0 = time.perf_counter()
    rows = []
    ok = True
    for j, p in enumerate(params_sets):
        counts = ParticleState.from_masses(nu0, p.zeta)
        reps = simulate_particle_replicates(counts, p, t, [t], n, seed + j, threads)
        vals = [_second_moment(p.zeta * r[0]) for r in reps]
        est = MCEstimate.from_samples(vals, seed + j)
        bound = moment_bound(2, t, p, _second_moment(nu0))
        ok &= est.mean <= bound
        rows.append({"params": p.to_dict(), "estimate": _est(est), "bound": bound,
                     "upper_3se": est.mean + Z_SCORE * est.se, "passed": est.mean <= bound})
    rep = CheckReport("moment-bound", bool(ok), {"nu0": list(nu0), "t": t, "n": n, "seed": seed},
                      details={"sets": rows})
    rep.runtime = time.perf_counter() - t0
    return rep
