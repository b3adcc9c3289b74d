"""Closed forms and exact generator evaluations on polynomial test functions."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dual import q_closed_form
from .model import (
    CellWeight,
    DualState,
    ONE,
    ParticleState,
    Params,
    TestFunction,
    binomial_split_pmf,
    eval_dual_function,
    eval_polynomial,
    factorial_integral_batch,
    ordered_tuples,
    product_test_function,
)

MAX_PARTICLES = 10_000
PARTS = ("all", "split", "branching")


class UnsupportedTestFunction(ValueError):
    pass


class StateTooLargeError(MemoryError):
    pass


# -- Yule laws ----------------------------------------------------------------

def yule_pgf(w: int, r: float, t: float, z: float) -> float:
    """E_w[z^{W_t}] for a Yule process of rate r started from w individuals."""
    if w < 1:
        raise ValueError("w must be >= 1")
    if not 0.0 < z <= 1.0:
        raise ValueError("z must lie in (0, 1]")
    return q_closed_form(z, r, t) ** w


def yule_factorial_moment(w: int, r: float, t: float, m: int) -> float:
    """E_w[W (W+1) ... (W+m-1)] = w (w+1) ... (w+m-1) e^{r m t}."""
    if w < 1 or m < 1:
        raise ValueError("w and m must be >= 1")
    return math.prod(range(w, w + m)) * math.exp(r * m * t)


# -- limit generator ---------------------------------------------------------

def _check_part(part: str) -> None:
    if part not in PARTS:
        raise ValueError(f"part must be one of {PARTS}")


def _split_configs(z: np.ndarray, i: int, left: np.ndarray) -> np.ndarray:
    """Rows: z with cell i replaced by left[k] and a new cell z_i - left[k] appended."""
    rows = np.repeat(np.append(z, 0.0)[None, :], left.size, axis=0)
    rows[:, i] = left
    rows[:, -1] = z[i] - left
    return rows


def _branching_sum(F: TestFunction, z: np.ndarray, drift_lin, drift_quad, diff) -> float:
    """g(n) * sum over tuples and coordinates of b(z_j) d_j f + c(z_j) d2_j f."""
    if F.df is None or F.d2f is None:
        raise UnsupportedTestFunction(f"test function {F.name!r} has no analytic partials")
    n = z.size
    if F.m > n:
        return 0.0
    Z = z[ordered_tuples(n, F.m)]
    total = 0.0
    for j in range(F.m):
        zj = Z[:, j]
        total += np.sum(zj * (drift_lin - drift_quad * zj) * F.df(Z, j) + diff * zj * F.d2f(Z, j))
    return F.g(n) * float(total)


def apply_generator_limit(F: TestFunction, nu: Sequence[float], params: Params, part: str = "all") -> float:
    """Limit generator: Yule splits dividing mass theta:(1-theta) plus logistic Feller branching."""
    _check_part(part)
    z = np.asarray(nu, dtype=np.float64)
    out = 0.0
    if part in ("all", "split"):
        base = eval_polynomial(F, z)
        after = F.g(z.size + 1)
        for i in range(z.size):
            row = _split_configs(z, i, np.array([params.theta * z[i]]))
            val = after * factorial_integral_batch(row, F.m, F.f)[0]
            out += params.split_rate(z[i]) * (val - base)
    if part in ("all", "branching"):
        out += _branching_sum(F, z, params.capital_K, params.lam, params.sigma)
    return float(out)


# -- particle generator --------------------------------------------------------

def apply_generator_particle(F: TestFunction, state: ParticleState | Sequence[int], params: Params,
                             part: str = "all") -> float:
    """Exact generator of the individual-based model, summing every binomial allocation."""
    _check_part(part)
    params.check_particle()
    counts = np.asarray(state.counts if isinstance(state, ParticleState) else state, dtype=np.int64)
    if counts.sum() > MAX_PARTICLES:
        raise StateTooLargeError(f"state holds {counts.sum()} particles, limit is {MAX_PARTICLES}")
    zeta = params.zeta
    z = zeta * counts.astype(np.float64)
    n = z.size
    base = eval_polynomial(F, z)
    out = 0.0
    if part in ("all", "split"):
        g_after = F.g(n + 1)
        for i in range(n):
            ks = np.arange(counts[i] + 1)
            w = binomial_split_pmf(int(counts[i]), params.theta, ks)
            w = np.atleast_1d(w)
            rows = _split_configs(z, i, zeta * ks.astype(np.float64))
            vals = g_after * factorial_integral_batch(rows, F.m, F.f)
            out += params.split_rate(z[i]) * (float(np.dot(w, vals)) - base)
    if part in ("all", "branching"):
        g_n = F.g(n)
        for i in range(n):
            ni = counts[i]
            if ni == 0:
                continue
            birth = (params.sigma / zeta + params.capital_K) * ni
            death = ni * (params.sigma / zeta + params.lam * (zeta * ni - zeta))
            up = z.copy()
            up[i] += zeta
            down = z.copy()
            down[i] -= zeta
            vals = g_n * factorial_integral_batch(np.stack([up, down]), F.m, F.f)
            out += birth * (vals[0] - base) + death * (vals[1] - base)
    return float(out)


# -- dual generator -------------------------------------------------------------

def _exp_sum(z: np.ndarray, x: np.ndarray) -> float:
    m = x.size
    if m > z.size:
        return 0.0
    return float(np.sum(np.exp(-(z[ordered_tuples(z.size, m)] @ x))))


def apply_generator_dual(nu: Sequence[float], s: DualState, params: Params, part: str = "all") -> float:
    """Dual generator acting on (q, x) -> q^n * H(nu, x); nu is held fixed.

    parts: "flow" (q drift), "disaster" (mark jumps), "branching" (mark diffusion), "all".
    """
    if part not in ("all", "flow", "disaster", "branching"):
        raise ValueError("part must be one of all, flow, disaster, branching")
    z = np.asarray(nu, dtype=np.float64)
    n = z.size
    q, r, th = s.q, params.r, params.theta
    x = np.asarray(s.marks, dtype=np.float64)
    m = x.size
    # with m > n the value is 0 but a merge can still land on a nonzero state
    qn = q**n
    H = _exp_sum(z, x)
    out = 0.0
    if part in ("all", "flow"):
        # -r q (1-q) d/dq q^n
        out += -r * (1.0 - q) * n * qn * H
    if part in ("all", "disaster"):
        acc = 0.0
        for k in range(m):
            for c in (th, 1.0 - th):
                y = x.copy()
                y[k] *= c
                acc += _exp_sum(z, y) - H
        for k1 in range(m):
            for k2 in range(m):
                if k1 == k2:
                    continue
                y = x.copy()
                y[k1] = th * x[k1] + (1.0 - th) * x[k2]
                acc += _exp_sum(z, np.delete(y, k2)) - H
        out += q * r * qn * acc
    if part in ("all", "branching") and m <= n:
        Z = z[ordered_tuples(n, m)]
        E = np.exp(-(Z @ x))
        acc = 0.0
        for k in range(m):
            xk = x[k]
            acc += np.sum(xk * (params.capital_K - params.sigma * xk) * (-Z[:, k]) * E
                          + params.lam * xk * Z[:, k] ** 2 * E)
        out += qn * float(acc)
    return float(out)


def dual_test_function(s: DualState) -> TestFunction:
    """The dual function as a polynomial in nu: g(w) = q^w, f(z) = exp(-x.z)."""
    x = np.asarray(s.marks, dtype=np.float64)

    def f(Z):
        return np.exp(-(Z @ x))

    def df(Z, j):
        return -x[j] * f(Z)

    def d2f(Z, j):
        return x[j] ** 2 * f(Z)

    g = CellWeight("geometric", s.q) if s.q < 1.0 else ONE
    return TestFunction(g, x.size, f, df, d2f, name="dual")


def duality_residual(nu: Sequence[float], s: DualState, params: Params) -> tuple[float, float]:
    """(residual, limit generator value); the residual should vanish identically."""
    F = dual_test_function(s)
    lhs = apply_generator_limit(F, nu, params)
    rhs = apply_generator_dual(nu, s, params) + s.q * params.r * s.m**2 * eval_dual_function(nu, s)
    return lhs - rhs, lhs


# -- generator convergence -------------------------------------------------------

def state_battery() -> list[tuple[float, ...]]:
    """Pinned states: 1 to 4 cells with masses in multiples of 0.5 up to 5."""
    return [
        (1.0,),
        (2.5,),
        (5.0,),
        (0.5, 1.5),
        (1.0, 1.0),
        (3.0, 0.5),
        (0.0, 2.0),
        (0.5, 1.0, 1.5),
        (2.0, 2.0, 4.5),
        (1.5, 0.0, 3.5),
        (0.5, 1.0, 1.5, 2.0),
        (1.5, 1.5, 0.5, 5.0),
    ]


def _on_grid(masses, zeta: float) -> ParticleState:
    return ParticleState.from_masses(masses, zeta)


def generator_gap(F: TestFunction, zeta: float, states: Sequence[Sequence[float]], params: Params,
                  part: str = "all") -> float:
    """max over states of |particle generator - limit generator|, at particle mass zeta."""
    p = Params(**{**asdict(params), "zeta": zeta})
    gap = 0.0
    for masses in states:
        ps = _on_grid(masses, zeta)
        d = abs(apply_generator_particle(F, ps, p, part) - apply_generator_limit(F, masses, p, part))
        gap = max(gap, d)
    return gap


def kink_test_function(c: float = 0.75, g: CellWeight = CellWeight("inverse_power", 1.0)) -> TestFunction:
    """f(z) = |z - c|: Lipschitz but not smooth at c."""
    return product_test_function(
        lambda z: np.abs(z - c),
        lambda z: np.sign(z - c),
        lambda z: np.zeros_like(z),
        m=1, g=g, name=f"|z-{c}|",
    )


def gap_test_functions() -> list[TestFunction]:
    """Two smooth test functions and one Lipschitz kink."""
    smooth1 = product_test_function(
        lambda z: np.exp(-z), lambda z: -np.exp(-z), lambda z: np.exp(-z), m=1, name="exp(-z)",
    )
    smooth2 = product_test_function(
        lambda z: z * np.exp(-z),
        lambda z: (1.0 - z) * np.exp(-z),
        lambda z: (z - 2.0) * np.exp(-z),
        m=2, g=CellWeight("geometric", 0.9), name="z1 z2 exp(-z1-z2)",
    )
    return [smooth1, smooth2, kink_test_function()]


# -- moments -----------------------------------------------------------------------

def moment_constants(p: int) -> tuple[float, float]:
    return float(p * 2 ** (p - 1)), float(p * (p - 1) * 2.0 ** (p - 2))


def moment_bound(p: int, t: float, params: Params, initial_moment: float) -> float:
    """initial_moment * exp(C_p t) with C_p = r + K C_{p,1} + sigma C_{p,2}."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if initial_moment < 0:
        raise ValueError("initial_moment must be nonnegative")
    c1, c2 = moment_constants(p)
    cp = params.r + params.capital_K * c1 + params.sigma * c2
    return initial_moment * math.exp(cp * t)


# -- report ---------------------------------------------------------------------------

@dataclass
class GeneratorReport:
    """Per-state generator values; residuals are stored as computed."""

    params: dict
    states: list = field(default_factory=list)
    particle: list = field(default_factory=list)
    limit: list = field(default_factory=list)
    dual: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    gaps: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)
