"""Shared algebra: parameters, states, factorial sampling measure, test functions.

Point configurations are plain sequences of cell masses. Cells are
distinguished by index, so two cells with equal mass still count as two
individuals in the factorial measure.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import stats

MAX_SAMPLE_SIZE = 4


class InvalidParamsError(ValueError):
    pass


@dataclass(frozen=True)
class Params:
    """Model constants.

    ``lam`` is serialized as ``"lambda"``. A zero ``split_rate_base`` or
    ``sigma`` is accepted as a degenerate limit (no splitting, no noise).
    """

    split_rate_base: float = 1.0
    split_exponent: int = 0
    theta: float = 0.5
    sigma: float = 1.0
    capital_K: float = 0.0
    lam: float = 0.0
    zeta: float = 1.0

    def __post_init__(self):
        if not (self.split_rate_base >= 0 and math.isfinite(self.split_rate_base)):
            raise InvalidParamsError(f"split_rate_base must be >= 0, got {self.split_rate_base}")
        if int(self.split_exponent) != self.split_exponent or self.split_exponent < 0:
            raise InvalidParamsError(f"split_exponent must be a nonnegative integer, got {self.split_exponent}")
        if not 0.0 < self.theta < 1.0:
            raise InvalidParamsError(f"theta must lie strictly inside (0, 1), got {self.theta}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise InvalidParamsError(f"sigma must be >= 0, got {self.sigma}")
        if not math.isfinite(self.capital_K):
            raise InvalidParamsError("capital_K must be finite")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise InvalidParamsError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.zeta <= 1.0:
            raise InvalidParamsError(f"zeta must lie in (0, 1], got {self.zeta}")
        object.__setattr__(self, "split_exponent", int(self.split_exponent))

    @property
    def r(self) -> float:
        return self.split_rate_base

    def split_rate(self, z: float) -> float:
        if self.split_exponent == 0:
            return self.split_rate_base
        return self.split_rate_base * (1.0 + z**self.split_exponent)

    def check_particle(self) -> None:
        """Raise unless the per-particle birth rate sigma/zeta + K is nonnegative."""
        if self.sigma / self.zeta + self.capital_K < 0:
            raise InvalidParamsError(
                f"sigma/zeta + K = {self.sigma / self.zeta + self.capital_K} < 0: negative birth rate"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Params":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidParamsError(f"unknown parameter fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "Params":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class ParticleState:
    """Integer particle counts per cell; cell i carries mass zeta * counts[i]."""

    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError("particle counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return len(self.counts)

    def masses(self, zeta: float) -> np.ndarray:
        return zeta * np.asarray(self.counts, dtype=np.float64)

    @classmethod
    def from_masses(cls, masses: Sequence[float], zeta: float, tol: float = 1e-9) -> "ParticleState":
        counts = []
        for z in masses:
            n = round(z / zeta)
            if abs(n * zeta - z) > tol * max(1.0, abs(z)) or n < 0:
                raise ValueError(f"mass {z} is not on the {zeta}-grid")
            counts.append(int(n))
        return cls(tuple(counts))


@dataclass(frozen=True)
class LimitState:
    masses: tuple[float, ...]

    def __post_init__(self):
        masses = tuple(float(z) for z in self.masses)
        if any(not (z >= 0 and math.isfinite(z)) for z in masses):
            raise ValueError("masses must be finite and nonnegative")
        object.__setattr__(self, "masses", masses)

    def __len__(self):
        return len(self.masses)


@dataclass(frozen=True)
class DualState:
    q: float
    marks: tuple[float, ...]
    log_weight: float = 0.0

    def __post_init__(self):
        marks = tuple(float(x) for x in self.marks)
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if len(marks) < 1:
            raise ValueError("a dual state needs at least one mark")
        if any(not (x >= 0 and math.isfinite(x)) for x in marks):
            raise ValueError("marks must be finite and nonnegative")
        if self.log_weight < 0:
            raise ValueError("log_weight must be nonnegative")
        object.__setattr__(self, "marks", marks)

    @property
    def m(self) -> int:
        return len(self.marks)


# -- binomial allocation ----------------------------------------------------

def binomial_split_pmf(n: int, theta: float, k) -> float | np.ndarray:
    """P(k of n particles go to the theta-daughter). ``k`` may be an array."""
    if n < 0 or int(n) != n:
        raise ValueError(f"n must be a nonnegative integer, got {n}")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    ks = np.asarray(k)
    if np.any(ks < 0) or np.any(ks > n) or np.any(ks != np.floor(ks)):
        raise ValueError(f"k must be an integer in [0, {n}]")
    out = stats.binom.pmf(ks, int(n), theta)
    return float(out) if np.ndim(out) == 0 else out


# -- factorial measure -------------------------------------------------------

@lru_cache(maxsize=256)
def ordered_tuples(n: int, m: int) -> np.ndarray:
    """All ordered m-tuples of distinct indices from range(n), shape (T, m)."""
    if m > n:
        return np.empty((0, m), dtype=np.intp)
    idx = np.array(list(itertools.permutations(range(n), m)), dtype=np.intp)
    idx.setflags(write=False)
    return idx.reshape(-1, m)


def _check_m(m: int) -> None:
    if m < 1 or m > MAX_SAMPLE_SIZE:
        raise ValueError(f"sample size m must be in [1, {MAX_SAMPLE_SIZE}], got {m}")


def factorial_integral(nu: Sequence[float], m: int, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """Sum of f over ordered m-tuples of distinct cells of ``nu``.

    ``f`` is evaluated on an array of shape (T, m) and must return shape (T,).
    """
    _check_m(m)
    z = np.asarray(nu, dtype=np.float64)
    if m > z.size:
        return 0.0
    return float(np.sum(f(z[ordered_tuples(z.size, m)])))


def factorial_integral_batch(configs: np.ndarray, m: int, f) -> np.ndarray:
    """Row-wise factorial integral for configurations of equal cell count, shape (B, n)."""
    _check_m(m)
    configs = np.asarray(configs, dtype=np.float64)
    b, n = configs.shape
    if m > n:
        return np.zeros(b)
    return np.sum(f(configs[:, ordered_tuples(n, m)]), axis=-1)


# -- test functions ----------------------------------------------------------

@dataclass(frozen=True)
class CellWeight:
    """Bounded weight g on the cell count.

    kinds: ``"one"`` (g = 1), ``"geometric"`` (g(w) = q**w, q in (0, 1]),
    ``"inverse_power"`` (g(w) = (1 + w)**-a, a > 0).
    """

    kind: str = "one"
    param: float = 1.0

    def __post_init__(self):
        if self.kind == "geometric":
            if not 0.0 < self.param <= 1.0:
                raise ValueError("geometric weight needs q in (0, 1]")
        elif self.kind == "inverse_power":
            if not self.param > 0:
                raise ValueError("inverse_power weight needs a > 0")
        elif self.kind != "one":
            raise ValueError(f"unknown cell weight kind {self.kind!r}")

    def __call__(self, w: int) -> float:
        if self.kind == "one":
            return 1.0
        if self.kind == "geometric":
            return self.param**w
        return (1.0 + w) ** (-self.param)


ONE = CellWeight()


@dataclass(frozen=True)
class TestFunction:
    """F(nu) = g(#cells) * sum of f over ordered distinct m-samples of cell masses.

    ``f(Z)`` maps (..., m) -> (...); ``df(Z, j)`` and ``d2f(Z, j)`` give the first
    and second partial in coordinate j. The partials may be None when only
    values are needed (split terms).
    """

    __test__ = False  # not a pytest class

    g: CellWeight
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray, int], np.ndarray] | None = None
    d2f: Callable[[np.ndarray, int], np.ndarray] | None = None
    name: str = field(default="F", compare=False)

    def __post_init__(self):
        _check_m(self.m)

    def __call__(self, nu: Sequence[float]) -> float:
        return eval_polynomial(self, nu)


def eval_polynomial(F: TestFunction, nu: Sequence[float]) -> float:
    n = len(nu)
    if F.m > n:
        return 0.0
    return F.g(n) * factorial_integral(nu, F.m, F.f)


def exponential_test_function(x: Sequence[float], g: CellWeight = ONE) -> TestFunction:
    """f(z) = exp(-sum_k x_k z_k)."""
    xv = np.asarray(x, dtype=np.float64)

    def f(Z):
        return np.exp(-(Z @ xv))

    def df(Z, j):
        return -xv[j] * f(Z)

    def d2f(Z, j):
        return xv[j] ** 2 * f(Z)

    return TestFunction(g, xv.size, f, df, d2f, name=f"exp(-x.z), x={xv.tolist()}")


def product_test_function(h, dh=None, d2h=None, m: int = 1, g: CellWeight = ONE, name: str = "prod") -> TestFunction:
    """f(z) = prod_k h(z_k) with partials from the product rule."""

    def f(Z):
        return np.prod(h(Z), axis=-1)

    def others(Z, j):
        rest = np.delete(Z, j, axis=-1)
        return np.prod(h(rest), axis=-1) if rest.shape[-1] else np.ones(Z.shape[:-1])

    df = d2f = None
    if dh is not None:
        def df(Z, j):
            return dh(Z[..., j]) * others(Z, j)
    if d2h is not None:
        def d2f(Z, j):
            return d2h(Z[..., j]) * others(Z, j)

    return TestFunction(g, m, f, df, d2f, name=name)


def constant_test_function(c: float = 1.0, m: int = 1, g: CellWeight = ONE) -> TestFunction:
    def f(Z):
        return np.full(Z.shape[:-1], float(c))

    def zero(Z, j):
        return np.zeros(Z.shape[:-1])

    return TestFunction(g, m, f, zero, zero, name=f"const({c})")


# -- dual function -------------------------------------------------------------

def exp_factorial_integral(nu: Sequence[float], x: Sequence[float]) -> float:
    """H(nu, x) = sum over ordered distinct samples of exp(-sum_k x_k z_k)."""
    xv = np.asarray(x, dtype=np.float64)
    return factorial_integral(nu, xv.size, lambda Z: np.exp(-(Z @ xv)))


def eval_dual_function(nu: Sequence[float], s: DualState) -> float:
    n = len(nu)
    if s.m > n:
        return 0.0
    return s.q**n * exp_factorial_integral(nu, s.marks)
