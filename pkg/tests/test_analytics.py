import math

import numpy as np
import pytest

from branch2.analytics import (
    GeneratorReport,
    StateTooLargeError,
    UnsupportedTestFunction,
    apply_generator_dual,
    apply_generator_limit,
    apply_generator_particle,
    duality_residual,
    gap_test_functions,
    generator_gap,
    moment_bound,
    state_battery,
    yule_factorial_moment,
    yule_pgf,
)
from branch2.model import (
    CellWeight,
    DualState,
    Params,
    TestFunction,
    constant_test_function,
    eval_polynomial,
    exponential_test_function,
    product_test_function,
)
from branch2.rng import replicate_rng


class TestYule:
    def test_pgf(self):
        assert yule_pgf(3, 1.0, 0.0, 0.4) == pytest.approx(0.4**3)
        assert yule_pgf(1, 1.0, math.log(2), 0.5) == pytest.approx(1 / 3)
        assert yule_pgf(2, 1.0, math.log(2), 0.5) == pytest.approx(1 / 9)

    def test_pgf_range_and_monotone(self):
        vals = [yule_pgf(2, 0.7, t, 0.8) for t in np.linspace(0, 4, 15)]
        assert all(0 < v <= 1 for v in vals)
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_factorial_moment(self):
        assert yule_factorial_moment(1, 1.0, 1.0, 1) == pytest.approx(math.e)
        assert yule_factorial_moment(3, 1.0, 0.0, 2) == 12
        assert yule_factorial_moment(1, 1.0, 1.0, 2) == pytest.approx(14.778112197861300)

    def test_factorial_moment_against_geometric_law(self):
        # from one ancestor W_t is geometric with success probability e^{-rt}
        r, t = 0.8, 1.3
        p = math.exp(-r * t)
        k = np.arange(1, 20_000)
        pmf = p * (1 - p) ** (k - 1)
        for m in (1, 2, 3):
            rising = np.prod([k + j for j in range(m)], axis=0)
            assert math.fsum(pmf * rising) == pytest.approx(yule_factorial_moment(1, r, t, m), rel=1e-10)


class TestLimitGenerator:
    def test_branching_example(self):
        F = exponential_test_function([1.0])
        p = Params(split_rate_base=1.0, theta=0.5, sigma=1.0, capital_K=1.0, lam=0.0)
        assert apply_generator_limit(F, [1.0], p, "branching") == pytest.approx(0.0, abs=1e-15)

    def test_split_example(self):
        F = exponential_test_function([1.0])
        p = Params(split_rate_base=1.0, theta=0.5)
        assert apply_generator_limit(F, [1.0], p, "split") == pytest.approx(2 * math.exp(-0.5) - math.exp(-1))
        assert apply_generator_limit(F, [1.0], p, "split") == pytest.approx(0.84518, abs=1e-5)

    def test_constant_f_has_no_branching(self):
        F = constant_test_function(2.0, m=2)
        p = Params(sigma=3.0, capital_K=2.0, lam=1.0)
        assert apply_generator_limit(F, [0.5, 1.0, 4.0], p, "branching") == 0.0

    def test_missing_partials(self):
        F = TestFunction(CellWeight(), 1, lambda Z: Z[..., 0])
        with pytest.raises(UnsupportedTestFunction):
            apply_generator_limit(F, [1.0], Params())

    def test_parts_sum(self):
        F = gap_test_functions()[1]
        p = Params(split_rate_base=0.9, theta=0.3, sigma=0.7, capital_K=0.4, lam=0.2)
        nu = [0.5, 1.5, 2.0]
        total = apply_generator_limit(F, nu, p)
        parts = apply_generator_limit(F, nu, p, "split") + apply_generator_limit(F, nu, p, "branching")
        assert total == pytest.approx(parts, rel=1e-14)

    def test_against_finite_differences(self):
        # branching part = d/dh E[F] along the deterministic drift when sigma = 0
        p = Params(sigma=0.0, capital_K=0.8, lam=0.3)
        F = exponential_test_function([0.4, 1.1])
        nu = np.array([0.5, 2.0, 1.0])
        h = 1e-6
        moved = nu + h * nu * (p.capital_K - p.lam * nu)
        fd = (eval_polynomial(F, moved) - eval_polynomial(F, nu)) / h
        assert apply_generator_limit(F, nu, p, "branching") == pytest.approx(fd, rel=1e-5)


class TestParticleGenerator:
    def test_split_counts_cells(self):
        F = constant_test_function(1.0, m=1)
        p = Params(split_rate_base=2.5, zeta=0.5)
        assert apply_generator_particle(F, [0, 3, 1, 0], p, "split") == pytest.approx(2.5 * 4)

    def test_birth_death_linear(self):
        F = product_test_function(lambda z: z, lambda z: np.ones_like(z), lambda z: np.zeros_like(z), m=1)
        assert apply_generator_particle(F, [1], Params(sigma=1.0, capital_K=0.0, zeta=1.0), "branching") == 0.0
        assert apply_generator_particle(F, [1], Params(sigma=1.0, capital_K=2.0, zeta=1.0), "branching") == 2.0

    def test_too_large(self):
        F = constant_test_function(1.0, m=1)
        with pytest.raises(StateTooLargeError):
            apply_generator_particle(F, [6000, 5000], Params(zeta=0.001))

    def test_brute_force_one_cell(self):
        # enumerate the generator row of a single small cell by hand
        p = Params(split_rate_base=1.3, theta=0.3, sigma=0.6, capital_K=0.4, lam=0.7, zeta=0.5)
        F = exponential_test_function([0.8], g=CellWeight("geometric", 0.9))
        n = 2
        z = n * p.zeta
        base = eval_polynomial(F, [z])
        split = sum(
            math.comb(n, k) * p.theta**k * (1 - p.theta) ** (n - k)
            * (eval_polynomial(F, [k * p.zeta, (n - k) * p.zeta]) - base)
            for k in range(n + 1)
        )
        birth = (p.sigma / p.zeta + p.capital_K) * n * (eval_polynomial(F, [z + p.zeta]) - base)
        death = n * (p.sigma / p.zeta + p.lam * (z - p.zeta)) * (eval_polynomial(F, [z - p.zeta]) - base)
        expect = p.r * split + birth + death
        assert apply_generator_particle(F, [n], p) == pytest.approx(expect, rel=1e-13)


class TestDualGenerator:
    def test_zero_marks_no_branching(self):
        s = DualState(1.0, (0.0,))
        assert apply_generator_dual([1.0, 2.0], s, Params(sigma=2.0, capital_K=1.0, lam=3.0), "branching") == 0.0

    def test_disaster_example(self):
        s = DualState(1.0, (1.0,))
        val = apply_generator_dual([1.0], s, Params(split_rate_base=1.0, theta=0.5), "disaster")
        assert val == pytest.approx(2 * math.exp(-0.5) - 2 * math.exp(-1))
        assert val == pytest.approx(0.47731, abs=1e-5)

    def test_flow_vanishes_at_q_one(self):
        assert apply_generator_dual([1.0, 3.0], DualState(1.0, (0.4,)), Params(), "flow") == 0.0


class TestResidual:
    def test_trivial_state(self):
        res, _ = duality_residual([1.0], DualState(1.0, (0.0,)), Params(split_rate_base=1.0))
        assert res == 0.0

    def test_pinned_state(self):
        p = Params(split_rate_base=1.3, theta=0.4, sigma=0.8, capital_K=0.5, lam=0.2)
        res, gen = duality_residual([1.0, 2.0], DualState(0.7, (0.3, 1.1)), p)
        assert abs(res) <= 1e-8 * (1 + abs(gen))

    def test_randomized(self):
        rng = replicate_rng(123, 0)
        for _ in range(200):
            n = int(rng.integers(1, 5))
            nu = rng.uniform(0, 5, n)
            m = int(rng.integers(1, 4))
            s = DualState(float(rng.uniform(0.01, 1.0)), tuple(rng.uniform(0, 3, m)))
            p = Params(split_rate_base=float(rng.uniform(0.1, 3)), theta=float(rng.uniform(0.01, 0.99)),
                       sigma=float(rng.uniform(0, 2)), capital_K=float(rng.uniform(-2, 2)),
                       lam=float(rng.uniform(0, 2)))
            res, gen = duality_residual(nu, s, p)
            assert abs(res) <= 1e-8 * (1 + abs(gen))

    def test_wrong_role_assignment_breaks_identity(self):
        # swapping sigma and lam in the dual diffusion must be detected
        p = Params(split_rate_base=1.0, theta=0.4, sigma=0.3, capital_K=0.5, lam=1.4)
        q = Params(split_rate_base=1.0, theta=0.4, sigma=1.4, capital_K=0.5, lam=0.3)
        nu, s = [1.0, 2.0], DualState(0.7, (0.6, 1.1))
        from branch2.analytics import dual_test_function
        wrong = apply_generator_limit(dual_test_function(s), nu, p) - (
            apply_generator_dual(nu, s, q) + s.q * p.r * s.m**2 * eval_polynomial(dual_test_function(s), nu))
        assert abs(wrong) > 1e-3


class TestGap:
    def test_battery_on_grid(self):
        for masses in state_battery():
            assert 1 <= len(masses) <= 4
            assert all(0 <= z <= 5 and (2 * z) == int(2 * z) for z in masses)

    def test_off_grid(self):
        F = gap_test_functions()[0]
        with pytest.raises(ValueError):
            generator_gap(F, 0.3, [(1.0,)], Params())

    def test_constant_function_branching_gap_is_zero(self):
        F = constant_test_function(1.0, m=1)
        assert generator_gap(F, 0.1, state_battery(), Params(sigma=1.0, capital_K=0.5), "branching") == 0.0

    def test_smooth_gap_first_order(self):
        F = gap_test_functions()[0]
        p = Params(split_rate_base=1.0, sigma=1.0, capital_K=0.5, lam=0.3)
        a = generator_gap(F, 0.02, state_battery(), p)
        b = generator_gap(F, 0.01, state_battery(), p)
        assert a / b == pytest.approx(2.0, rel=0.05)


class TestMomentBound:
    def test_p1(self):
        p = Params(split_rate_base=1.2, sigma=3.0, capital_K=0.5)
        assert moment_bound(1, 2.0, p, 3.0) == pytest.approx(3.0 * math.exp(1.7 * 2.0))

    def test_t0(self):
        assert moment_bound(3, 0.0, Params(capital_K=2.0), 4.5) == 4.5

    def test_p2_constant(self):
        p = Params(split_rate_base=1.0, sigma=0.5, capital_K=2.0)
        assert moment_bound(2, 1.0, p, 1.0) == pytest.approx(math.exp(1.0 + 2.0 * 4 + 0.5 * 2))


def test_report_json():
    rep = GeneratorReport(params=Params().to_dict(), states=[[1.0]], residuals=[0.0])
    assert '"residuals": [0.0]' in rep.to_json()
