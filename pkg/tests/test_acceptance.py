"""Acceptance checks. Each test records its outcome before asserting so the terminal
summary shows one PASS/FAIL line per criterion."""

import math
import subprocess
import sys

import numpy as np
import pytest

from branch2.cli import run
from branch2.harness import (
    DualityGrid,
    check_duality_grid,
    check_duality_pointwise,
    check_gamma_scaling,
    check_generator,
    check_longterm,
    check_moments,
    check_yule,
)
from branch2.model import Params
from branch2.particle import EVENT_KINDS, replay, simulate_particle


def test_pointwise_duality(record):
    rep = check_duality_pointwise(n_states=100, seed=0)
    ok = rep.passed and rep.runtime < 1.0
    record(1, "pointwise duality", ok, f"max rel residual {rep.statistic:.2e}, {rep.runtime:.2f}s")
    assert rep.passed, rep.summary()
    assert rep.runtime < 1.0


@pytest.mark.slow
def test_monte_carlo_duality(record):
    grid = DualityGrid()
    assert grid.n == 20_000 and grid.params.zeta == 0.02 and max(grid.ts) <= 0.5
    rep = check_duality_grid(grid, seed=1)
    ok = rep.passed and rep.runtime < 600
    failed = sum(not c["passed"] for c in rep.details["cells"])
    record(2, "Monte-Carlo duality", ok,
           f"{len(rep.details['cells']) - failed}/{len(rep.details['cells'])} cells, worst z {rep.statistic:.2f}, "
           f"{rep.runtime:.0f}s")
    assert rep.passed, rep.summary()
    assert rep.runtime < 600


def test_yule_pgf(record):
    rep = check_yule(w=1, r=1.0, t=1.0, z=0.5, n=100_000, seed=0, moments=())
    pgf = rep.details["pgf"]
    exact_ok = math.isclose(pgf["exact"], 1 / (1 + math.e), rel_tol=1e-14)
    ok = rep.passed and exact_ok and rep.runtime < 10
    record(3, "Yule pgf", ok, f"mc {pgf['mc']['mean']:.5f} +- {pgf['mc']['se']:.5f} vs {pgf['exact']:.5f}, "
                              f"{rep.runtime:.1f}s")
    assert exact_ok
    assert rep.passed, rep.summary()
    assert rep.runtime < 10


def test_yule_moments(record):
    rep = check_yule(w=1, r=1.0, t=1.0, z=0.5, n=100_000, seed=1, moments=(1, 2))
    mom = {k: rep.details[f"moment_{k}"] for k in ("1", "2")}
    exact_ok = math.isclose(mom["1"]["exact"], math.e, rel_tol=1e-14) and math.isclose(
        mom["2"]["exact"], 2 * math.e**2, rel_tol=1e-14)
    moments_ok = all(mom[k]["passed"] for k in ("1", "2"))
    ok = moments_ok and exact_ok and rep.runtime < 30
    record(4, "Yule moments", ok, ", ".join(f"m={k}: {mom[k]['mc']['mean']:.4f} vs {mom[k]['exact']:.4f}"
                                            for k in ("1", "2")) + f", {rep.runtime:.1f}s")
    assert exact_ok
    assert moments_ok, rep.summary()
    assert rep.runtime < 30


def test_gamma_scaling(record):
    rep = check_gamma_scaling(w=1, r=1.0, t=8.0, n=10_000, seed=0)
    ok = rep.passed and rep.runtime < 60
    record(5, "Gamma scaling", ok, f"KS {rep.statistic:.4f} < {rep.threshold:.4f}, {rep.runtime:.1f}s")
    assert rep.passed, rep.summary()
    assert rep.runtime < 60


def test_generator_convergence(record):
    rep = check_generator()
    funcs = rep.details["functions"]
    assert len(funcs) == 3 and len(rep.parameters["battery"]) > 0
    ok = rep.passed and rep.runtime < 60
    ratios = "; ".join(f"{name}: {', '.join(f'{x:.2f}' for x in row['split_ratios'])}" for name, row in funcs.items())
    record(6, "generator convergence", ok, f"split ratios {ratios}, {rep.runtime:.1f}s")
    for row in funcs.values():
        assert row["decreasing"], row
    assert rep.passed, rep.summary()
    assert rep.runtime < 60


@pytest.mark.slow
def test_split_conservation(record):
    p = Params(split_rate_base=1.0, theta=0.4, sigma=1.0, capital_K=2.0, lam=0.3, zeta=0.02)
    obs = np.linspace(0.0, 4.0, 9)
    tr = simulate_particle([50] * 20, p, 4.0, obs_times=obs, seed=7)
    kinds = tr.event_kinds
    assert tr.n_events >= 1_000_000 and len(kinds) == tr.n_events

    # every split hands its whole content to the two daughters
    counts = list(tr.initial.counts)
    bad_splits = 0
    snap_i = 0
    births = deaths = 0
    for i in range(tr.n_events):
        while snap_i < len(obs) and obs[snap_i] < tr.event_times[i]:
            assert counts == tr.snapshots[snap_i].tolist()
            snap_i += 1
        kind, c, k = int(kinds[i]), int(tr.event_cells[i]), int(tr.event_ks[i])
        if EVENT_KINDS[kind] == "split":
            before = counts[c]
            counts[c] = k
            counts.append(before - k)
            bad_splits += not (0 <= k <= before and counts[c] + counts[-1] == before)
        elif EVENT_KINDS[kind] == "birth":
            counts[c] += 1
            births += 1
        else:
            counts[c] -= 1
            deaths += 1
    n_split = int(np.sum(kinds == next(k for k, v in EVENT_KINDS.items() if v == "split")))
    final = tr.final.tolist()
    balance = sum(final) - sum(tr.initial.counts) == births - deaths
    ok = bad_splits == 0 and counts == final and replay(tr.initial.counts, kinds, tr.event_cells, tr.event_ks) == final \
        and balance and n_split > 0
    record(7, "split conservation", ok, f"{tr.n_events} events, {n_split} splits, {bad_splits} violations")
    assert bad_splits == 0
    assert counts == final
    assert balance


@pytest.mark.slow
def test_moment_bound(record):
    rep = check_moments(n=10_000, seed=0)
    sets = rep.details["sets"]
    assert len(sets) == 2
    ok = rep.passed and rep.runtime < 300
    record(8, "moment bound", ok, ", ".join(f"{s['estimate']['mean']:.2f} <= {s['bound']:.1f}" for s in sets)
           + f", {rep.runtime:.0f}s")
    assert rep.passed, rep.summary()
    assert rep.runtime < 300


@pytest.mark.slow
def test_longterm(record):
    rep = check_longterm(ts=(2.0, 4.0, 6.0), n=5_000, eps=0.01, seed=0)
    fr = rep.details["infected_fraction"]
    ok = rep.passed and rep.runtime < 600
    record(9, "long-term behaviour", ok,
           f"KS {rep.statistic:.4f} < {rep.threshold:.4f}, infected "
           + " > ".join(f"{fr[k]['mean']:.2g}" for k in ("2.0", "4.0", "6.0")) + f", {rep.runtime:.0f}s")
    assert rep.passed, rep.summary()
    assert rep.runtime < 600


DETERMINISM_COMMANDS = [
    ["simulate-particle", "--init", "20,10", "--t-end", "0.5", "--obs", "0.25,0.5", "--n", "4", "--zeta", "0.1"],
    ["simulate-limit", "--init", "1,0.5", "--t-end", "0.5", "--n", "3"],
    ["simulate-dual", "--q", "0.7", "--marks", "0.5,1.5", "--t-end", "1"],
    ["check-duality", "--n", "50"],
    ["check-pointwise", "--n", "20"],
    ["check-yule", "--n", "2000"],
    ["check-gamma", "--n", "1000"],
    ["check-longterm", "--n", "50", "--ts", "0.5,1"],
    ["check-generator"],
    ["check-moments", "--n", "100"],
]


def test_determinism(record, tmp_path):
    mismatched = []
    for argv in DETERMINISM_COMMANDS:
        outs = []
        for _ in range(2):
            out = tmp_path / "out"
            assert run(argv + ["--seed", "11", "--out", str(out)]) in (0, 1), argv
            outs.append(out.read_bytes())
        if outs[0] != outs[1]:
            mismatched.append(argv[0])
    # fresh interpreters must agree too
    cmd = [sys.executable, "-m", "branch2.cli", "simulate-particle", "--init", "10", "--t-end", "0.3",
           "--zeta", "0.1", "--seed", "5"]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    if a != b or not a:
        mismatched.append("subprocess")
    record(10, "determinism", not mismatched,
           f"{len(DETERMINISM_COMMANDS) + 1} commands" + (f", mismatched {mismatched}" if mismatched else ""))
    assert not mismatched
