"""Dual process (q, marks) with its Feynman-Kac log-weight."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels as kn
from .model import DualState, Params
from .particle import _check_times
from .rng import open_text, replicate_rng, run_replicates

DUAL_EVENT_KINDS = {
    kn.DUAL_SCALE_THETA: "scale_theta",
    kn.DUAL_SCALE_ONE_MINUS_THETA: "scale_one_minus_theta",
    kn.DUAL_MERGE: "merge",
}


def _check_q(q0: float) -> None:
    if not 0.0 < q0 <= 1.0:
        raise ValueError(f"q0 must lie in (0, 1], got {q0}")


def q_closed_form(q0: float, r: float, t: float) -> float:
    """Solution of dq/dt = -r q (1 - q) started at q0."""
    _check_q(q0)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(kn.q_closed(float(q0), float(r), float(t)))


def q_integral(q0: float, r: float, t: float) -> float:
    """Integral of q over [0, t]."""
    _check_q(q0)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return float(kn.q_int(float(q0), float(r), float(t)))


def dual_feller_step(x: float, dt: float, params: Params, rng: np.random.Generator) -> float:
    """Euler step of dX = X(K - sigma X)dt + sqrt(2 lam X) dB.

    sigma and lam trade places relative to the forward diffusion; this is intended.
    """
    if x < 0:
        raise ValueError("mark must be nonnegative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if x == 0.0:
        return 0.0
    return float(kn.logistic_feller_step(float(x), float(dt), params.capital_K, params.sigma,
                                         params.lam, rng.standard_normal()))


@dataclass(frozen=True)
class DualEvent:
    time: float
    kind: str
    i: int
    j: int
    marks: tuple[float, ...]
    log_weight: float


@dataclass
class DualTrajectory:
    initial: DualState
    params: Params
    t_end: float
    dt: float
    obs_times: np.ndarray
    snapshots: list[DualState]
    final: DualState
    events: list[DualEvent] = field(default_factory=list)
    n_proposals: int = 0
    min_acceptance: float = 1.0

    @property
    def log_weight(self) -> float:
        return self.final.log_weight


def _run(s0: DualState, params, t_end, dt, obs, rng, record):
    return kn.run_dual(
        float(s0.q), np.asarray(s0.marks, dtype=np.float64), float(s0.log_weight),
        float(params.split_rate_base), float(params.theta), float(params.sigma),
        float(params.capital_K), float(params.lam), float(t_end), float(dt), obs, rng, record,
    )


def _validate(params: Params, dt: float) -> None:
    if params.split_exponent != 0:
        raise ValueError("the dual process exists for a constant split rate only")
    if not dt > 0:
        raise ValueError("dt must be positive")


def simulate_dual(
    init: DualState,
    params: Params,
    t_end: float,
    dt: float = 1e-3,
    seed: int | np.random.Generator = 0,
    obs_times: Iterable[float] | None = None,
    record_events: bool = True,
) -> DualTrajectory:
    _validate(params, dt)
    obs = _check_times(t_end, obs_times)
    rng = seed if isinstance(seed, np.random.Generator) else replicate_rng(seed, 0)
    (m, x, lw, obs_m, obs_lw, obs_q, obs_x, ev_t, ev_kind, ev_i, ev_j, ev_x, ev_lw,
     n_prop, min_acc) = _run(init, params, t_end, dt, obs, rng, record_events)
    snaps = [
        DualState(float(obs_q[k]), tuple(obs_x[k, : obs_m[k]].tolist()), float(obs_lw[k]))
        for k in range(obs.size)
    ]
    events = []
    for k in range(ev_t.size):
        m_after = init.m - int(np.sum(ev_kind[: k + 1] == kn.DUAL_MERGE))
        events.append(DualEvent(float(ev_t[k]), DUAL_EVENT_KINDS[int(ev_kind[k])], int(ev_i[k]), int(ev_j[k]),
                                tuple(ev_x[k, :m_after].tolist()), float(ev_lw[k])))
    final = DualState(q_closed_form(init.q, params.r, t_end), tuple(x.tolist()), float(lw))
    return DualTrajectory(init, params, float(t_end), float(dt), obs, snaps, final, events, int(n_prop), float(min_acc))


def simulate_dual_replicates(init: DualState, params: Params, t_end: float, dt: float = 1e-3, obs_times=None,
                             n: int = 1, seed: int = 0, threads: int = 1):
    """Per replicate: (obs_m, obs_lw, obs_x) arrays over the observation times."""
    _validate(params, dt)
    obs = _check_times(t_end, obs_times)

    def one(i, rng):
        out = _run(init, params, t_end, dt, obs, rng, False)
        return out[3], out[4], out[6]

    return obs, run_replicates(one, n, seed, threads)


def write_dual_jsonl(path, traj: DualTrajectory, run_config: dict | None = None) -> None:
    """One JSON object per line: the initial state, each jump, then the final state."""
    q0, r = traj.initial.q, traj.params.r
    with open_text(path) as fh:
        if run_config is not None:
            fh.write(json.dumps({"run_config": run_config}, sort_keys=True) + "\n")

        def emit(t, marks, lw, event):
            rec = {"time": t, "q": q_closed_form(q0, r, t), "marks": list(marks), "log_weight": lw, "event": event}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

        emit(0.0, traj.initial.marks, traj.initial.log_weight, None)
        for ev in traj.events:
            emit(ev.time, ev.marks, ev.log_weight, {"kind": ev.kind, "i": ev.i, "j": ev.j})
        emit(traj.t_end, traj.final.marks, traj.final.log_weight, "end")
