"""Exact event-driven simulation of the individual-based two-level model."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as kn
from .model import InvalidParamsError, ParticleState, Params
from .rng import open_text, replicate_rng, run_replicates

EVENT_KINDS = {kn.EV_SPLIT: "split", kn.EV_BIRTH: "birth", kn.EV_DEATH: "death"}


class SimulationError(RuntimeError):
    """Aborted trajectory; ``state`` and ``time`` describe where it stopped."""

    def __init__(self, message, state=None, time=None):
        super().__init__(message)
        self.state = state
        self.time = time


def cell_rates(n: int, params: Params) -> tuple[float, float, float]:
    """Total (split, birth, death) rates of one cell holding ``n`` particles."""
    if n < 0:
        raise ValueError("particle count must be nonnegative")
    params.check_particle()
    return tuple(float(v) for v in kn.particle_rates(
        int(n), params.split_rate_base, params.split_exponent, params.sigma,
        params.capital_K, params.lam, params.zeta,
    ))


def sample_split_allocation(n: int, theta: float, rng: np.random.Generator) -> int:
    """Number of particles inherited by the theta-daughter, exactly Binomial(n, theta)."""
    if n < 0:
        raise ValueError("particle count must be nonnegative")
    if not 0.0 < theta < 1.0:
        raise InvalidParamsError("theta must lie in (0, 1)")
    return int(kn.binomial_draw(rng, int(n), float(theta)))


@dataclass(frozen=True)
class ParticleEvent:
    """One jump. For a split, cell ``cell`` keeps ``k`` particles and a new cell
    with the remaining ones is appended at the end of the cell list."""

    time: float
    kind: str
    cell: int
    k: int = 0


@dataclass
class ParticleTrajectory:
    initial: ParticleState
    params: Params
    t_end: float
    obs_times: np.ndarray
    snapshots: list[np.ndarray]
    event_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    event_kinds: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8))
    event_cells: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    event_ks: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    n_events: int = 0
    final: np.ndarray | None = None

    @property
    def events(self) -> list[ParticleEvent]:
        return [
            ParticleEvent(float(t), EVENT_KINDS[int(kd)], int(c), int(k))
            for t, kd, c, k in zip(self.event_times, self.event_kinds, self.event_cells, self.event_ks)
        ]

    def snapshot_masses(self, i: int) -> np.ndarray:
        return self.params.zeta * self.snapshots[i].astype(np.float64)


def replay(initial: Sequence[int], kinds, cells, ks, upto: int | None = None) -> list[int]:
    """Apply recorded events to ``initial`` (pure Python, independent of the kernel)."""
    counts = list(int(c) for c in initial)
    n = len(kinds) if upto is None else upto
    for kind, c, k in zip(kinds[:n], cells[:n], ks[:n]):
        kind = int(kind)
        c = int(c)
        if kind == kn.EV_SPLIT:
            total = counts[c]
            k = int(k)
            if not 0 <= k <= total:
                raise ValueError(f"split allocation {k} outside [0, {total}]")
            counts[c] = k
            counts.append(total - k)
        elif kind == kn.EV_BIRTH:
            counts[c] += 1
        else:
            if counts[c] == 0:
                raise ValueError("death in an empty cell")
            counts[c] -= 1
    return counts


def _as_counts(init) -> np.ndarray:
    if isinstance(init, ParticleState):
        return np.asarray(init.counts, dtype=np.int64)
    arr = np.asarray(init, dtype=np.int64)
    if arr.ndim != 1 or np.any(arr < 0):
        raise ValueError("initial state must be a 1-d sequence of nonnegative counts")
    return arr


def _run(counts, params, t_end, obs, rng, record, max_events):
    out = kn.run_particle(
        counts, float(params.split_rate_base), int(params.split_exponent), float(params.theta),
        float(params.sigma), float(params.capital_K), float(params.lam), float(params.zeta),
        float(t_end), obs, rng, record, max_events,
    )
    status, t, final, snap_vals, snap_off = out[:5]
    if status == kn.STATUS_NONFINITE_RATE:
        raise SimulationError(f"total rate became non-finite at t={t}", state=final, time=t)
    if status == kn.STATUS_MAX_EVENTS:
        raise SimulationError(f"event budget exhausted at t={t}", state=final, time=t)
    snaps = [snap_vals[snap_off[i]:snap_off[i + 1]] for i in range(len(snap_off) - 1)]
    return out, snaps


def _check_times(t_end, obs_times):
    if not t_end >= 0:
        raise ValueError("t_end must be nonnegative")
    obs = np.asarray(sorted(obs_times if obs_times is not None else [t_end]), dtype=np.float64)
    if obs.size and (obs[0] < 0 or obs[-1] > t_end):
        raise ValueError("observation times must lie in [0, t_end]")
    return obs


def simulate_particle(
    init: ParticleState | Sequence[int],
    params: Params,
    t_end: float,
    obs_times: Iterable[float] | None = None,
    seed: int | np.random.Generator = 0,
    record_events: bool = True,
    max_events: int = 10**9,
) -> ParticleTrajectory:
    """One exact Gillespie realization, snapshots at ``obs_times`` (default: ``t_end``)."""
    params.check_particle()
    counts = _as_counts(init)
    obs = _check_times(t_end, obs_times)
    rng = seed if isinstance(seed, np.random.Generator) else replicate_rng(seed, 0)
    out, snaps = _run(counts, params, t_end, obs, rng, record_events, max_events)
    return ParticleTrajectory(
        initial=ParticleState(tuple(counts.tolist())),
        params=params,
        t_end=float(t_end),
        obs_times=obs,
        snapshots=snaps,
        event_times=out[5],
        event_kinds=out[6],
        event_cells=out[7],
        event_ks=out[8],
        n_events=int(out[9]),
        final=out[2],
    )


def simulate_particle_replicates(
    init, params: Params, t_end: float, obs_times=None, n: int = 1, seed: int = 0,
    threads: int = 1, max_events: int = 10**9,
) -> list[list[np.ndarray]]:
    """Snapshots (counts per cell) for ``n`` independent replicates.

    Replicate i always uses stream (seed, i), so results do not depend on ``threads``.
    """
    params.check_particle()
    counts = _as_counts(init)
    obs = _check_times(t_end, obs_times)

    def one(i, rng):
        return _run(counts, params, t_end, obs, rng, False, max_events)[1]

    return run_replicates(one, n, seed, threads)


def write_snapshots_csv(path, replicates: Sequence[Sequence[np.ndarray]], obs_times, value_name="particle_count",
                        run_config: dict | None = None) -> None:
    """CSV with columns (replicate, time, cell_index, <value_name>); ``path`` may be a stream."""
    with open_text(path) as fh:
        if run_config is not None:
            fh.write("# run_config=" + json.dumps(run_config, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "time", "cell_index", value_name])
        for rep, snaps in enumerate(replicates):
            for t, snap in zip(obs_times, snaps):
                for ci, v in enumerate(snap):
                    w.writerow([rep, repr(float(t)), ci, v.item() if hasattr(v, "item") else v])


def write_events_jsonl(path, traj: ParticleTrajectory, run_config: dict | None = None) -> None:
    with open_text(path) as fh:
        if run_config is not None:
            fh.write(json.dumps({"run_config": run_config}, sort_keys=True) + "\n")
        for ev in traj.events:
            fh.write(json.dumps({"time": ev.time, "kind": ev.kind, "cell": ev.cell, "k": ev.k}) + "\n")


def total_mass(snapshot: np.ndarray, zeta: float) -> float:
    return zeta * float(np.sum(snapshot))


def is_finite_rate(params: Params, n: int) -> bool:
    return all(math.isfinite(v) for v in cell_rates(n, params))
