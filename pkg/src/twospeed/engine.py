"""Exact event-driven simulation of standard and two-speed branching Brownian motion."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .model import (BINARY, SQRT2, BarrierSpec, ConfigError, OffspringLaw, Regime,
                    SimulationPlan, SpeedProfile, STANDARD_PROFILE, centering,
                    standard_centering)

DEFAULT_CAP = 200_000_000


class PopulationCapError(RuntimeError):
    """Live population exceeded the hard cap; enable or tighten the barrier."""


class ConditioningError(RuntimeError):
    """Rejection sampling gave up before acceptance."""


@dataclass(frozen=True)
class RngStream:
    """``(seed, stream)`` pair; the generator it builds is fully determined by both.

    ``path`` addresses nested sub-streams (e.g. one per Poisson atom of a replica).
    """

    seed: int
    stream: int = 0
    path: tuple = ()

    def generator(self) -> np.random.Generator:
        key = (int(self.stream),) + tuple(int(p) for p in self.path)
        ss = np.random.SeedSequence(int(self.seed), spawn_key=key)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, i: int) -> "RngStream":
        return RngStream(self.seed, self.stream, self.path + (int(i),))


def _frozen(a: np.ndarray) -> np.ndarray:
    # copy unless already frozen, so the caller's array stays writable
    if isinstance(a, np.ndarray) and not a.flags.writeable and a.flags.c_contiguous:
        return a
    a = np.array(a, copy=True, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    positions: np.ndarray
    extinct: bool = False
    attempts: int = 1

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(np.asarray(self.positions, dtype=float)))

    @property
    def n(self) -> int:
        return int(self.positions.size)

    def max(self) -> float:
        return float(self.positions.max()) if self.n else -math.inf


@dataclass(frozen=True, eq=False)
class TwoSpeedRun:
    """One replica: a snapshot per checkpoint plus parent maps between them.

    ``snapshots[0]`` is the single ancestor at time 0; ``parents[k]`` maps each
    particle of ``snapshots[k + 1]`` to its ancestor index in ``snapshots[k]``.
    """

    plan: SimulationPlan
    times: tuple
    snapshots: tuple
    parents: tuple

    @property
    def terminal(self) -> Snapshot:
        return self.snapshots[-1]

    def index_of(self, s: float) -> int:
        for k, tk in enumerate(self.times):
            if math.isclose(tk, s, rel_tol=0.0, abs_tol=1e-9):
                return k
        raise ConfigError(f"time {s} is not a checkpoint of this run (have {self.times})")

    def snapshot_at(self, s: float) -> Snapshot:
        return self.snapshots[self.index_of(s)]

    @property
    def split(self) -> Snapshot:
        return self.snapshot_at(self.plan.split_time)

    def ancestors(self, k_from: int, k_to: int) -> np.ndarray:
        """Index in ``snapshots[k_to]`` of the ancestor of each particle of ``snapshots[k_from]``."""
        if k_to > k_from:
            raise ValueError("ancestors run backwards in time")
        idx = np.arange(self.snapshots[k_from].n)
        for k in range(k_from, k_to, -1):
            idx = self.parents[k - 1][idx]
        return idx

    @cached_property
    def ancestor_at_split(self) -> np.ndarray:
        return _frozen(self.ancestors(len(self.times) - 1, self.index_of(self.plan.split_time)))

    @cached_property
    def checkpoint_paths(self) -> np.ndarray:
        """``(n_terminal, n_times)`` ancestor positions of every terminal particle."""
        last = len(self.times) - 1
        paths = np.empty((self.terminal.n, len(self.times)))
        idx = np.arange(self.terminal.n)
        paths[:, last] = self.terminal.positions
        for k in range(last, 0, -1):
            idx = self.parents[k - 1][idx]
            paths[:, k - 1] = self.snapshots[k - 1].positions[idx]
        return _frozen(paths)

    def lineage(self, k_from: int, i: int) -> np.ndarray:
        """Positions at ``times[:k_from + 1]`` of the ancestry of particle ``i`` of ``snapshots[k_from]``."""
        out = np.empty(k_from + 1)
        out[k_from] = self.snapshots[k_from].positions[i]
        for k in range(k_from, 0, -1):
            i = self.parents[k - 1][i]
            out[k - 1] = self.snapshots[k - 1].positions[i]
        return out


def barrier_line(profile: SpeedProfile, t: float, barrier: BarrierSpec | None):
    """Return ``f(s)`` giving the kill level at time ``s``, or ``None`` when disabled.

    Phase 1 follows the corridor of extremal ancestors (``sqrt 2 sigma1^2 s`` in
    regime BELOW, the phase-1 maximum speed ``sqrt 2 sigma1 s`` otherwise), lowered
    by ``kappa1 sqrt t``; phase 2 is the straight line to ``centering(t) -
    kappa1 sqrt t`` lowered by a further ``kappa2 sqrt t``.
    """
    if barrier is None or not barrier.enabled:
        return None
    rt = math.sqrt(t)
    bt = profile.b * t
    speed = SQRT2 * (profile.sigma1_sq if profile.regime() is Regime.BELOW else profile.sigma1)
    end = centering(t, profile) if t > 1.0 else SQRT2 * t

    def level(s: float) -> float:
        if s <= bt:
            return speed * s - barrier.kappa1 * rt
        start = speed * bt - barrier.kappa1 * rt
        stop = end - barrier.kappa1 * rt
        frac = (s - bt) / (t - bt)
        return start + frac * (stop - start) - barrier.kappa2 * rt

    return level


def _stage_barrier(level, t0: float, t1: float):
    if level is None:
        return -math.inf, 0.0
    # phase-2 line has a jump of kappa2 sqrt t at bt; evaluate just inside the stage
    b0 = level(t0 + 1e-12 * max(1.0, t1)) if t0 > 0 else level(t0)
    b1 = level(t1)
    return b0, (b1 - b0) / (t1 - t0)


def _run_stages(x0, times, variances, offspring, level, rng, cap, kernels):
    sizes, cum = offspring.arrays()
    snaps = [np.asarray(x0, dtype=float)]
    parents = []
    for t0, t1, var in zip(times[:-1], times[1:], variances):
        bar0, slope = _stage_barrier(level, t0, t1)
        xs, ps, n, status = kernels["evolve_stage"](snaps[-1], float(t0), float(t1),
                                                    math.sqrt(var), float(bar0), float(slope),
                                                    sizes, cum, rng, int(cap))
        if status != _kernels.OK:
            raise PopulationCapError(
                f"population exceeded cap {cap} before t={t1}; enable the barrier")
        snaps.append(np.asarray(xs[:n]))
        parents.append(np.asarray(ps[:n]))
    return snaps, parents


def _kernels_for(backend):
    if backend is None:
        return dict(evolve_stage=_kernels.evolve_stage,
                    conditioned_attempts=_kernels.conditioned_attempts)
    return _kernels.KERNELS[backend]


def simulate_two_speed(plan: SimulationPlan, rng: RngStream, *, cap: int = DEFAULT_CAP,
                       backend: str | None = None) -> TwoSpeedRun:
    """Simulate one replica of ``plan`` with the given stream."""
    gen = rng.generator()
    times = (0.0,) + plan.checkpoints
    bt = plan.split_time
    variances = [plan.profile.sigma1_sq if t1 <= bt + 1e-12 else plan.profile.sigma2_sq
                 for t1 in times[1:]]
    level = barrier_line(plan.profile, plan.t, plan.barrier)
    snaps, parents = _run_stages([0.0], times, variances, plan.offspring, level, gen, cap,
                                 _kernels_for(backend))
    snapshots = tuple(Snapshot(tk, xs, extinct=(xs.size == 0)) for tk, xs in zip(times, snaps))
    return TwoSpeedRun(plan, times, snapshots, tuple(_frozen(p) for p in parents))


def simulate_standard(t: float, offspring: OffspringLaw = BINARY, rng: RngStream = RngStream(0),
                      barrier: BarrierSpec | None = None, *, cap: int = DEFAULT_CAP,
                      backend: str | None = None) -> Snapshot:
    """Standard BBM (unit variance rate) observed at time ``t``."""
    if not t > 0:
        raise ConfigError(f"t must be positive, got {t}")
    gen = rng.generator()
    level = None
    if barrier is not None and barrier.enabled:
        rt = math.sqrt(t)
        end = standard_centering(t) if t > 1.0 else SQRT2 * t

        def level(s):
            return end * s / t - barrier.kappa1 * rt

    snaps, _ = _run_stages([0.0], (0.0, float(t)), [1.0], offspring, level, gen, cap,
                           _kernels_for(backend))
    xs = snaps[-1]
    return Snapshot(float(t), xs, extinct=(xs.size == 0))


def simulate_first_stage(profile: SpeedProfile, s: float, rng: RngStream, checkpoints=(),
                         offspring: OffspringLaw = BINARY, *, cap: int = DEFAULT_CAP,
                         backend: str | None = None) -> tuple:
    """Snapshots at ``checkpoints`` (and ``s``) of a BBM with variance rate ``sigma1^2``.

    This is the two-speed process before its split time, without the cost of
    the second stage.
    """
    if not s > 0:
        raise ConfigError(f"s must be positive, got {s}")
    cps = sorted({float(c) for c in checkpoints if 0 < c < s} | {float(s)})
    times = (0.0,) + tuple(cps)
    snaps, _ = _run_stages([0.0], times, [profile.sigma1_sq] * len(cps), offspring, None,
                           rng.generator(), cap, _kernels_for(backend))
    return tuple(Snapshot(tk, xs, extinct=(xs.size == 0)) for tk, xs in zip(times[1:], snaps[1:]))


def simulate_conditioned(t: float, level: float, max_attempts: int = 10_000_000,
                         rng: RngStream = RngStream(0), offspring: OffspringLaw = BINARY, *,
                         barrier: float | None = None, backend: str | None = None,
                         min_acceptance: float = 1e-6) -> Snapshot:
    """Standard BBM at ``t`` conditioned on ``max > sqrt(2) t + level`` by rejection.

    ``barrier = kappa`` kills particles more than ``kappa sqrt t`` below the straight
    line from ``0`` to ``sqrt(2) t + level``; failing attempts then die out early.
    Gives up with :class:`ConditioningError` after ``max_attempts`` rejections, or
    earlier once ``3 / min_acceptance`` attempts have all failed (the acceptance
    probability is then below ``min_acceptance`` at 95% confidence).
    """
    if t > 10.0:
        raise ConfigError(f"rejection conditioning only supported for t <= 10, got {t}")
    if not t > 0:
        raise ConfigError(f"t must be positive, got {t}")
    gen = rng.generator()
    sizes, cum = offspring.arrays()
    kern = _kernels_for(backend)["conditioned_attempts"]
    budget = int(min(max_attempts, math.ceil(3.0 / min_acceptance)))
    target = SQRT2 * t + level
    if barrier is None:
        bar0, slope = -math.inf, 0.0
    else:
        if not barrier > 0:
            raise ConfigError(f"barrier kappa must be positive, got {barrier}")
        bar0, slope = -barrier * math.sqrt(t), target / t
    xs, attempts = kern(float(t), float(target), float(bar0), float(slope), sizes, cum, gen,
                        budget)
    if xs.size == 0:
        raise ConditioningError(
            f"no acceptance in {attempts} attempts at t={t}, level={level}; lower t or level")
    return Snapshot(float(t), xs, attempts=int(attempts))


def standard_plan(t: float, seed: int = 0, offspring: OffspringLaw = BINARY,
                  checkpoints=()) -> SimulationPlan:
    return SimulationPlan(t=t, profile=STANDARD_PROFILE, offspring=offspring, seed=seed,
                          checkpoints=tuple(checkpoints))


def map_replicas(func, plan: SimulationPlan, replicas: int | None = None, *, threads: int = 1,
                 first_stream: int = 0, **kwargs) -> list:
    """Run ``func(simulate_two_speed(plan, RngStream(plan.seed, i)))`` for every replica.

    Replica ``i`` always uses stream id ``first_stream + i``, so results do not
    depend on ``threads``; the returned list is ordered by replica index.
    """
    n = plan.replicas if replicas is None else int(replicas)

    def one(i):
        return func(simulate_two_speed(plan, RngStream(plan.seed, first_stream + i), **kwargs))

    if threads <= 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n)))
