"""Auxiliary Poisson-cluster constructions for the BELOW regime, and the ABOVE concatenation.

The auxiliary process puts independent standard BBMs, run for time ``t``, at the
atoms of a Poisson process ``eta`` on ``(-inf, 0)`` with intensity
``(sigma2 / sqrt(2 pi)) exp(-(sqrt2 + a) z - a^2 t / 2) dz`` and reports
``sigma2 (eta_i + log(Y) / (sqrt2 + a) + xbar_k^i(t) - sqrt2 t)``.

Inside the window ``[-a t - B sqrt t, -a t + B sqrt t]`` the intensity has mass of
order ``exp((sqrt2 + a)(a t + B sqrt t))``, far too many atoms to simulate one by
one.  :func:`sample_eta_thinned` therefore keeps only the atoms whose cluster
maximum lands above a cutoff: by Poisson thinning these form a Poisson process
with intensity ``lambda(z) P(M_t > sqrt2 t + c - z)``, and ``P(M_t > .)`` is the
Heaviside F-KPP solution.  Each kept atom carries its exact cluster maximum;
the rest of the cluster is drawn from a reservoir of conditioned clusters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import fkpp
from .engine import (DEFAULT_CAP, RngStream, _kernels_for, _run_stages, simulate_conditioned,
                     simulate_standard)
from .model import (BINARY, SQRT2, BarrierSpec, ConfigError, Regime, SpeedProfile,
                    drift_parameter, standard_centering)
from .observables import GapConfiguration, PointConfiguration, gap_configuration

SQRT_2PI = math.sqrt(2.0 * math.pi)
# sample_eta refuses to materialise more atoms than this
MAX_ATOMS = 10_000_000
# sample_PY refuses masses above this
MAX_PY_MASS = 1e6


class AtomCapError(RuntimeError):
    """Window holds too many atoms to sample one by one."""


def _below(profile: SpeedProfile) -> tuple:
    if profile.regime() is not Regime.BELOW:
        raise ConfigError("the auxiliary process is defined in the BELOW regime")
    a = drift_parameter(profile)
    return a, SQRT2 + a


def eta_window(t: float, profile: SpeedProfile, B: float) -> tuple:
    """``[-a t - B sqrt t, min(0, -a t + B sqrt t)]``."""
    a, _ = _below(profile)
    return (-a * t - B * math.sqrt(t), min(0.0, -a * t + B * math.sqrt(t)))


def _check_window(window) -> tuple:
    lo, hi = float(window[0]), float(window[1])
    if not (lo <= hi <= 0.0):
        raise ConfigError(f"window must satisfy lo <= hi <= 0, got {window}")
    return lo, hi


def log_intensity_mass(t: float, profile: SpeedProfile, window) -> float:
    a, lam = _below(profile)
    lo, hi = _check_window(window)
    if lo == hi:
        return -math.inf
    # (e^{-lam lo} - e^{-lam hi}) / lam = e^{-lam lo} (1 - e^{-lam (hi - lo)}) / lam
    return (math.log(profile.sigma2 / SQRT_2PI) - 0.5 * a * a * t - lam * lo
            + math.log(-math.expm1(-lam * (hi - lo))) - math.log(lam))


def intensity_mass(t: float, profile: SpeedProfile, window) -> float:
    """Exact intensity integral of ``eta`` over ``window``."""
    return math.exp(log_intensity_mass(t, profile, window))


def _truncexp_inverse(u, lo, hi, lam):
    """Inverse CDF of the density proportional to ``e^{-lam z}`` on ``[lo, hi]``."""
    return lo - np.log1p(-u * (-math.expm1(-lam * (hi - lo)))) / lam


@dataclass(frozen=True, eq=False)
class PoissonAtoms:
    t: float
    window: tuple
    atoms: np.ndarray
    expected_mass: float
    # thinned samples: cutoff c, each atom's cluster maximum minus sqrt2 t, and the
    # intensity mass of the retained atoms
    cutoff: float | None = None
    excess: np.ndarray | None = None
    retained_mass: float | None = None

    def __post_init__(self):
        at = np.array(self.atoms, dtype=float, copy=True)
        at.setflags(write=False)
        object.__setattr__(self, "atoms", at)
        lo, hi = self.window
        if at.size and (at.min() < lo or at.max() > hi):
            raise ValueError("atom outside its window")

    def __len__(self) -> int:
        return int(self.atoms.size)

    @property
    def thinned(self) -> bool:
        return self.excess is not None

    def restrict(self, window, profile: SpeedProfile) -> "PoissonAtoms":
        """Atoms inside a subwindow: the restricted Poisson process, coupled to this one."""
        lo, hi = _check_window(window)
        if lo < self.window[0] or hi > self.window[1]:
            raise ConfigError(f"{window} is not inside {self.window}")
        keep = (self.atoms >= lo) & (self.atoms <= hi)
        return PoissonAtoms(self.t, (lo, hi), self.atoms[keep],
                            intensity_mass(self.t, profile, (lo, hi)), self.cutoff,
                            None if self.excess is None else self.excess[keep])


def sample_eta_count(t: float, profile: SpeedProfile, B: float, rng: np.random.Generator,
                     size: int | None = None, window=None):
    """Poisson atom counts in the window, without placing the atoms."""
    window = eta_window(t, profile, B) if window is None else _check_window(window)
    return rng.poisson(intensity_mass(t, profile, window), size=size)


def sample_eta(t: float, profile: SpeedProfile, B: float, rng: np.random.Generator, *,
               window=None, max_atoms: int = MAX_ATOMS) -> PoissonAtoms:
    """Atoms of ``eta`` in ``[-a t - B sqrt t, -a t + B sqrt t]`` (or an explicit window)."""
    if window is None:
        if B < 4:
            raise ConfigError(f"window multiplier B must be >= 4, got {B}")
        window = eta_window(t, profile, B)
    lo, hi = _check_window(window)
    _, lam = _below(profile)
    mass = intensity_mass(t, profile, (lo, hi))
    if mass > max_atoms:
        raise AtomCapError(f"window mass {mass:.3g} exceeds {max_atoms}; use sample_eta_thinned")
    n = rng.poisson(mass)
    atoms = np.sort(_truncexp_inverse(rng.random(n), lo, hi, lam)) if n else np.empty(0)
    return PoissonAtoms(t, (lo, hi), atoms, mass)


# ---------------------------------------------------------------- thinning via F-KPP

@dataclass(frozen=True, eq=False)
class MaxTail:
    """Tail ``P(M_t - sqrt2 t > w)`` of the standard-BBM maximum from the Heaviside solver."""

    t: float
    w: np.ndarray
    sf: np.ndarray

    def __call__(self, w):
        return np.interp(w, self.w, self.sf, left=1.0, right=0.0)

    def conditional_inverse(self, w0, u):
        """Sample ``w > w0`` with ``P(W > w | W > w0) = sf(w) / sf(w0)`` at uniforms ``u``."""
        target = np.log(self(w0)) + np.log(u)
        ok = self.sf > 0
        logsf = np.log(self.sf[ok])
        # logsf is nonincreasing in w; interpolate on the reversed (increasing) arrays
        return np.maximum(np.interp(-target, -logsf, self.w[ok]), w0)


@lru_cache(maxsize=16)
def max_tail(t: float, dx: float = fkpp.DEFAULT_DX, dt: float = fkpp.DEFAULT_DT) -> MaxTail:
    sol = fkpp.advance(fkpp.make_initial("heaviside", fkpp.Grid(-60.0, 90.0, dx), dt=dt), t)
    w = sol.grid.nodes()
    sf = np.minimum.accumulate(np.asarray(sol.u))
    return MaxTail(float(t), w, sf)


def thinning_cutoff(y_min: float, Y: float, profile: SpeedProfile) -> float:
    """``c`` such that a cluster at atom ``z`` reaches ``y_min`` iff ``M_t - sqrt2 t >= c - z``."""
    _, lam = _below(profile)
    return y_min / profile.sigma2 - math.log(Y) / lam


def sample_eta_thinned(t: float, profile: SpeedProfile, B: float, Y: float, y_min: float,
                       rng: np.random.Generator, *, window=None, tail: MaxTail | None = None,
                       nodes: int = 4001) -> PoissonAtoms:
    """Atoms of ``eta`` whose cluster maximum, shifted by ``log(Y)/(sqrt2 + a)``, reaches ``y_min``.

    Thinned intensity ``lambda(z) P(M_t - sqrt2 t >= c - z)`` on the window; each
    atom carries its exact cluster maximum (``excess = M_t - sqrt2 t``).
    """
    if not Y > 0:
        raise ConfigError(f"Y must be positive, got {Y}")
    a, lam = _below(profile)
    if window is None:
        if B < 4:
            raise ConfigError(f"window multiplier B must be >= 4, got {B}")
        window = eta_window(t, profile, B)
    lo, hi = _check_window(window)
    tail = max_tail(float(t)) if tail is None else tail
    c = thinning_cutoff(y_min, Y, profile)
    z = np.linspace(lo, hi, nodes)
    dens = (profile.sigma2 / SQRT_2PI) * np.exp(-lam * z - 0.5 * a * a * t) * tail(c - z)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(z))])
    mass = float(cum[-1])
    if mass > MAX_ATOMS:
        raise AtomCapError(f"thinned mass {mass:.3g} too large; raise y_min")
    n = rng.poisson(mass)
    full = intensity_mass(t, profile, (lo, hi))
    if n == 0:
        return PoissonAtoms(t, (lo, hi), np.empty(0), full, c, np.empty(0), mass)
    atoms = np.sort(np.interp(rng.random(n) * mass, cum, z))
    excess = tail.conditional_inverse(c - atoms, rng.random(n))
    return PoissonAtoms(t, (lo, hi), atoms, full, c, excess, mass)


# ---------------------------------------------------------------- cluster reservoir

@dataclass(frozen=True, eq=False)
class ClusterReservoir:
    """Gap configurations of conditioned clusters, resampled with replacement."""

    clusters: tuple
    overshoots: np.ndarray
    t: float
    level: float
    # total rejection-sampling attempts behind the reservoir
    attempts: int = 0

    def __len__(self) -> int:
        return len(self.clusters)

    def draw(self, n: int, rng: np.random.Generator) -> list:
        if not self.clusters:
            raise ConfigError("empty cluster reservoir")
        idx = rng.integers(0, len(self.clusters), n)
        return [self.clusters[i] for i in idx]


def _conditioned_cluster(t, a, rng, depth, barrier, **kwargs):
    if t > 8.0:
        raise ConfigError(f"cluster-law rejection sampling needs t <= 8, got {t}")
    level = a * t
    snap = simulate_conditioned(t, level, rng=rng, barrier=barrier, **kwargs)
    gaps = gap_configuration(snap)
    if math.isfinite(depth):
        gaps = GapConfiguration(gaps.gaps[gaps.gaps >= -depth])
    return gaps, snap.max() - SQRT2 * t - level, snap.attempts


def sample_cluster_law(t: float, a: float, rng: RngStream, *, depth: float = math.inf,
                       barrier: float | None = None, **kwargs) -> tuple:
    """Conditioned cluster at level ``a t``: ``(gap configuration, overshoot)``.

    ``depth`` drops gaps below ``-depth`` to keep reservoirs small.
    """
    return _conditioned_cluster(t, a, rng, depth, barrier, **kwargs)[:2]


def build_cluster_reservoir(n: int, t: float, a: float, seed: int, *, depth: float = 12.0,
                            barrier: float | None = 3.0, first_stream: int = 0) -> ClusterReservoir:
    clusters, over, attempts = [], [], 0
    for i in range(n):
        g, o, k = _conditioned_cluster(t, a, RngStream(seed, first_stream + i), depth, barrier)
        clusters.append(g)
        over.append(o)
        attempts += k
    return ClusterReservoir(tuple(clusters), np.asarray(over), t, a * t, attempts)


# ---------------------------------------------------------------- the auxiliary process

def build_auxiliary(atoms: PoissonAtoms, Y: float, t: float, profile: SpeedProfile,
                    rng: RngStream, *, reservoir: ClusterReservoir | None = None,
                    barrier: BarrierSpec | None = None,
                    cutoff: float = -math.inf) -> PointConfiguration:
    """Points ``sigma2 (eta_i + log(Y)/(sqrt2 + a) + xbar_k^i(t) - sqrt2 t)`` labelled by atom.

    Unthinned atoms get one independent standard BBM each (stream ``rng.child(i)``).
    Thinned atoms already carry their cluster maximum; their clusters are drawn
    from ``reservoir`` (or reduced to the maximum alone when no reservoir is given).
    """
    if not Y > 0:
        raise ConfigError(f"Y must be positive, got {Y}")
    _, lam = _below(profile)
    s2 = profile.sigma2
    shift = math.log(Y) / lam
    pts, labels = [], []
    if atoms.thinned:
        tops = s2 * (atoms.atoms + shift + atoms.excess)
        if reservoir is None:
            keep = tops >= cutoff
            return PointConfiguration(tops[keep], np.nonzero(keep)[0])
        gen = rng.generator()
        for i, (top, gaps) in enumerate(zip(tops, reservoir.draw(len(tops), gen))):
            p = top + s2 * gaps.gaps
            p = p[p >= cutoff]
            pts.append(p)
            labels.append(np.full(p.size, i, dtype=np.int64))
    else:
        for i, z in enumerate(atoms.atoms):
            snap = simulate_standard(t, BINARY, rng.child(i), barrier)
            p = s2 * (z + shift + snap.positions - SQRT2 * t)
            p = p[p >= cutoff]
            pts.append(p)
            labels.append(np.full(p.size, i, dtype=np.int64))
    if not pts:
        return PointConfiguration.empty()
    return PointConfiguration(np.concatenate(pts), np.concatenate(labels))


def cluster_extremes(sample: PointConfiguration) -> PointConfiguration:
    """One point per cluster: the cluster maximum."""
    if sample.labels is None:
        raise ConfigError("cluster labels required")
    if len(sample) == 0:
        return PointConfiguration.empty()
    # points are sorted descending, so the first occurrence of a label is its maximum
    labels, first = np.unique(sample.labels, return_index=True)
    return PointConfiguration(sample.points[first], labels)


def sample_PY(Y: float, C_a: float, profile: SpeedProfile, y_min: float,
              rng: np.random.Generator) -> PointConfiguration:
    """Poisson process with intensity ``sigma2 C(a) Y sqrt2 e^{-sqrt2 x}`` on ``[y_min, inf)``."""
    if not math.isfinite(y_min):
        raise ConfigError("y_min must be finite")
    mass = profile.sigma2 * C_a * Y * math.exp(-SQRT2 * y_min)
    if mass >= MAX_PY_MASS:
        raise ConfigError(f"mass {mass:.3g} above y_min is too large; raise y_min")
    n = rng.poisson(mass)
    x = y_min + rng.standard_exponential(n) / SQRT2
    return PointConfiguration(x, np.arange(n))


@dataclass(frozen=True, eq=False)
class DecoratedSample:
    anchors: PointConfiguration
    clusters: tuple
    configuration: PointConfiguration


def decorate(anchors: PointConfiguration, clusters, profile: SpeedProfile, *,
             cutoff: float = -math.inf) -> DecoratedSample:
    """Flatten ``p_i + sigma2 Lambda^(i)`` with cluster label ``i``."""
    clusters = tuple(clusters)
    if len(clusters) != len(anchors):
        raise ConfigError(f"{len(anchors)} anchors but {len(clusters)} clusters")
    s2 = profile.sigma2
    pts = [p + s2 * g.gaps for p, g in zip(anchors.points, clusters)]
    labs = [np.full(g.gaps.size, i, dtype=np.int64) for i, g in enumerate(clusters)]
    if not pts:
        return DecoratedSample(anchors, clusters, PointConfiguration.empty())
    flat = np.concatenate(pts)
    lab = np.concatenate(labs)
    keep = flat >= cutoff
    return DecoratedSample(anchors, clusters, PointConfiguration(flat[keep], lab[keep]))


# ---------------------------------------------------------------- ABOVE regime

def concatenate_above_regime(profile: SpeedProfile, t: float, rng: RngStream, *,
                             cutoff: float = -math.inf, margin: float = 6.0,
                             k: int | None = None, backend: str | None = None) -> PointConfiguration:
    """``sigma1 e_i + sigma2 e_j^(i)`` from two independent layers of standard BBM.

    Layer one runs to ``b t`` and is recentered by the standard ``m(b t)``; each of
    its top ``k`` points gets an independent standard BBM run to ``(1 - b) t``,
    recentered by ``m((1 - b) t)``.  Unless ``k`` is given, an anchor is kept when
    ``sigma1 e_i + sigma2 margin`` reaches ``cutoff`` (all anchors when ``cutoff``
    is ``-inf``).  Labels are anchor ranks.
    """
    if profile.regime() is not Regime.ABOVE:
        raise ConfigError("the concatenation describes the ABOVE regime")
    t1, t2 = profile.b * t, (1.0 - profile.b) * t
    s1, s2 = profile.sigma1, profile.sigma2
    gen = rng.generator()
    kern = _kernels_for(backend)
    # the layer-two BBMs are independent, so one kernel call started from all anchors
    # samples them jointly
    first, _ = _run_stages([0.0], (0.0, t1), [1.0], BINARY, None, gen, DEFAULT_CAP, kern)
    e = np.sort(first[-1])[::-1] - standard_centering(t1)
    if k is None:
        keep = int(np.count_nonzero(s1 * e + s2 * margin >= cutoff))
    else:
        keep = min(int(k), e.size)
    if keep == 0:
        return PointConfiguration.empty()
    second, parents = _run_stages(np.zeros(keep), (0.0, t2), [1.0], BINARY, None, gen,
                                  DEFAULT_CAP, kern)
    lab = parents[0]
    p = s1 * e[lab] + s2 * (second[-1] - standard_centering(t2))
    sel = p >= cutoff
    return PointConfiguration(p[sel], lab[sel])


def first_stage_top(profile: SpeedProfile, t: float) -> float:
    """``m_1(b t) = sqrt2 sigma1 b t - (3/(2 sqrt2)) sigma1 log(b t)``."""
    return profile.sigma1 * standard_centering(profile.b * t)
