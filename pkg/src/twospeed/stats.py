"""Empirical distributions, two-sample tests, fits and the JSON comparison report."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import BRAMSON, SQRT2, ConfigError, SpeedProfile

BOOTSTRAP_RESAMPLES = 500


class StatsError(ValueError):
    """Statistic undefined on the given data."""


@dataclass(frozen=True, eq=False)
class ECDF:
    """Right-continuous empirical distribution function."""

    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise StatsError("ECDF of an empty sample")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.n


@dataclass(frozen=True)
class KSResult:
    statistic: float
    n: int
    m: int
    threshold: float | None = None

    @property
    def passed(self) -> bool | None:
        return None if self.threshold is None else self.statistic <= self.threshold


def ks_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise StatsError("KS statistic needs two nonempty samples")
    # the sup is attained at a sample point; evaluate both ECDFs on the pooled sample
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b, threshold: float | None = None) -> KSResult:
    """Sup-distance between the two empirical CDFs."""
    return KSResult(ks_statistic(a, b), int(np.size(a)), int(np.size(b)), threshold)


def ks_to_curve(sample, y, F) -> float:
    """Sup-distance between the ECDF of ``sample`` and a continuous CDF tabulated at ``y``.

    ``F`` is interpolated linearly between grid points; the sup is taken over the
    sample points (both one-sided limits) and the grid.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise StatsError("empty sample")
    y = np.asarray(y, dtype=float)
    F = np.asarray(F, dtype=float)
    Fx = np.interp(x, y, F, left=0.0, right=1.0)
    n = x.size
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    d_pts = max(np.max(np.abs(upper - Fx)), np.max(np.abs(Fx - lower)))
    d_grid = np.max(np.abs(np.searchsorted(x, y, side="right") / n - F))
    return float(max(d_pts, d_grid))


# ---------------------------------------------------------------- predicted max law

@dataclass(frozen=True, eq=False)
class PredictedMaxCurve:
    y: np.ndarray
    values: np.ndarray
    reservoir_size: int
    C_a: float

    def __call__(self, y):
        return np.interp(y, self.y, self.values)


def predicted_max_cdf(Y, C_a: float, profile: SpeedProfile, y_grid) -> PredictedMaxCurve:
    """``E exp(-sigma2 C(a) Y e^{-sqrt2 y})``, averaged over the ``Y`` reservoir."""
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.size == 0:
        raise StatsError("empty Y reservoir")
    if not C_a > 0:
        raise ConfigError(f"C(a) must be positive, got {C_a}")
    y = np.asarray(y_grid, dtype=float)
    scale = profile.sigma2 * C_a * np.exp(-SQRT2 * y)
    vals = np.exp(-np.outer(scale, Y)).mean(axis=1)
    # mean of nondecreasing functions is nondecreasing up to round-off; enforce it exactly
    vals = np.clip(np.maximum.accumulate(vals), 0.0, 1.0)
    return PredictedMaxCurve(y, vals, Y.size, float(C_a))


# ---------------------------------------------------------------- Poisson level fit

@dataclass(frozen=True, eq=False)
class PoissonLevelFit:
    levels: np.ndarray
    means: np.ndarray
    dispersion: np.ndarray
    slope: float
    intercept: float


def count_matrix(configs, levels) -> np.ndarray:
    """``counts[i, j]`` = number of points of ``configs[i]`` at or above ``levels[j]``."""
    levels = np.asarray(levels, dtype=float)
    out = np.empty((len(configs), levels.size), dtype=np.int64)
    for i, cfg in enumerate(configs):
        pts = np.sort(np.asarray(getattr(cfg, "points", cfg), dtype=float))
        out[i] = pts.size - np.searchsorted(pts, levels, side="left")
    return out


def poisson_level_fit(configs, levels, *, min_configs: int = 1000,
                      counts: np.ndarray | None = None) -> PoissonLevelFit:
    """Least-squares fit of ``log(mean count above y)`` against ``y``, plus variance/mean per level.

    Pass ``counts`` (replicas x levels) instead of ``configs`` to reuse a count table.
    """
    levels = np.asarray(levels, dtype=float)
    if counts is None:
        if len(configs) < min_configs:
            raise StatsError(f"need >= {min_configs} configurations, got {len(configs)}")
        counts = count_matrix(configs, levels)
    counts = np.asarray(counts, dtype=float)
    means = counts.mean(axis=0)
    if np.any(means == 0):
        raise StatsError(f"no points above level(s) {levels[means == 0].tolist()}")
    var = counts.var(axis=0, ddof=1) if counts.shape[0] > 1 else np.zeros_like(means)
    disp = var / means
    if levels.size >= 2:
        slope, intercept = np.polyfit(levels, np.log(means), 1)
    else:
        slope, intercept = math.nan, float(np.log(means[0]))
    return PoissonLevelFit(levels, means, disp, float(slope), float(intercept))


# ---------------------------------------------------------------- Laplace functionals

def laplace_terms(configs, phi) -> np.ndarray:
    """``exp(-sum_points phi(point))`` for each configuration."""
    from .fkpp import get_bump

    bump = get_bump(phi)
    out = np.empty(len(configs))
    for i, cfg in enumerate(configs):
        pts = np.asarray(getattr(cfg, "points", cfg), dtype=float)
        out[i] = math.exp(-float(np.sum(bump(pts)))) if pts.size else 1.0
    return out


def empirical_laplace(configs, phi) -> float:
    """Mean over configurations of ``exp(-sum phi(points))``."""
    if len(configs) == 0:
        raise StatsError("no configurations")
    return float(np.mean(laplace_terms(configs, phi)))


# ---------------------------------------------------------------- exponential overshoot

def exp_overshoot_fit(overshoots, *, min_samples: int = 300) -> float:
    """Maximum-likelihood exponential rate, ``1 / mean``."""
    x = np.asarray(overshoots, dtype=float).ravel()
    if x.size < min_samples:
        raise StatsError(f"need >= {min_samples} overshoots, got {x.size}")
    if np.any(x < 0):
        raise StatsError("overshoots must be nonnegative")
    m = float(np.mean(x))
    if m == 0.0:
        raise StatsError("all overshoots are zero")
    return 1.0 / m


# ---------------------------------------------------------------- tail envelope

def tail_envelope(z, t: float):
    """Shape ``z exp(-sqrt2 z - z^2/2t + 3 z log t / (2 sqrt2 t))`` (without ``rho``)."""
    z = np.asarray(z, dtype=float)
    return z * np.exp(-SQRT2 * z - z * z / (2.0 * t) + BRAMSON * z * math.log(t) / t)


@dataclass(frozen=True, eq=False)
class TailEnvelopeFit:
    rho: float
    max_ratio: float
    z: np.ndarray
    exceedance: np.ndarray


def tail_envelope_fit(max_samples, t: float, z_grid=None, *, min_tail: int = 20) -> TailEnvelopeFit:
    """Least-squares ``rho`` for ``P(max - m(t) >= z) ~ rho * envelope(z)`` on ``z`` in ``[1, 4]``.

    ``max_samples`` are standard-BBM maxima recentered by ``sqrt2 t - (3/(2 sqrt2)) log t``.
    ``max_ratio`` is the largest empirical/fitted ratio over the grid.
    """
    if t < 5:
        raise ConfigError(f"tail envelope fit needs t >= 5, got {t}")
    x = np.sort(np.asarray(max_samples, dtype=float).ravel())
    z = np.linspace(1.0, 4.0, 13) if z_grid is None else np.asarray(z_grid, dtype=float)
    if np.count_nonzero(x >= z[0]) < min_tail:
        raise StatsError(f"fewer than {min_tail} samples above z = {z[0]}")
    p = (x.size - np.searchsorted(x, z, side="left")) / x.size
    g = tail_envelope(z, t)
    rho = float(np.dot(p, g) / np.dot(g, g))
    ratio = float(np.max(p / (rho * g)))
    return TailEnvelopeFit(rho, ratio, z, p)


# ---------------------------------------------------------------- bootstrap and reports

def bootstrap_ci(statistic, samples, *, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES,
                 level: float = 0.95) -> tuple:
    """Percentile bootstrap interval of ``statistic(*resampled)``.

    ``samples`` is a tuple of arrays, each resampled independently with replacement.
    """
    samples = [np.asarray(s) for s in samples]
    vals = np.empty(resamples)
    for b in range(resamples):
        vals[b] = statistic(*[s[rng.integers(0, s.shape[0], s.shape[0])] for s in samples])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return math.nan, math.nan
    lo, hi = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


@dataclass
class ReportEntry:
    experiment: str
    statistic: str
    value: float
    ci_low: float | None
    ci_high: float | None
    threshold: str
    passed: bool


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating, np.integer)):
        return _clean(x.item())
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def report_json(entries, **extra) -> str:
    """Deterministic JSON text (sorted keys, fixed float formatting)."""
    doc = dict(extra)
    rows = []
    for e in entries:
        row = {k: _clean(v) for k, v in asdict(e).items()}
        row["pass"] = row.pop("passed")
        rows.append(row)
    doc["results"] = rows
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(x):
    # numpy scalars and arrays in the report metadata
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.generic,)):
        return _clean(x)
    raise TypeError(f"{type(x).__name__} is not JSON serializable")
