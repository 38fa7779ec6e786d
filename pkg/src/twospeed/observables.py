"""Functionals of simulated runs: martingales, extremal and gap configurations, localization."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .engine import Snapshot, TwoSpeedRun
from .model import SQRT2, ConfigError, Regime, SpeedProfile, centering, split_line


class MartingaleKind(enum.Enum):
    MCKEAN = "mckean"
    TRUNCATED = "truncated"
    DERIVATIVE = "derivative"


@dataclass(frozen=True)
class MartingaleSample:
    time: float
    value: float
    kind: MartingaleKind
    W: float | None = None
    gamma: float | None = None
    r: float | None = None

    def __post_init__(self):
        # the derivative martingale is a signed sum; only the exponential ones are >= 0
        if self.kind is not MartingaleKind.DERIVATIVE and not self.value >= 0.0:
            raise ValueError(f"{self.kind.value} martingale must be nonnegative, got {self.value}")


def _check_mckean(profile: SpeedProfile, s: float, horizon: float | None):
    if profile.sigma1_sq >= 1.0:
        raise ConfigError("the McKean martingale is not uniformly integrable for sigma1 >= 1")
    if horizon is not None and s > profile.b * horizon + 1e-9:
        raise ConfigError(f"s = {s} is past the speed change b t = {profile.b * horizon}")


def _exp_sum(s: float, x: np.ndarray, profile: SpeedProfile) -> float:
    if x.size == 0:
        return 0.0
    return float(np.exp(logsumexp(SQRT2 * x) - s * (1.0 + profile.sigma1_sq)))


def mckean_martingale(snapshot: Snapshot, profile: SpeedProfile,
                      horizon: float | None = None) -> MartingaleSample:
    """``Y_s = sum_i exp(-s (1 + sigma1^2) + sqrt 2 x_i(s))`` via log-sum-exp."""
    _check_mckean(profile, snapshot.time, horizon)
    return MartingaleSample(snapshot.time, _exp_sum(snapshot.time, snapshot.positions, profile),
                            MartingaleKind.MCKEAN)


def _paths_to(run: TwoSpeedRun, k: int) -> np.ndarray:
    """``(n_k, k + 1)`` checkpoint paths of the particles alive at ``times[k]``."""
    n = run.snapshots[k].n
    paths = np.empty((n, k + 1))
    idx = np.arange(n)
    paths[:, k] = run.snapshots[k].positions
    for j in range(k, 0, -1):
        idx = run.parents[j - 1][idx]
        paths[:, j - 1] = run.snapshots[j - 1].positions[idx]
    return paths


def tube_mask(paths: np.ndarray, times, gamma: float, r: float) -> np.ndarray:
    """Rows of ``paths`` whose bridge deviation stays inside the tube at every interior time.

    ``paths[:, -1]`` is the position at ``s = times[-1]``; the tube at ``0 < q < s``
    is ``|X(q) - (q/s) X(s)| <= ((q ^ (s - q)) v r)^gamma``.
    """
    times = np.asarray(times, dtype=float)
    s = times[-1]
    interior = (times > 0) & (times < s)
    if interior.sum() < 4:
        raise ConfigError(f"tube check needs >= 4 interior checkpoints on (0, {s}), "
                          f"got {int(interior.sum())}")
    q = times[interior]
    dev = np.abs(paths[:, interior] - np.outer(paths[:, -1], q / s))
    bound = np.maximum(np.minimum(q, s - q), r) ** gamma
    return np.all(dev <= bound, axis=1)


def truncated_martingale(run: TwoSpeedRun, s: float, W: float, gamma: float = 0.75,
                         r: float = 1.0, use_tube: bool = False) -> MartingaleSample:
    """McKean sum restricted to ``|x_i(s) - sqrt2 sigma1^2 s| <= W`` (and the tube, if asked)."""
    profile = run.plan.profile
    _check_mckean(profile, s, run.plan.t)
    k = run.index_of(s)
    x = run.snapshots[k].positions
    keep = np.abs(x - split_line(s, profile)) <= W
    if use_tube:
        if not 0.5 < gamma < 1.0:
            raise ConfigError(f"gamma must lie in (1/2, 1), got {gamma}")
        keep &= tube_mask(_paths_to(run, k), run.times[: k + 1], gamma, r)
    return MartingaleSample(s, _exp_sum(s, x[keep], profile), MartingaleKind.TRUNCATED,
                            W=W, gamma=gamma if use_tube else None, r=r if use_tube else None)


def derivative_martingale(snapshot: Snapshot) -> MartingaleSample:
    """``Z_s = sum_i (sqrt2 s - x_i) exp(-sqrt2 (sqrt2 s - x_i))`` for standard BBM.

    Signed: individual terms are negative for particles ahead of ``sqrt2 s``.
    """
    d = SQRT2 * snapshot.time - snapshot.positions
    return MartingaleSample(snapshot.time, float(np.sum(d * np.exp(-SQRT2 * d))),
                            MartingaleKind.DERIVATIVE)


# ---------------------------------------------------------------- point configurations

@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Finite point set sorted in decreasing order, optionally labelled by cluster."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        order = np.argsort(-pts, kind="stable")
        pts = np.ascontiguousarray(pts[order])
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels).ravel()
            if lab.size != order.size:
                raise ValueError("every point needs a cluster label")
            lab = np.ascontiguousarray(lab[order])
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def max(self) -> float:
        return float(self.points[0]) if self.points.size else -math.inf

    def count_above(self, y: float) -> int:
        # points are sorted descending
        return int(np.searchsorted(-self.points, -y, side="right"))

    def above(self, cutoff: float) -> "PointConfiguration":
        n = self.count_above(cutoff)
        return PointConfiguration(self.points[:n],
                                  None if self.labels is None else self.labels[:n])

    def shifted(self, c: float) -> "PointConfiguration":
        return PointConfiguration(self.points + c, self.labels)

    @classmethod
    def empty(cls, labelled: bool = True) -> "PointConfiguration":
        return cls(np.empty(0), np.empty(0, dtype=np.int64) if labelled else None)


@dataclass(frozen=True, eq=False)
class GapConfiguration:
    """Positions relative to the maximum: all ``<= 0``, containing ``0``."""

    gaps: np.ndarray

    def __post_init__(self):
        g = np.sort(np.asarray(self.gaps, dtype=float).ravel())[::-1]
        if g.size == 0 or g[0] != 0.0 or np.any(g > 0):
            raise ValueError("a gap configuration contains 0 and no positive entries")
        g = np.ascontiguousarray(g)
        g.setflags(write=False)
        object.__setattr__(self, "gaps", g)

    def __len__(self) -> int:
        return int(self.gaps.size)

    def count_in(self, lo: float, hi: float = 0.0) -> int:
        """Number of gaps in ``[lo, hi]`` (the maximum itself included when ``hi >= 0``)."""
        return int(np.count_nonzero((self.gaps >= lo) & (self.gaps <= hi)))


def gap_configuration(snapshot) -> GapConfiguration:
    """Every position minus the maximum position."""
    x = snapshot.positions if isinstance(snapshot, Snapshot) else np.asarray(snapshot, dtype=float)
    if x.size == 0:
        raise ConfigError("gap configuration of an extinct snapshot")
    return GapConfiguration(x - x.max())


def extremal_configuration(run: TwoSpeedRun, cutoff: float = -math.inf) -> PointConfiguration:
    """Terminal positions minus ``centering(t)``, keeping points ``>= cutoff``.

    Cluster labels are the particles' ancestor indices at ``b t``.
    """
    if cutoff == math.inf:
        return PointConfiguration.empty()
    t = run.plan.t
    x = run.terminal.positions - centering(t, run.plan.profile)
    keep = x >= cutoff
    return PointConfiguration(x[keep], np.asarray(run.ancestor_at_split)[keep])


# ---------------------------------------------------------------- localization

def split_deviation(run: TwoSpeedRun, k: int = 1) -> float:
    """Largest ``|x_anc(bt) - sqrt2 sigma1^2 bt|`` over the ancestors of the top ``k`` particles.

    ``nan`` for an extinct run.
    """
    x = run.terminal.positions
    if x.size == 0:
        return math.nan
    k = min(k, x.size)
    top = np.argpartition(-x, k - 1)[:k]
    anc = run.ancestor_at_split[top]
    split = run.split
    return float(np.max(np.abs(split.positions[anc] - split_line(split.time, run.plan.profile))))


@dataclass(frozen=True, eq=False)
class LocalizationReport:
    """Per-run indicators that all top-``k`` lineages pass through ``sqrt2 sigma1^2 bt +- A sqrt t``.

    ``fraction`` counts successes (nondecreasing in ``A``); ``failure_fraction`` is
    its complement.
    """

    A: float
    k: int
    inside: np.ndarray

    @property
    def fraction(self) -> float:
        return float(np.mean(self.inside)) if self.inside.size else math.nan

    @property
    def failure_fraction(self) -> float:
        return 1.0 - self.fraction


def localization_from_deviations(deviations, t: float, A: float, k: int = 1) -> LocalizationReport:
    """Report from precomputed :func:`split_deviation` values (extinct runs count as failures)."""
    dev = np.asarray(deviations, dtype=float)
    inside = np.where(np.isnan(dev), False, dev < A * math.sqrt(t))
    return LocalizationReport(A, k, inside)


def localization_report(runs, A: float, k: int = 1) -> LocalizationReport:
    runs = list(runs)
    if not runs:
        raise ConfigError("no runs")
    plan = runs[0].plan
    if plan.profile.regime() is not Regime.BELOW:
        raise ConfigError("localization at b t is a BELOW-regime statement")
    if any(r.plan != plan for r in runs):
        raise ConfigError("runs must share a plan")
    return localization_from_deviations([split_deviation(r, k) for r in runs], plan.t, A, k)


def top_lineage_in_tube(run: TwoSpeedRun, gamma: float, r: float) -> bool:
    """Whether the top particle's ancestry on ``[0, bt]`` stays in the bridge tube."""
    ks = run.index_of(run.plan.split_time)
    x = run.terminal.positions
    if x.size == 0:
        return False
    anc = int(run.ancestor_at_split[int(np.argmax(x))])
    path = run.lineage(ks, anc)
    return bool(tube_mask(path[None, :], run.times[: ks + 1], gamma, r)[0])


def bridge_tube_check(runs, gamma: float, r: float) -> float:
    """Fraction of runs whose top-1 lineage satisfies the tube condition up to ``bt``."""
    if isinstance(runs, TwoSpeedRun):
        runs = [runs]
    flags = [top_lineage_in_tube(run, gamma, r) for run in runs]
    return float(np.mean(flags)) if flags else math.nan


# ---------------------------------------------------------------- CSV emitters

def write_martingale_csv(path, rows) -> None:
    """``rows``: iterable of ``(replica, MartingaleSample)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "s", "kind", "value"])
        for rep, m in rows:
            w.writerow([rep, repr(float(m.time)), m.kind.value, repr(float(m.value))])


def write_localization_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["A", "k", "fraction", "failure_fraction"])
        for rep in reports:
            w.writerow([repr(float(rep.A)), rep.k, repr(rep.fraction), repr(rep.failure_fraction)])


def write_configuration_csv(path, configs) -> None:
    """``configs``: iterable of ``(replica, PointConfiguration)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "point", "cluster"])
        for rep, cfg in configs:
            labels = cfg.labels if cfg.labels is not None else [""] * len(cfg)
            for p, c in zip(cfg.points, labels):
                w.writerow([rep, repr(float(p)), c if c == "" else int(c)])
