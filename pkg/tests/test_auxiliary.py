import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy import stats as sps

from conftest import A_BELOW, SEED, below_direct
from twospeed import experiments
from twospeed.auxiliary import (AtomCapError, ClusterReservoir, PoissonAtoms, build_auxiliary,
                                build_cluster_reservoir, cluster_extremes,
                                concatenate_above_regime, decorate, eta_window, intensity_mass,
                                log_intensity_mass, max_tail, sample_cluster_law, sample_eta,
                                sample_eta_count, sample_eta_thinned, sample_PY)
from twospeed.engine import DEFAULT_CAP, RngStream, _kernels_for, _run_stages, simulate_standard
from twospeed.model import (BINARY, CANONICAL_ABOVE, CANONICAL_BELOW, SQRT2, ConfigError,
                            standard_centering)
from twospeed.observables import GapConfiguration, PointConfiguration
from twospeed.stats import ks_statistic

P = CANONICAL_BELOW
LAM = SQRT2 + A_BELOW


def _closed_mass(t, lo, hi):
    return (P.sigma2 / math.sqrt(2 * math.pi)) * math.exp(-A_BELOW ** 2 * t / 2) \
        * (math.exp(-LAM * lo) - math.exp(-LAM * hi)) / LAM


# ---------------------------------------------------------------- intensity

def test_intensity_empty_window():
    assert intensity_mass(10.0, P, (-3.0, -3.0)) == 0.0


def test_intensity_closed_form_against_quadrature():
    t = 10.0
    lo, hi = eta_window(t, P, 2.0)
    dens = lambda z: (P.sigma2 / math.sqrt(2 * math.pi)) * math.exp(-LAM * z - A_BELOW ** 2 * t / 2)
    num, _ = integrate.quad(dens, lo, hi, epsrel=1e-12)
    assert intensity_mass(t, P, (lo, hi)) == pytest.approx(num, rel=1e-9)
    assert log_intensity_mass(t, P, (lo, hi)) == pytest.approx(math.log(num), rel=1e-12)


def test_intensity_counts_match_mass():
    t = 10.0
    window = eta_window(t, P, 2.0)
    mass = intensity_mass(t, P, window)
    counts = sample_eta_count(t, P, 2.0, np.random.default_rng(SEED), size=10_000, window=window)
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(counts.mean() - mass) <= 3 * se


def test_intensity_window_errors():
    with pytest.raises(ConfigError):
        intensity_mass(10.0, P, (-1.0, 0.5))
    with pytest.raises(ConfigError):
        intensity_mass(10.0, P, (-1.0, -2.0))
    with pytest.raises(ConfigError):
        intensity_mass(10.0, CANONICAL_ABOVE, (-2.0, -1.0))


def test_window_mass_localisation():
    # the raw window mass is dominated by its left end and keeps growing with B; the
    # mass of atoms whose clusters can reach the top of the process is what localizes
    t = 10.0
    raw6 = intensity_mass(t, P, eta_window(t, P, 6.0))
    raw8 = intensity_mass(t, P, eta_window(t, P, 8.0))
    assert raw8 > 1e5 * raw6
    gen = np.random.default_rng(1)
    m6 = sample_eta_thinned(t, P, 6.0, 1.0, -4.0, gen).retained_mass
    m8 = sample_eta_thinned(t, P, 8.0, 1.0, -4.0, gen).retained_mass
    assert abs(m8 - m6) / m6 < 1e-3


# ---------------------------------------------------------------- eta

def test_sample_eta_tiny_mass_is_empty():
    window = (-1e-6, 0.0)
    assert intensity_mass(100.0, P, window) < 1e-12
    for i in range(100):
        assert len(sample_eta(100.0, P, 6.0, np.random.default_rng(i), window=window)) == 0


def test_sample_eta_preconditions():
    with pytest.raises(ConfigError):
        sample_eta(10.0, P, 3.0, np.random.default_rng(0))
    with pytest.raises(AtomCapError):
        sample_eta(10.0, P, 6.0, np.random.default_rng(0))


def test_sample_eta_inverse_cdf():
    lo, hi = -3.0, 0.0
    gen = np.random.default_rng(SEED)
    pooled = []
    while sum(map(len, pooled)) < 10_000:
        pooled.append(sample_eta(10.0, P, 6.0, gen, window=(lo, hi)).atoms)
    x = np.concatenate(pooled)
    assert np.all((x >= lo) & (x <= hi))

    def cdf(z):
        return (np.exp(-LAM * lo) - np.exp(-LAM * z)) / (np.exp(-LAM * lo) - np.exp(-LAM * hi))

    assert sps.kstest(x, cdf).statistic <= 0.02


@given(st.floats(2.0, 30.0), st.floats(4.0, 10.0))
def test_recorded_mass_is_closed_form(t, B):
    lo, hi = eta_window(t, P, B)
    atoms = sample_eta(t, P, B, np.random.default_rng(0), window=(hi - 1.0, hi))
    assert atoms.expected_mass == pytest.approx(_closed_mass(t, hi - 1.0, hi), rel=1e-9)
    assert lo < hi <= 0.0


def test_count_histogram_is_poisson():
    window = (-2.0, 0.0)
    mass = intensity_mass(10.0, P, window)
    counts = sample_eta_count(10.0, P, 6.0, np.random.default_rng(SEED + 1), size=10_000,
                              window=window)
    kmax = int(sps.poisson.ppf(0.999, mass))
    observed = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    probs = sps.poisson.pmf(np.arange(kmax + 1), mass)
    probs[-1] = sps.poisson.sf(kmax - 1, mass)
    expected = probs * counts.size
    # merge sparse bins so every expected count is at least 5
    obs_m, exp_m, o, e = [], [], 0, 0.0
    for ob, ex in zip(observed, expected):
        o, e = o + ob, e + ex
        if e >= 5:
            obs_m.append(o)
            exp_m.append(e)
            o, e = 0, 0.0
    obs_m[-1] += o
    exp_m[-1] += e
    assert sps.chisquare(obs_m, exp_m).pvalue >= 0.01


def test_restrict_is_subset():
    gen = np.random.default_rng(3)
    outer = sample_eta_thinned(10.0, P, 12.0, 1.0, -4.0, gen)
    inner_window = eta_window(10.0, P, 6.0)
    inner = outer.restrict(inner_window, P)
    assert set(inner.atoms) <= set(outer.atoms)
    assert inner.expected_mass == pytest.approx(intensity_mass(10.0, P, inner_window))
    with pytest.raises(ConfigError):
        inner.restrict(eta_window(10.0, P, 12.0), P)


def test_window_doubling_t10():
    inner, outer = experiments.auxiliary_maxima((1.0,), P, 10.0, 5.0, 10.0, 10_000, SEED + 2)
    lo = experiments.AUX_Y_MIN
    assert ks_statistic(np.maximum(inner, lo), np.maximum(outer, lo)) <= 0.02


# ---------------------------------------------------------------- Pi_t

def test_build_auxiliary_empty():
    atoms = PoissonAtoms(5.0, (-4.0, 0.0), np.empty(0), 0.0)
    assert len(build_auxiliary(atoms, 1.0, 5.0, P, RngStream(1))) == 0
    with pytest.raises(ConfigError):
        build_auxiliary(atoms, 0.0, 5.0, P, RngStream(1))


@pytest.mark.parametrize("Y", [1.0, 3.5])
def test_build_auxiliary_literal_formula(Y):
    t, z = 3.0, -2.5
    atoms = PoissonAtoms(t, (-4.0, 0.0), np.array([z]), 1.0)
    rs = RngStream(SEED, 4)
    cfg = build_auxiliary(atoms, Y, t, P, rs)
    snap = simulate_standard(t, rng=rs.child(0))
    shift = 0.0 if Y == 1.0 else math.log(Y) / LAM
    expected = np.sort(P.sigma2 * (z + shift + snap.positions - SQRT2 * t))[::-1]
    np.testing.assert_array_equal(cfg.points, expected)
    assert np.all(cfg.labels == 0)


def test_thinned_matches_literal():
    # dual route: one BBM per atom versus F-KPP thinning, on a window small enough for both
    t, window, y_min = 2.0, (-4.0, 0.0), -4.0
    tail = max_tail(t)
    literal, thinned = [], []
    for i in range(600):
        rs = RngStream(SEED + 5, i)
        atoms = sample_eta(t, P, 6.0, rs.generator(), window=window)
        literal.append(build_auxiliary(atoms, 1.0, t, P, rs).max)
        rs2 = RngStream(SEED + 6, i)
        atoms2 = sample_eta_thinned(t, P, 6.0, 1.0, y_min, rs2.generator(), window=window, tail=tail)
        thinned.append(build_auxiliary(atoms2, 1.0, t, P, rs2).max)
    a = np.maximum(literal, y_min)
    b = np.maximum(thinned, y_min)
    assert sps.ks_2samp(a, b).pvalue > 0.01


def test_auxiliary_max_matches_direct_t10():
    # Pi_t at t = 10 with Y from the s = 12 McKean values, against direct runs at t = 12
    Y = experiments.martingale_study(P, (4.0, 8.0, 12.0), 10_000, SEED)[:, 2]
    inner, _ = experiments.auxiliary_maxima(tuple(Y), P, 10.0, 6.0, 12.0, 10_000, SEED + 7)
    lo = experiments.AUX_Y_MIN
    direct = np.maximum(below_direct().maxima, lo)
    assert ks_statistic(direct, np.maximum(inner, lo)) <= 0.1


# ---------------------------------------------------------------- cluster extremes

def test_cluster_extremes_examples():
    one = PointConfiguration(np.array([0.3, -1.0, -2.0]), np.array([4, 4, 4]))
    ext = cluster_extremes(one)
    assert list(ext.points) == [0.3]
    two = PointConfiguration(np.array([1.0, 0.5, -0.5, 2.0]), np.array([0, 1, 1, 0]))
    np.testing.assert_array_equal(cluster_extremes(two).points, [2.0, 0.5])
    with pytest.raises(ConfigError):
        cluster_extremes(PointConfiguration(np.array([1.0])))


def _extremes_counts():
    levels = tuple(np.linspace(-2.0, 1.0, 7))
    return levels, experiments.extremes_counts(P, 8.0, 1.0, levels, 10_000, SEED)


def test_cluster_extremes_slope():
    levels, counts = _extremes_counts()
    slope = np.polyfit(levels, np.log(counts.mean(axis=0)), 1)[0]
    assert abs(slope + SQRT2) / SQRT2 <= 0.05


def test_cluster_extremes_dispersion():
    _, counts = _extremes_counts()
    disp = counts.var(axis=0, ddof=1) / counts.mean(axis=0)
    assert np.all((disp >= 0.85) & (disp <= 1.15))


# ---------------------------------------------------------------- P_Y

def test_PY_vanishing_Y():
    gen = np.random.default_rng(0)
    assert all(len(sample_PY(1e-300, 0.1, P, -3.0, gen)) == 0 for _ in range(100))


def test_PY_mass():
    C, Y, y_min = 0.107, 2.0, -1.0
    mass = P.sigma2 * C * Y * math.exp(-SQRT2 * y_min)
    gen = np.random.default_rng(SEED)
    n = np.array([len(sample_PY(Y, C, P, y_min, gen)) for _ in range(10_000)])
    assert abs(n.mean() - mass) <= 3 * n.std(ddof=1) / math.sqrt(n.size)


def test_PY_superposition():
    C, y_min = 0.107, -3.0
    g = np.random.default_rng(SEED + 1)
    both = [max(sample_PY(1.0, C, P, y_min, g).max, sample_PY(2.5, C, P, y_min, g).max)
            for _ in range(100_000)]
    single = [sample_PY(3.5, C, P, y_min, g).max for _ in range(100_000)]
    assert ks_statistic(both, single) <= 0.02


def test_PY_errors():
    gen = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        sample_PY(1.0, 0.1, P, -math.inf, gen)
    with pytest.raises(ConfigError):
        sample_PY(1.0, 0.1, P, -20.0, gen)


# ---------------------------------------------------------------- cluster law

def test_cluster_law_basic():
    for i in range(10):
        gaps, over = sample_cluster_law(4.0, A_BELOW, RngStream(SEED + 8, i))
        assert over >= 0
        assert 0.0 in gaps.gaps and np.all(gaps.gaps <= 0)
    with pytest.raises(ConfigError):
        sample_cluster_law(9.0, A_BELOW, RngStream(1))


def test_cluster_law_depth_truncation():
    gaps, _ = sample_cluster_law(4.0, A_BELOW, RngStream(SEED + 9), depth=1.5)
    assert np.all(gaps.gaps >= -1.5)


def test_overshoot_mean_t6():
    res = experiments.cluster_study(6.0, A_BELOW, 1000, experiments._subseed(SEED, 3))
    target = 1.0 / LAM
    assert abs(res.overshoots.mean() - target) <= 0.15 * target


def test_reservoir_draw():
    res = build_cluster_reservoir(3, 3.0, A_BELOW, 5)
    assert len(res) == 3 and res.attempts >= 3
    assert len(res.draw(10, np.random.default_rng(0))) == 10
    with pytest.raises(ConfigError):
        ClusterReservoir((), np.empty(0), 1.0, 1.0).draw(1, np.random.default_rng(0))


# ---------------------------------------------------------------- decoration

def test_decorate_trivial_clusters():
    anchors = PointConfiguration(np.array([1.0, -0.5, 0.2]), np.arange(3))
    deco = decorate(anchors, [GapConfiguration(np.zeros(1))] * 3, P)
    np.testing.assert_array_equal(deco.configuration.points, anchors.points)
    assert deco.configuration.max == anchors.max


def test_decorate_arity():
    anchors = PointConfiguration(np.array([1.0]), np.arange(1))
    with pytest.raises(ConfigError):
        decorate(anchors, [], P)


gap_lists = st.lists(st.floats(-5.0, 0.0), min_size=0, max_size=6)


@given(st.lists(st.tuples(st.floats(-5.0, 5.0), gap_lists), min_size=1, max_size=8))
def test_decoration_anchor_identity(data):
    anchors = PointConfiguration(np.array([p for p, _ in data]), np.arange(len(data)))
    clusters = [GapConfiguration(np.array([0.0] + g)) for _, g in data]
    deco = decorate(anchors, clusters, P).configuration
    assert deco.max == anchors.max
    for i, p in enumerate(anchors.points):
        assert deco.points[deco.labels == i].max() == p


def test_decorated_max_matches_direct():
    res = experiments.cluster_study(6.0, A_BELOW, 1000, experiments._subseed(SEED, 3))
    C = experiments.tail_constant(A_BELOW)
    study = below_direct()
    deco = experiments.decorated_points(tuple(study.Y), C.C, res, P, 10_000,
                                        experiments._subseed(SEED, 4))
    lo = experiments.POINT_CUTOFF
    dmax = np.array([p[0] if p.size else -math.inf for p in deco])
    assert ks_statistic(np.maximum(study.maxima, lo), np.maximum(dmax, lo)) <= 0.1


# ---------------------------------------------------------------- ABOVE concatenation

def test_concatenation_single_anchor():
    # replay the generator draws to check sigma1 e_1 + sigma2 e^(1)_j for k = 1
    Q, t = CANONICAL_ABOVE, 6.0
    rs = RngStream(SEED, 11)
    cfg = concatenate_above_regime(Q, t, rs, k=1)
    gen = rs.generator()
    t1, t2 = Q.b * t, (1 - Q.b) * t
    kern = _kernels_for(None)
    first, _ = _run_stages([0.0], (0.0, t1), [1.0], BINARY, None, gen, DEFAULT_CAP, kern)
    e1 = first[-1].max() - standard_centering(t1)
    second, _ = _run_stages(np.zeros(1), (0.0, t2), [1.0], BINARY, None, gen, DEFAULT_CAP, kern)
    e_child = np.sort(second[-1])[::-1] - standard_centering(t2)
    assert np.all(cfg.labels == 0)
    np.testing.assert_allclose(cfg.points, Q.sigma1 * e1 + Q.sigma2 * e_child, rtol=0, atol=1e-12)
    assert cfg.max == pytest.approx(Q.sigma1 * e1 + Q.sigma2 * e_child[0], abs=1e-12)


def test_concatenation_cutoff_and_regime():
    Q = CANONICAL_ABOVE
    cut = concatenate_above_regime(Q, 6.0, RngStream(3), cutoff=-1.0, margin=8.0)
    assert len(cut) > 0 and np.all(cut.points >= -1.0)
    assert len(concatenate_above_regime(Q, 6.0, RngStream(3), cutoff=50.0)) == 0
    with pytest.raises(ConfigError):
        concatenate_above_regime(P, 6.0, RngStream(3))
