import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twospeed.model import (BINARY, CANONICAL_ABOVE, CANONICAL_BELOW, STANDARD_PROFILE,
                            BarrierSpec, ConfigError, OffspringLaw, Regime, SimulationPlan,
                            SpeedProfile, centering, complete_profile, drift_parameter,
                            parse_config, plan_from_config)

SQRT2 = math.sqrt(2.0)


def test_complete_profile_examples():
    p = complete_profile(0.5, 2 / 3)
    assert p.sigma2_sq == pytest.approx(2.0, abs=1e-12)
    assert p.regime() is Regime.BELOW
    q = complete_profile(1.0, 0.5)
    assert q.sigma2_sq == 1.0 and q.regime() is Regime.STANDARD
    r = complete_profile(1.5, 0.5)
    assert r.sigma2_sq == pytest.approx(0.5, abs=1e-12)
    assert r.regime() is Regime.ABOVE


@pytest.mark.parametrize("sigma1_sq,b", [(0.5, 1.0), (2.0, 0.5), (1.5, 0.7), (0.5, 0.0), (-0.1, 0.5)])
def test_complete_profile_rejects(sigma1_sq, b):
    with pytest.raises(ConfigError):
        complete_profile(sigma1_sq, b)


def test_profile_normalisation_enforced():
    with pytest.raises(ConfigError):
        SpeedProfile(0.5, 1.9, 2 / 3)
    with pytest.raises(ConfigError):
        SpeedProfile(0.5, 2.0, 1.5)


def test_drift_parameter_examples():
    assert drift_parameter(CANONICAL_BELOW) == pytest.approx(2 - SQRT2, abs=1e-12)
    assert drift_parameter(CANONICAL_BELOW) == pytest.approx(0.585786, abs=1e-6)
    with pytest.raises(ConfigError):
        drift_parameter(STANDARD_PROFILE)
    with pytest.raises(ConfigError):
        drift_parameter(CANONICAL_ABOVE)
    p = complete_profile((1 - 0.4) / 0.9, 0.9)
    assert p.sigma2_sq == pytest.approx(4.0, rel=1e-12)
    assert drift_parameter(p) == pytest.approx(SQRT2, abs=1e-9)


def test_centering_examples():
    # high-precision evaluations of the closed forms; the quoted 5-decimal values
    # 139.79322 and 136.53693 carry a rounding slip in the last digits
    assert centering(100.0, CANONICAL_BELOW) == pytest.approx(139.793182703794358, abs=1e-9)
    assert centering(100.0, STANDARD_PROFILE) == pytest.approx(136.536835636764064, abs=1e-9)
    assert centering(100.0, CANONICAL_BELOW) == pytest.approx(139.79322, abs=1e-4)
    assert centering(100.0, STANDARD_PROFILE) == pytest.approx(136.53693, abs=2e-4)
    assert centering(100.0, CANONICAL_ABOVE) == pytest.approx(128.5866, abs=1e-3)
    assert centering(100.0, CANONICAL_ABOVE) == pytest.approx(128.586656170037870, abs=1e-9)
    with pytest.raises(ConfigError):
        centering(1.0, CANONICAL_BELOW)


@given(st.floats(1.5, 500.0))
def test_centering_log_increment(t):
    # centering(e t) - centering(t) has a closed form in every regime
    e = math.e
    below = SQRT2 * (e - 1) * t - 1 / (2 * SQRT2)
    std = SQRT2 * (e - 1) * t - 3 / (2 * SQRT2)
    s1, s2, b = CANONICAL_ABOVE.sigma1, CANONICAL_ABOVE.sigma2, CANONICAL_ABOVE.b
    above = SQRT2 * (e - 1) * t * (b * s1 + (1 - b) * s2) - 3 / (2 * SQRT2) * (s1 + s2)
    assert centering(e * t, CANONICAL_BELOW) - centering(t, CANONICAL_BELOW) == pytest.approx(below, abs=1e-9 * max(1, t))
    assert centering(e * t, STANDARD_PROFILE) - centering(t, STANDARD_PROFILE) == pytest.approx(std, abs=1e-9 * max(1, t))
    assert centering(e * t, CANONICAL_ABOVE) - centering(t, CANONICAL_ABOVE) == pytest.approx(above, abs=1e-9 * max(1, t))


def test_centering_drops_logarithmically():
    for p in (CANONICAL_BELOW, STANDARD_PROFILE):
        gaps = [centering(t, p) - SQRT2 * t for t in (10.0, 100.0, 1000.0, 10000.0)]
        assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))


profiles = st.tuples(st.floats(0.0, 3.0), st.floats(0.01, 0.99)).filter(lambda p: p[0] * p[1] < 0.99)


@given(profiles)
def test_complete_profile_normalised(args):
    s1, b = args
    p = complete_profile(s1, b)
    assert abs(p.sigma1_sq * p.b + p.sigma2_sq * (1 - p.b) - 1.0) <= 1e-12


@given(profiles)
def test_regime_stable_under_round_trip(args):
    p = complete_profile(*args)
    q = complete_profile(p.sigma1_sq, p.b)
    assert q.regime() is p.regime()
    assert q == p


def test_offspring_law():
    assert BINARY.mean == 2.0 and BINARY.K == 2.0
    law = OffspringLaw((1, 3), (0.5, 0.5))
    assert law.mean == pytest.approx(2.0) and law.K == pytest.approx(3.0)
    assert OffspringLaw.parse("1:0.5,3:0.5") == law
    assert OffspringLaw.parse(law.label()) == law
    with pytest.raises(ConfigError):
        OffspringLaw((2, 3), (0.5, 0.5))          # mean 2.5
    with pytest.raises(ConfigError):
        OffspringLaw((2,), (0.9,))                # does not sum to 1
    with pytest.raises(ConfigError):
        OffspringLaw.parse("two")


def test_reaction_binary_is_logistic():
    for u in (0.0, 0.3, 1.0):
        assert BINARY.reaction(u) == pytest.approx(u - u * u)


def test_plan_checkpoints():
    plan = SimulationPlan(t=12.0, profile=CANONICAL_BELOW, checkpoints=(2.0, 4.0))
    assert plan.checkpoints == (2.0, 4.0, 8.0, 12.0)
    assert plan.split_time == pytest.approx(8.0)
    with pytest.raises(ConfigError):
        SimulationPlan(t=12.0, profile=CANONICAL_BELOW, checkpoints=(4.0, 2.0))
    with pytest.raises(ConfigError):
        SimulationPlan(t=12.0, profile=CANONICAL_BELOW, checkpoints=(13.0,))
    with pytest.raises(ConfigError):
        SimulationPlan(t=0.0, profile=CANONICAL_BELOW)
    with pytest.raises(ConfigError):
        SimulationPlan(t=1.0, profile=CANONICAL_BELOW, seed=-1)
    with pytest.raises(ConfigError):
        SimulationPlan(t=1.0, profile=CANONICAL_BELOW, replicas=0)


def test_barrier_spec():
    assert BarrierSpec().kappa1 == 6.0
    with pytest.raises(ConfigError):
        BarrierSpec(0.0, 1.0)


def test_config_parsing():
    text = "sigma1_sq = 0.5\nb = 0.6666666666666666\nt = 6  # horizon\nseed = 7\n" \
           "replicas = 3\nbarrier.kappa1 = 2\noffspring = binary\n"
    plan = plan_from_config(text)
    assert plan.profile.sigma2_sq == pytest.approx(2.0)
    assert plan.seed == 7 and plan.replicas == 3 and plan.barrier.kappa1 == 2.0
    assert plan_from_config(text, seed=9, replicas=None).seed == 9
    with pytest.raises(ConfigError):
        parse_config("colour = red")
    with pytest.raises(ConfigError):
        parse_config("t = 1\nt = 2")
    with pytest.raises(ConfigError):
        plan_from_config("sigma1_sq = 0.5\nb = 0.5\nt = 3")      # seed missing
