"""The numba and numpy kernels draw random numbers in different orders, so they
agree in law; the deterministic solver kernels agree to round-off."""
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from twospeed import _backend, _kernels, fkpp
from twospeed.engine import (RngStream, simulate_conditioned, simulate_standard,
                             simulate_two_speed)
from twospeed.model import CANONICAL_BELOW, BarrierSpec, SimulationPlan
from twospeed.stats import ks_statistic

pytestmark = pytest.mark.skipif(not _backend.HAVE_NUMBA, reason="numba not installed")


def _ks_critical(n, m, alpha=1e-3):
    # asymptotic two-sample KS critical value
    return math.sqrt(-0.5 * math.log(alpha / 2) * (n + m) / (n * m))


def test_kernel_tables():
    assert set(_kernels.KERNELS) == {"numba", "numpy"}
    for table in _kernels.KERNELS.values():
        assert {"evolve_stage", "conditioned_attempts", "cn_steps"} <= set(table)


def test_tridiagonal_solvers_agree():
    gen = np.random.default_rng(0)
    n = 200
    lower, upper = gen.uniform(-1, 0, n), gen.uniform(-1, 0, n)
    diag = 3.0 + gen.random(n)
    rhs = gen.normal(size=n)
    a = _kernels._tridiag_solve_nb(lower, diag, upper, rhs)
    b = _kernels._tridiag_solve_np(lower, diag, upper, rhs)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    A = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    np.testing.assert_allclose(A @ a, rhs, atol=1e-10)


@pytest.mark.parametrize("kind", ["heaviside", "laplace"])
def test_pde_backends_agree(kind):
    kw = {} if kind == "heaviside" else dict(phi="bump-wide", delta=1.0, sigma2=math.sqrt(2))
    a = fkpp.solve(10.0, kind=kind, backend="numba", **kw)
    b = fkpp.solve(10.0, kind=kind, backend="numpy", **kw)
    assert np.max(np.abs(a.u - b.u)) <= 1e-12
    assert fkpp.front_position(a) == pytest.approx(fkpp.front_position(b), abs=1e-10)


def test_standard_max_law_agrees():
    n = 10_000
    a = [simulate_standard(5.0, rng=RngStream(1, i), backend="numba").max() for i in range(n)]
    b = [simulate_standard(5.0, rng=RngStream(2, i), backend="numpy").max() for i in range(n)]
    assert ks_statistic(a, b) <= _ks_critical(n, n)


def test_two_speed_max_law_agrees():
    plan = SimulationPlan(t=6.0, profile=CANONICAL_BELOW, barrier=BarrierSpec(2.0, 2.0))
    n = 3000
    a = [simulate_two_speed(plan, RngStream(3, i), backend="numba").terminal.max()
         for i in range(n)]
    b = [simulate_two_speed(plan, RngStream(4, i), backend="numpy").terminal.max()
         for i in range(n)]
    assert ks_statistic(a, b) <= _ks_critical(n, n)


def test_conditioned_overshoot_agrees():
    level, n = 1.0, 600
    over = {}
    for k, be in enumerate(("numba", "numpy")):
        over[be] = [simulate_conditioned(3.0, level, rng=RngStream(5 + k, i), backend=be).max()
                    - math.sqrt(2) * 3.0 - level for i in range(n)]
    assert ks_statistic(over["numba"], over["numpy"]) <= _ks_critical(n, n)


def test_each_backend_is_reproducible():
    for be in ("numba", "numpy"):
        a = simulate_standard(4.0, rng=RngStream(9), backend=be).positions
        b = simulate_standard(4.0, rng=RngStream(9), backend=be).positions
        np.testing.assert_array_equal(a, b)


def test_environment_selects_backend():
    code = "from twospeed import _backend; print(_backend.USE_NUMBA)"
    env = dict(os.environ, TWOSPEED_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.strip()
    assert out == "False"
    env["TWOSPEED_BACKEND"] = "fortran"
    proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert proc.returncode != 0 and "TWOSPEED_BACKEND" in proc.stderr
