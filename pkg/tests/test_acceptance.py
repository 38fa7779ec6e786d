"""The thirteen acceptance criteria, each at its stated tolerance and runtime budget.

Budgets are quoted for an 8-core machine and rescaled to the cores available.
An experiment that reuses a memoized study is charged for that study's compute
time as well, so a warm cache never flatters a runtime.  Each criterion prints
one PASS/FAIL line (also collected into the pytest terminal summary).
"""
import json
import math
import os
import time

import pytest

from conftest import SEED, entry, run_experiment
from twospeed import experiments
from twospeed.experiments import ExperimentDescriptor, execute, isolated_cache
from twospeed.model import CANONICAL_BELOW, SQRT2, drift_parameter

pytestmark = pytest.mark.acceptance

LINES = []


def _budget(minutes: float) -> float:
    cores = os.cpu_count() or 1
    return minutes * 60.0 * experiments.BUDGET_CORES / min(max(cores, 1), experiments.BUDGET_CORES)


A = drift_parameter(CANONICAL_BELOW)
# memoized studies each experiment reads
DIRECT = (experiments.direct_study, (CANONICAL_BELOW, 12.0, 10_000, SEED, experiments.DIRECT_BARRIER))
TAIL_C = (experiments.tail_constant, (A,))
CLUSTERS = (experiments.cluster_study, (6.0, A, 1000, experiments._subseed(SEED, 3)))
AUX_DEPS = (DIRECT, TAIL_C, CLUSTERS)


def _report(number: int, title: str, checks, runtime: float, minutes: float) -> bool:
    """``checks`` are ``(label, value, passed)``; the runtime check is appended here."""
    budget = _budget(minutes)
    checks = list(checks) + [("runtime s", runtime, runtime <= budget)]
    ok = all(bool(p) for _, _, p in checks)
    detail = "; ".join(f"{lab}={val:.4g}{'' if p else ' (x)'}" for lab, val, p in checks)
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail} " \
           f"(budget {budget:.0f} s)"
    print(line)
    LINES.append(line)
    return ok


def _checks(result, *prefixes):
    out = []
    for pre in prefixes:
        for e in result.entries:
            if e.statistic.startswith(pre):
                out.append((e.statistic, e.value, e.passed))
    assert out, f"no entries for {prefixes} in {result.name}"
    return out


def test_criterion_01_martingale_mean():
    res, elapsed = run_experiment("below-martingale")
    assert _report(1, "McKean martingale mean", _checks(res, "mean Y_"), elapsed, 2)


def test_criterion_02_martingale_convergence():
    res, elapsed = run_experiment("below-martingale")
    assert _report(2, "McKean martingale convergence", _checks(res, "KS(Y_8, Y_12)"), elapsed, 3)


def test_criterion_03_localization():
    res, elapsed = run_experiment("below-localization")
    assert _report(3, "top ancestor localization", _checks(res, "fraction of top-1 "), elapsed, 5)


def test_criterion_04_bramson():
    res, elapsed = run_experiment("fkpp-bramson")
    e = entry(res, "front(")
    pred = SQRT2 * 25 - 3 / (2 * SQRT2) * math.log(2)
    checks = [(e.statistic, e.value, abs(e.value - pred) <= 0.35 and e.passed)]
    assert _report(4, "F-KPP Bramson correction", checks, elapsed, 2)


def test_criterion_05_tail_constant():
    res, elapsed = run_experiment("fkpp-constant")
    assert len(res.entries) == 5
    checks = [(e.statistic, e.value, e.passed) for e in res.entries]
    assert _report(5, "tail constant C(a)", checks, elapsed, 5)


def test_criterion_06_max_law():
    res, elapsed = run_experiment("below-max-law", (DIRECT, TAIL_C))
    checks = _checks(res, "KS(max ECDF", "C(a)")
    assert entry(res, "KS(max ECDF").value <= 0.10
    assert _report(6, "BELOW max law", checks, elapsed, 15)


def test_criterion_07_auxiliary_equivalence():
    res, elapsed = run_experiment("below-auxiliary-equivalence", AUX_DEPS)
    checks = _checks(res, "KS(direct max, Pi_t max)", "|KS shift| under window doubling")
    assert _report(7, "auxiliary process equivalence", checks, elapsed, 15)


def test_criterion_08_cluster_poisson():
    res, elapsed = run_experiment("below-cluster-poisson")
    checks = _checks(res, "log-mean count slope", "variance/mean at")
    assert len(checks) == 8
    assert _report(8, "cluster-extremes Poisson counts", checks, elapsed, 10)


def test_criterion_09_overshoot():
    res, elapsed = run_experiment("cluster-overshoot", (CLUSTERS,))
    target = SQRT2 + A
    e = entry(res, "exponential overshoot rate")
    samples = CLUSTERS[0](*CLUSTERS[1])
    checks = [(e.statistic, e.value, abs(e.value - target) <= 0.15 * target),
              ("accepted samples", len(samples), len(samples) >= 1000)]
    assert _report(9, "cluster overshoot law", checks, elapsed, 10)


def test_criterion_10_conditional_independence():
    res, elapsed = run_experiment("cluster-overshoot", (CLUSTERS,))
    assert _report(10, "overshoot / gap independence", _checks(res, "corr(overshoot"), elapsed, 10)


def test_criterion_11_above_concatenation():
    conc, t1 = run_experiment("above-concatenation")
    loc, t2 = run_experiment("above-ancestor-localization")
    checks = _checks(conc, "KS(direct max, concatenation max)") + _checks(loc, "fraction")
    assert _report(11, "ABOVE concatenation", checks, t1 + t2, 15)


def test_criterion_12_laplace():
    res, elapsed = run_experiment("below-auxiliary-equivalence", AUX_DEPS)
    checks = _checks(res, "|Laplace(direct) - Laplace(decorated)|")
    assert len(checks) == 3
    assert _report(12, "Laplace functionals", checks, elapsed, 10)


# small replica counts keep the reruns cheap; every stochastic code path is still exercised
_DETERMINISM = [
    ("below-martingale", 40, {}),
    ("below-localization", 20, {"t": 8.0}),
    ("below-cluster-poisson", 40, {}),
    ("below-max-law", 40, {"t": 8.0}),
    ("below-auxiliary-equivalence", 20, {"t": 8.0, "cluster_t": 3.0, "clusters": 5}),
    ("cluster-overshoot", 10, {"t": 4.0}),
    ("above-concatenation", 40, {"t": 8.0}),
    ("above-ancestor-localization", 40, {"t": 8.0}),
    ("fkpp-bramson", 1, {"t1": 5.0, "t2": 10.0}),
]


def _strip_timestamp(text: str) -> dict:
    doc = json.loads(text)
    doc.pop("timestamp")
    return doc


def test_criterion_13_determinism():
    t0 = time.perf_counter()
    mismatched = []
    for name, n, params in _DETERMINISM:
        desc = ExperimentDescriptor(name, SEED, replicas=n, params=params)
        runs = []
        for _ in range(2):
            with isolated_cache():
                runs.append(execute(desc).artifacts)
        a, b = runs
        if set(a) != set(b) or _strip_timestamp(a["report.json"]) != _strip_timestamp(b["report.json"]):
            mismatched.append(name)
            continue
        if any(a[k] != b[k] for k in a if k != "report.json"):
            mismatched.append(name)
    checks = [("experiments compared", len(_DETERMINISM), True),
              ("byte-identical", len(_DETERMINISM) - len(mismatched), not mismatched)]
    assert _report(13, "determinism", checks, time.perf_counter() - t0, 5), mismatched
