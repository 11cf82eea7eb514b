from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from nnwalk import analytics as an
from nnwalk import simulator as sim
from nnwalk import statlab as sl
from nnwalk.model import StepModel

CONST = StepModel.constant(0.1)
K1B3 = StepModel.lambda_family(1, 3)


# -- special functions -----------------------------------------------------------


@pytest.mark.parametrize(
    "x,ref", [(0.5, math.sqrt(math.pi)), (1.0, 1.0), (1.5, math.sqrt(math.pi) / 2), (2.0, 1.0), (5.0, 24.0)]
)
def test_gamma_textbook_values(x, ref):
    assert abs(sl.gamma_fn(x) / ref - 1) <= 1e-10


@given(st.floats(1e-3, 30.0))
def test_gamma_against_scipy(x):
    assert abs(sl.gamma_fn(x) / special.gamma(x) - 1) <= 1e-10


def test_gamma_pole():
    with pytest.raises(ValueError):
        sl.gamma_fn(0.0)


def test_kolmogorov_critical():
    assert sl.kolmogorov_critical(0.01) == pytest.approx(1.628, abs=5e-4)
    for a in (0.2, 0.05, 0.01, 0.001):
        assert sl.kolmogorov_critical(a) == pytest.approx(special.kolmogi(a), rel=1e-9)
    assert sl.ks_critical_value(10_000) == pytest.approx(sl.kolmogorov_critical(0.01) / 100)


@given(st.floats(0.05, 3.0))
def test_kolmogorov_cdf_against_scipy(x):
    assert sl.kolmogorov_cdf(x) == pytest.approx(1 - special.kolmogorov(x), abs=1e-12)


def test_kolmogorov_branches_agree():
    # theta and alternating forms meet at x = 1
    lo = sl.kolmogorov_cdf(1 - 1e-12)
    hi = sl.kolmogorov_cdf(1 + 1e-12)
    assert lo == pytest.approx(hi, abs=1e-10)


def test_adaptive_simpson():
    assert sl.adaptive_simpson(math.sin, 0, math.pi) == pytest.approx(2.0, abs=1e-10)
    assert sl.adaptive_simpson(lambda u: u**5, 0, 2) == pytest.approx(64 / 6, rel=1e-13)
    with pytest.raises(ArithmeticError):
        sl.adaptive_simpson(lambda u: 1 / u if u > 0 else 0.0, 0, 1, tol=1e-14, max_depth=8)


@pytest.mark.parametrize("B", [1.5, 2.0, 3.0])
def test_limit_density_normalised(B):
    total = sl.adaptive_simpson(lambda u: sl.limit_density(u, B), 0, 12, 1e-12)
    assert abs(total - 1) <= 1e-10


@pytest.mark.parametrize("B", [1.5, 2.0, 3.0])
def test_limit_cdf_against_scipy(B):
    x = np.array([0.0, 0.3, 1.0, 1.7, 2.5, 4.0, 11.0, 15.0])
    ref = special.gammainc((B + 1) / 2, x**2 / 2)
    np.testing.assert_allclose(sl.limit_cdf(x, B), ref, atol=1e-9)
    # input order must not matter
    np.testing.assert_allclose(sl.limit_cdf(x[::-1], B), ref[::-1], atol=1e-9)


# -- fits: null self-tests and controls ------------------------------------------------


def _null_passes(draw, fit, runs=100):
    rng = np.random.default_rng(20261016)
    return sum(fit(draw(rng)).consistent for _ in range(runs))


def test_null_geometric():
    assert _null_passes(lambda r: r.geometric(0.2, 2000), lambda x: sl.fit_geometric(x, 0.2)) >= 97


def test_null_exponential():
    assert _null_passes(lambda r: r.exponential(size=2000), sl.fit_exponential_limit) >= 97


def test_null_limit_density():
    # X with density u^B e^{-u^2/2} is sqrt(2 G), G ~ Gamma((B+1)/2)
    draw = lambda r: np.sqrt(2 * r.gamma(1.5, size=1000))  # noqa: E731
    assert _null_passes(draw, lambda x: sl.limit_density_check(x, 2.0)) >= 97


def test_null_geometric_inverse_cdf_of_exact_pmf():
    # inverse CDF of the analytic pmf (q = 0.2) fed back to the fit
    u = np.random.default_rng(5).random(10_000)
    L = np.arange(1, 400)
    cdf = np.cumsum(an.local_time_pmf(CONST, 50, L))
    x = L[np.searchsorted(cdf, u)]
    assert sl.fit_geometric(x, 0.2).consistent


def test_geometric_controls():
    rng = np.random.default_rng(1)
    x = rng.geometric(0.2, 100_000)
    assert not sl.fit_geometric(x, 0.3).consistent
    rep = sl.fit_geometric(np.full(200, 3), 0.2)
    assert rep.decision == "rejected" and "degenerate" in rep.note
    with pytest.raises(ValueError):
        sl.fit_geometric(x[:50], 0.2)


def test_exponential_controls():
    rng = np.random.default_rng(2)
    assert not sl.fit_exponential_limit(0.5 * rng.geometric(0.5, 10_000)).consistent
    assert sl.fit_exponential_limit(rng.exponential(size=10_000)).consistent


def test_limit_density_wrong_B_rejected():
    rng = np.random.default_rng(3)
    x = np.sqrt(2 * rng.gamma(2.0, size=10_000))  # B = 3
    assert not sl.limit_density_check(x, 2.0).consistent


def test_fit_report_decision_rule():
    r = sl.FitReport.judge("t", 0.5, 0.5, 0.01, 10)
    assert r.consistent
    r = sl.FitReport.judge("t", 0.51, 0.5, 0.01, 10)
    assert not r.consistent
    assert json.loads(r.to_json())["decision"] == "rejected"


# -- moment checks -------------------------------------------------------------------------


def test_conditional_mean_and_control():
    i, j = sim.conditional_pairs(CONST, 20, 1e-6, 33, 30_000)
    rep = sl.conditional_mean_check(i, j, CONST, 20)
    assert rep.consistent
    g1 = rep.details["groups"][1]
    assert g1["target"] == pytest.approx(5 / 3)
    assert 0 not in rep.details["groups"]
    shuffled = np.random.default_rng(0).permutation(i)
    assert not sl.conditional_mean_check(shuffled, j, CONST, 20).consistent
    with pytest.raises(ValueError):
        sl.conditional_mean_check(i[:10], j[:10], CONST, 20)


def test_mean_identity():
    b = sim.sample_local_times(K1B3, 200, 1e-5, 4, 5000)
    assert sl.mean_identity_check(b.xi, b.xi_up, K1B3, 200).consistent


def test_submartingale_trace():
    Rs = [2, 4, 6, 8]
    w = sim.sample_window(CONST, 2, 8, 1e-6, 6, 20_000)
    up = w.up[:, [R - 2 for R in Rs]]
    tr = sl.submartingale_trace(Rs, up, CONST)
    assert tr.decision == "consistent"
    # E zeta(R) = D / (c_1 ... c_R) = 3 (3/2)^R for the constant model
    for (R, _), e in zip(tr.points, tr.expected):
        assert e == pytest.approx(3 * 1.5**R, rel=1e-10)
    for (R, m), e, s in zip(tr.points, tr.expected, tr.stderr):
        assert abs(m - e) <= 3 * s
    single = sl.submartingale_trace([4], up[:, 1:2], CONST)
    assert single.decision == "consistent"


def test_lil_local_time_trace():
    Rs = [100, 1000, 10**4]
    xi = np.array([[10, 20, 30], [5, 2000, 40]])
    tr = sl.lil_trace_local_time(Rs, xi, 3.0)
    norm = 2 * 10**4 * math.log(math.log(10**4)) / 2
    assert norm == pytest.approx(10**4 * math.log(math.log(10**4)))
    assert tr.points[2][1] == pytest.approx(40 / norm)
    seq = tr.running_max_sequence
    assert np.all(np.diff(seq) >= 0) and seq[-1] == tr.running_max


def test_local_time_bound_trace():
    Rs = [100, 1000]
    D = [an.d_infinity(K1B3, R).value for R in Rs]
    xi = np.array([[2 * D[0] * math.log(100) * 1.2, 1], [1, 1]])
    tr = sl.local_time_bound_trace(Rs, xi, K1B3, 1.5)
    assert tr.points[0][1] == pytest.approx(1.2)
    assert tr.decision == "consistent"
    assert sl.local_time_bound_trace(Rs, xi, K1B3, 1.1).decision == "rejected"


def test_lil_position_trace():
    times = np.array([1, 2, 4, 2**20])
    pos = np.array([[1, 2, 2, 1000], [1, 0, 4, 3000]])
    tr = sl.lil_trace_position(times, pos)
    assert [x for x, _ in tr.points] == [4, 2**20]
    norm = math.sqrt(2 * 2**20 * math.log(math.log(2**20)))
    assert tr.points[-1][1] == pytest.approx(3000 / norm)


def test_lln_check():
    x = np.full(50, 1000.0) + np.arange(50)
    rep = sl.lln_check(x, 10**6, 0.5, 2.0)
    assert rep.details["ode_constant"] == pytest.approx(1.5 ** (2 / 3), rel=1e-12)
    assert rep.details["ode_constant"] == pytest.approx(1.3104, abs=1e-4)
    assert rep.details["stated_constant"] == pytest.approx(1.5)
    assert rep.consistent
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            sl.lln_check(x, 10**6, bad, 2.0)


def test_lln_spread_shrinks():
    m = StepModel.power(0.5, 2.0)
    small = sl.lln_check(sim.position_samples(m, 10**4, 200, 1), 10**4, 0.5, 2.0)
    big = sl.lln_check(sim.position_samples(m, 10**6, 200, 1), 10**6, 0.5, 2.0)
    assert big.statistic < small.statistic


def test_ones_run_frequency_constant():
    scans = sim.scan_many(CONST, 31, 306, 1e-6, 3, 300)
    rep = sl.ones_run_frequency(scans, CONST, (30, 300), [1, 2, 3])
    assert rep.consistent
    per = rep.details["lengths"]
    assert per[1]["expected"] == pytest.approx(0.2 * 271, rel=1e-9)
    means = [per[L]["mean"] for L in (1, 2, 3)]
    assert means[0] >= means[1] >= means[2]


def test_ones_run_frequency_skips_rare_lengths():
    scans = sim.scan_many(CONST, 31, 60, 1e-6, 3, 20)
    rep = sl.ones_run_frequency(scans, CONST, (30, 50), [1, 8])
    assert 8 not in rep.details["lengths"] and "L=8 skipped" in rep.note


def test_ones_run_frequency_needs_coverage():
    scans = sim.scan_many(CONST, 31, 60, 1e-6, 3, 2)
    with pytest.raises(ValueError):
        sl.ones_run_frequency(scans, CONST, (30, 60), [1, 2])


def test_trace_serialisation():
    tr = sl.LILTrace("t", ((1.0, 0.5), (2.0, 0.25)), 0.5, "norm", stderr=(0.1, 0.2))
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == ["x", "ratio", "running_max", "stderr"]
    assert rows[2] == ["2", "0.25", "0.5", "0.20000000000000001"]
    d = json.loads(tr.to_json())
    assert d["points"] == [[1.0, 0.5], [2.0, 0.25]]
