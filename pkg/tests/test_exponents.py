import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import LOG_GOLDEN
from ugibbs import exponents as ex
from ugibbs.systems import TorusPoint, jacobian_cocycle, make_system

X = TorusPoint((0.1234, 0.5678))
X4 = TorusPoint((0.1234, 0.5678, 0.31, 0.77))


def brute_kappa(values, delta):
    n = len(values)
    m = ex.admissible_size(n, delta)
    return min(sum(values[i] for i in idx) / len(idx)
               for size in range(m, n + 1) for idx in combinations(range(n), size))


def test_lambda_kpn_examples(cat, identity):
    A100 = jacobian_cocycle(cat, X, 100).matrix
    assert ex.lambda_kpn(cat, X, 1, 7, 100).value == pytest.approx(math.log(np.linalg.norm(A100, 2)) / 100, rel=1e-12)
    assert ex.lambda_kpn(cat, X, 1, 7, 100).value == pytest.approx(LOG_GOLDEN, abs=2e-3)
    for k in (1, 2):
        for p in (1, 3):
            assert ex.lambda_kpn(identity, X, k, p, 50).value == 0.0
    assert ex.lambda_kpn(cat, X, 2, 50, 200).value == pytest.approx(-LOG_GOLDEN, abs=1e-2)
    for bad in ((0, 1, 5), (3, 1, 5), (1, 0, 5), (1, 1, 0)):
        with pytest.raises(ValueError):
            ex.lambda_kpn(cat, X, *bad)


def test_lambda_1pn_is_bit_identical_across_p():
    for name in ("cat2", "cat2_perturbed:eps=0.1", "skew:ns,cat2_path"):
        s = make_system(name)
        x = TorusPoint(tuple(0.2 + 0.1 * i for i in range(s.d)))
        vals = {ex.lambda_kpn(s, x, 1, p, 300).value for p in (1, 2, 5, 11)}
        assert vals == {ex.sigma_k(s, x, 1, 300).value}


def test_lambda_k_examples(cat):
    one = ex.lambda_k(cat, X, 1, [1, 2, 4], 200)
    assert one.value == ex.lambda_kpn(cat, X, 1, 3, 200).value
    curve = [v for _, v in ex.lambda_k(cat, X, 2, [1, 2, 4, 8], 200).extra["curve"]]
    assert max(curve) - min(curve) <= 1e-12
    with pytest.raises(ValueError):
        ex.lambda_k(cat, X, 1, [], 10)


def test_lambda_k_cat_times_identity():
    # the one expanding direction is cancelled by the j = 1 correction
    s = make_system("product:cat2,identity2")
    assert ex.lambda_k(s, X4, 2, [1, 2, 4], 500).value == pytest.approx(0.0, abs=1e-3)


@pytest.mark.parametrize("name", ["cat2_perturbed:eps=0.1", "skew:ns,cat2_path", "cat3", "product:cat2,cat2"])
def test_lambda_kpn_below_singular_value_product(name):
    s = make_system(name)
    x = TorusPoint(tuple(0.3 + 0.07 * i for i in range(s.d)))
    for n in (5, 20, 60):
        sv = np.linalg.svd(jacobian_cocycle(s, x, n).matrix, compute_uv=False)
        for k in range(1, s.d + 1):
            for p in (1, 3):
                bound = math.fsum(np.log(sv[:k])) / n
                assert ex.lambda_kpn(s, x, k, p, n).value <= bound + 1e-9


def test_cocycle_growth_examples(cat):
    w, V = np.linalg.eigh(np.array([[2.0, 1.0], [1.0, 1.0]]))
    stable, unstable = V[:, 0], V[:, 1]
    assert ex.cocycle_growth(cat, X, [unstable], 1, 1, 200).value == pytest.approx(LOG_GOLDEN, abs=1e-9)
    # rounding seeds an unstable component that grows like lambda^{2n}; n = 15 keeps it below 1e-9
    assert ex.cocycle_growth(cat, X, [stable], 1, 1, 15).value == pytest.approx(-LOG_GOLDEN, abs=1e-6)
    full = ex.cocycle_growth(cat, X, np.eye(2), 2, 1, 100).value
    assert full == pytest.approx(0.0 - LOG_GOLDEN, abs=1e-9)  # log |det| = 0 minus correction
    with pytest.raises(ValueError):
        ex.cocycle_growth(cat, X, [[1.0, 0.0], [2.0, 0.0]], 2, 1, 10)


def test_phi_series_examples(cat, identity):
    assert np.all(ex.phi_series(identity, X, 1, 10, 50).values == 0.0)
    phi = ex.phi_series(cat, X, 1, 20, 100)
    assert len(phi) == 100 and np.allclose(phi.values, LOG_GOLDEN, atol=1e-9)
    # sigma_2 = sigma_1 on cat x cat: the k = 1 ratio is <= 1 and log+ clips it
    cc = make_system("product:cat2,cat2")
    assert np.all(ex.phi_series(cc, X4, 1, 10, 50).values == 0.0)
    with pytest.raises(ValueError):
        ex.phi_series(cat, X, 2, 10, 50)


def test_kappa_examples():
    series = ex.PhiSeries(np.array([3.0, 1.0, 2.0]), q=1, k=1)
    assert ex.kappa_minus(series, 2 / 3).value == 1.5
    const = ex.PhiSeries(np.full(17, 0.7), q=1, k=1)
    for d in (0.05, 0.3, 1.0):
        assert ex.kappa_minus(const, d).value == pytest.approx(0.7, rel=1e-15)
    vals = np.array([0.1, 0.5, 0.2, 0.9])
    assert ex.kappa_minus(ex.PhiSeries(vals, 1, 1), 1.0).value == pytest.approx(vals.mean(), rel=1e-15)
    with pytest.raises(ValueError):
        ex.PhiSeries(np.array([-1.0]), 1, 1)
    with pytest.raises(ValueError):
        ex.admissible_size(10, 0.0)


series_values = st.lists(st.floats(0.0, 5.0, allow_nan=False), min_size=1, max_size=10)


@given(series_values, st.sampled_from([0.05, 0.1, 0.25, 0.5, 0.75, 1.0]))
def test_kappa_matches_bruteforce(values, delta):
    got = ex.kappa_minus(ex.PhiSeries(np.array(values), 1, 1), delta).value
    assert got == pytest.approx(brute_kappa(values, delta), rel=1e-12, abs=1e-15)


@given(series_values, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_kappa_nondecreasing_in_delta(values, d1, d2):
    lo, hi = sorted((d1, d2))
    ps = ex.PhiSeries(np.array(values), 1, 1)
    assert ex.kappa_minus(ps, lo).value <= ex.kappa_minus(ps, hi).value


def test_kappa_numeric_instance(cat):
    kap = ex.kappa_minus(ex.phi_series(cat, X, 1, 30, 2000), 0.1).value
    assert abs(kap - LOG_GOLDEN) <= 2e-2


def test_spectrum_examples(cat, identity):
    assert [e.value for e in ex.lyapunov_spectrum(cat, X, 500)] == pytest.approx([LOG_GOLDEN, -LOG_GOLDEN], abs=1e-8)
    assert [e.value for e in ex.lyapunov_spectrum(identity, X, 100)] == [0.0, 0.0]
    cc = [e.value for e in ex.lyapunov_spectrum(make_system("product:cat2,cat2"), X4, 500)]
    assert cc == pytest.approx([LOG_GOLDEN] * 2 + [-LOG_GOLDEN] * 2, abs=1e-6)
    with pytest.raises(ValueError):
        ex.lyapunov_spectrum(cat, X, 5)


def test_beta_examples(cat):
    b = ex.beta_estimate(cat, X, 1, 100, 20, 1000)
    assert b.value == pytest.approx(-LOG_GOLDEN, abs=1e-8)
    assert np.allclose(b.extra["windows"], -LOG_GOLDEN, atol=1e-8)
    with pytest.raises(ValueError):
        ex.beta_estimate(cat, X, 1, 2000, 20, 1000)


def test_beta_skew_trend_is_reported():
    s = make_system("skew:ns,cat2_path")
    b = ex.beta_estimate(s, TorusPoint((0.1, 0.3, 0.6)), 1, 200, 50, 2000)
    assert len(b.extra["windows"]) == (2000 - 200) // 50 + 1
    assert all(math.isfinite(v) for v in b.extra["windows"])


def test_kappa_sweep_rows(cat):
    rows = ex.kappa_sweep(cat, X, 1, deltas=(0.1, 0.2), qs=(10, 20), ns=(100, 200))
    assert len(rows) == 8
    assert all(abs(v - LOG_GOLDEN) < 0.1 for *_, v in rows)


def test_estimate_tags_validated():
    with pytest.raises(ValueError):
        ex.ExponentEstimate(1.0, 0, 1, "chi")
    with pytest.raises(ValueError):
        ex.ExponentEstimate(1.0, 5, 1, "bogus")


def test_long_horizon_does_not_overflow(cat):
    v = ex.sigma_k(cat, X, 1, 5000).value
    assert math.isfinite(v) and v == pytest.approx(LOG_GOLDEN, abs=1e-3)
