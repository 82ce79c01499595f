"""Quadratic-functional estimators: cross-sample covariance, adaptive
and iid thresholding, and the A_p / B_n plug-ins."""

import math
import warnings

import numpy as np
import pytest

from matvartest.covmodel import (
    child_seed,
    gen_autocorr,
    gen_banded,
    gen_identity,
    sample_matnorm,
)
from matvartest.errors import DataError, DegenerateVariableError, ParameterError
from matvartest.quadfunc import (
    col_sample_corr,
    estimate_Ap,
    estimate_Bn,
    iid_threshold_cov,
    row_sample_cov,
    threshold_cov,
    true_Ap,
    true_Bn,
)

import oracles


def _rand(p, n, seed):
    return np.random.default_rng(seed).normal(size=(p, n))


def test_row_sample_cov_hand_case():
    rc = row_sample_cov(np.array([[1.0, 2.0], [3.0, 4.0]]))
    want = np.array([[0.25, -0.25], [-0.25, 0.25]])
    np.testing.assert_array_equal(rc.psi, want)
    assert rc.mean_var == pytest.approx(0.5, abs=1e-15)


def test_row_sample_cov_constant_matrix():
    rc = row_sample_cov(np.full((3, 4), 7.0))
    np.testing.assert_array_equal(rc.psi, np.zeros((4, 4)))
    assert rc.mean_var == 0.0


def test_row_sample_cov_translation_invariance():
    # integer data with row sums divisible by n keeps centering exact
    x = np.array([[1.0, 4.0, 2.0, 5.0], [0.0, 3.0, 9.0, 4.0], [5.0, 1.0, 2.0, 8.0]])
    shifted = x + np.array([[16.0], [-8.0], [32.0]])
    a, b = row_sample_cov(x), row_sample_cov(shifted)
    np.testing.assert_array_equal(a.psi, b.psi)
    assert a.mean_var == b.mean_var


def test_row_sample_cov_psd():
    for seed in range(5):
        psi = row_sample_cov(_rand(4, 6, seed)).psi
        w = np.linalg.eigvalsh(psi)
        assert w[0] >= -1e-10 * np.trace(psi)


def test_col_sample_corr_hand_case():
    var, corr = col_sample_corr(np.array([[1.0, 2.0, 3.0], [3.0, 5.0, 4.0]]))
    np.testing.assert_allclose(var, [1.0, 1.0], atol=1e-15)
    assert corr[0, 1] == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_array_equal(np.diag(corr), [1.0, 1.0])


def test_col_sample_corr_identical_rows():
    x = np.vstack([np.array([1.0, 5.0, 2.0, 4.0])] * 2)
    _, corr = col_sample_corr(x)
    assert corr[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_col_sample_corr_bounded():
    _, corr = col_sample_corr(_rand(5, 8, 2))
    assert np.max(np.abs(corr)) <= 1.0 + 1e-12


def test_col_sample_corr_degenerate_row():
    x = _rand(4, 5, 3)
    x[2] = 1.5
    with pytest.raises(DegenerateVariableError) as exc:
        col_sample_corr(x)
    assert exc.value.index == 2


def test_brute_force_equivalence_small_dims():
    """Every estimator agrees with its double-loop oracle to 1e-12 on
    all shapes with p, n <= 5."""
    rng = np.random.default_rng(10)
    for p in (2, 3, 5):
        for n in (2, 4, 5):
            x = rng.normal(size=(p, n)) + rng.uniform(-1, 1, size=(p, 1))
            rc = row_sample_cov(x)
            np.testing.assert_allclose(rc.psi, oracles.brute_row_psi(x), atol=1e-12)
            assert rc.mean_var == pytest.approx(oracles.brute_mean_var(x), abs=1e-12)
            assert estimate_Bn(x) == pytest.approx(oracles.brute_bn(x), abs=1e-12)
            if n >= 3:
                var, corr = col_sample_corr(x)
                np.testing.assert_allclose(
                    corr, oracles.brute_col_corr(x), atol=1e-12
                )
                for delta in (1.42, 0.6):
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        thr, est = threshold_cov(x, delta=delta)
                    np.testing.assert_allclose(
                        thr, oracles.brute_threshold(x, delta), atol=1e-12
                    )
                    assert est.ap_hat == pytest.approx(
                        oracles.brute_ap(x, delta), abs=1e-12
                    )
                sig1, ap1 = iid_threshold_cov(x, 0.7)
                o_sig, o_ap = oracles.brute_iid(x, 0.7)
                np.testing.assert_allclose(sig1, o_sig, atol=1e-12)
                assert ap1 == pytest.approx(o_ap, abs=1e-12)


def test_true_values():
    assert true_Ap(gen_identity(7)) == 1.0
    assert true_Bn(gen_identity(9)) == 1.0
    assert true_Ap(gen_autocorr(2, 0.5)) == pytest.approx(1.25, abs=1e-15)
    band = gen_banded(6)
    assert true_Ap(band) == pytest.approx(oracles.brute_true_ap(band.values), rel=1e-14)
    assert true_Bn(band) == pytest.approx(oracles.brute_true_bn(band.values), rel=1e-14)
    with pytest.raises(ParameterError):
        true_Ap(np.array([[-1.0, 0.0], [0.0, -1.0]]))


def test_true_values_permutation_invariant():
    rng = np.random.default_rng(4)
    g = rng.normal(size=(6, 6))
    s = g @ g.T + 6 * np.eye(6)
    perm = rng.permutation(6)
    sp = s[np.ix_(perm, perm)]
    assert true_Ap(sp) == pytest.approx(true_Ap(s), rel=1e-12)
    assert true_Bn(sp) == pytest.approx(true_Bn(s), rel=1e-12)


def test_estimate_bn_toy_and_degenerate():
    x = np.array([[1.0, 2.0], [3.0, 5.0]])
    assert estimate_Bn(x) == pytest.approx(oracles.brute_bn(x), abs=1e-14)
    with pytest.raises(DataError):
        estimate_Bn(np.full((3, 4), 2.0))


def test_estimate_bn_nonnegative():
    # rank(psi_hat) <= p keeps the trace correction from overshooting,
    # so the estimate stays nonnegative even at p < n
    for p, n, seed in ((2, 50, 8), (3, 12, 9), (10, 4, 10)):
        assert estimate_Bn(_rand(p, n, seed)) >= 0.0


def test_scale_equivariance_exact():
    """Scaling by a power of two shifts psi-hat and sigma-hat by c^2
    bit for bit and leaves every scale-free quantity unchanged."""
    x = _rand(5, 7, 11)
    c = 8.0
    a, b = row_sample_cov(x), row_sample_cov(c * x)
    np.testing.assert_array_equal(b.psi, c * c * a.psi)
    assert b.mean_var == c * c * a.mean_var
    _, corr_a = col_sample_corr(x)
    _, corr_b = col_sample_corr(c * x)
    np.testing.assert_array_equal(corr_a, corr_b)
    assert estimate_Bn(c * x) == estimate_Bn(x)
    thr_a, est_a = threshold_cov(x)
    thr_b, est_b = threshold_cov(c * x)
    assert est_b.ap_hat == est_a.ap_hat
    assert est_b.kept_offdiag == est_a.kept_offdiag
    np.testing.assert_array_equal(thr_b != 0.0, thr_a != 0.0)


def test_threshold_contraction_and_diagonal():
    x = _rand(6, 9, 12)
    xc = x - x.mean(axis=1, keepdims=True)
    sig = (xc @ xc.T) / (x.shape[1] - 1)
    thr, _ = threshold_cov(x)
    # kept entries are copies, dropped entries are zero: the map is an
    # exact entrywise contraction and the diagonal survives untouched
    assert np.all(np.abs(thr) <= np.abs(sig))
    np.testing.assert_array_equal(np.diag(thr), np.diag(sig))
    kept = thr != 0.0
    np.testing.assert_array_equal(thr[kept], sig[kept])


def test_threshold_edge_deltas():
    x = _rand(5, 8, 13)
    thr_inf, est_inf = threshold_cov(x, delta=1e9)
    assert est_inf.kept_offdiag == 0
    assert np.all(thr_inf[~np.eye(5, dtype=bool)] == 0.0)
    with pytest.warns(UserWarning):
        thr0, est0 = threshold_cov(x, delta=0.0)
    var, corr = col_sample_corr(x)
    np.testing.assert_allclose(
        thr0, corr * np.sqrt(np.outer(var, var)), atol=1e-14
    )
    assert est0.kept_offdiag == 5 * 4 // 2
    with pytest.raises(ParameterError):
        threshold_cov(x, delta=-0.1)


def test_iid_threshold_edge_lambdas():
    x = _rand(5, 8, 14)
    var, _ = col_sample_corr(x)
    sig_inf, _ = iid_threshold_cov(x, 1e9)
    np.testing.assert_array_equal(sig_inf, np.diag(var))
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    sig_full = (xc @ xc.T) / (n - 1)
    sig0, _ = iid_threshold_cov(x, 0.0)
    np.testing.assert_array_equal(sig0, sig_full)
    with pytest.raises(ParameterError):
        iid_threshold_cov(x, -1.0)


def test_ap_hat_at_least_one():
    for seed in range(6):
        est = estimate_Ap(_rand(4 + seed, 6, seed))
        assert est.ap_hat >= 1.0 - 1e-12
        assert est.bn_hat >= 0.0
        assert est.sigma_fro2_hat >= 0.0


def test_delta_warning_boundary():
    x = _rand(4, 6, 15)
    with pytest.warns(UserWarning):
        threshold_cov(x, delta=1.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        threshold_cov(x, delta=1.42)  # above sqrt(2), silent


def test_quad_estimates_serialization():
    d = estimate_Ap(_rand(4, 6, 16)).to_dict()
    assert set(d) == {
        "bn_hat",
        "sigma_fro2_hat",
        "ap_hat",
        "delta",
        "threshold_level",
        "kept_offdiag",
    }


def test_input_validation():
    with pytest.raises(DataError):
        row_sample_cov(np.ones((1, 5)))
    with pytest.raises(DataError):
        row_sample_cov(np.ones((3, 1)))
    with pytest.raises(DataError):
        col_sample_corr(np.array([[np.inf, 1.0, 2.0], [0.0, 1.0, 2.0]]))


def test_bn_monte_carlo_identity():
    """Under independent samples B_n = 1; the estimator's mean over 200
    replications at n=100, p=1000 must land within 0.1 of it."""
    sig = gen_identity(1000)
    psi = gen_identity(100)
    vals = [
        estimate_Bn(sample_matnorm(0.0, sig, psi, child_seed(31, r)).values)
        for r in range(200)
    ]
    assert abs(np.mean(vals) - 1.0) <= 0.1


def test_bn_monte_carlo_autocorr():
    psi = gen_autocorr(100, 0.5)
    target = true_Bn(psi)
    sig = gen_identity(2000)
    vals = [
        estimate_Bn(sample_matnorm(0.0, sig, psi, child_seed(32, r)).values)
        for r in range(50)
    ]
    assert abs(np.mean(vals) - target) <= 0.15


def test_threshold_ratio_consistency_banded():
    """||Sigma_thr||_F^2 tracks the truth within 20% in at least 95 of
    100 replications at n=200, p=500."""
    sig = gen_banded(500)
    psi = gen_identity(200)
    fro2 = sig.fro2()
    good = 0
    for r in range(100):
        x = sample_matnorm(0.0, sig, psi, child_seed(33, r))
        _, est = threshold_cov(x)
        good += 0.8 <= est.sigma_fro2_hat / fro2 <= 1.2
    assert good >= 95


def test_ap_monte_carlo_identity():
    sig = gen_identity(1000)
    psi = gen_identity(200)
    vals = [
        estimate_Ap(sample_matnorm(0.0, sig, psi, child_seed(34, r)).values).ap_hat
        for r in range(100)
    ]
    assert abs(np.mean(vals) - 1.0) <= 0.1


def test_iid_threshold_overestimates_with_correlated_samples():
    """Correlated samples inflate the iid-calibrated estimate well above
    the adaptive one (direction check at reduced scale)."""
    psi = gen_autocorr(80, 0.8)
    sig = gen_identity(1200)
    ada, iid = [], []
    for r in range(10):
        x = sample_matnorm(0.0, sig, psi, child_seed(35, r))
        ada.append(estimate_Ap(x).ap_hat)
        iid.append(iid_threshold_cov(x, 2.0)[1])
    assert np.median(iid) > np.median(ada)
