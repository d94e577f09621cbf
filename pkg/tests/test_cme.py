import numpy as np
import pytest

from splitkci import cme
from splitkci import kernels as kern
from splitkci.errors import ConfigError, DegenerateError, FitError, InputError

GAUSS_GRID = [kern.gaussian(s) for s in cme.SIGMA2_GRID]


def refit_loo(c_kernel, lam, C, A, a_kernel):
    """Leave each point out, refit with the same absolute ridge lam*m, sum held-out residuals."""
    m = C.shape[0]
    K_C = kern.gram(c_kernel, C)
    K_A = kern.gram(a_kernel, A)
    total = 0.0
    for i in range(m):
        keep = np.arange(m) != i
        W = np.linalg.inv(K_C[np.ix_(keep, keep)] + lam * m * np.eye(m - 1))
        beta = W @ K_C[keep, i]
        total += K_A[i, i] - 2 * beta @ K_A[keep, i] + beta @ K_A[np.ix_(keep, keep)] @ beta
    return total


@pytest.mark.parametrize("m", [5, 10, 20])
@pytest.mark.parametrize("seed", range(20))
def test_loo_shortcut_matches_refit(m, seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(m, 2))
    A = np.sin(C[:, :1]) + 0.3 * rng.normal(size=(m, 1))
    ck, ak = kern.gaussian(0.7), kern.gaussian(1.0)
    lam = 10.0 ** rng.uniform(-4, -1)
    fast = cme.loo_score(ck, lam, C, A, ak)
    assert fast == pytest.approx(refit_loo(ck, lam, C, A, ak), rel=1e-8)


def test_loo_two_points_constant_kernel_by_hand():
    A = np.array([[0.0], [1.0]])
    C = np.array([[0.3], [-2.0]])
    lam = 0.25
    r = lam * 2
    ak = kern.gaussian(1.0)
    k01 = np.exp(-1.0)
    # leaving one point out predicts phi(a_other) / (1 + r)
    one = 1.0 - 2.0 * k01 / (1 + r) + 1.0 / (1 + r) ** 2
    assert cme.loo_score(kern.constant(), lam, C, A, ak) == pytest.approx(2 * one, rel=1e-12)


def test_loo_infinite_ridge_limit():
    rng = np.random.default_rng(0)
    C, A = rng.normal(size=(10, 1)), rng.normal(size=(10, 2))
    K_C = kern.gram(kern.gaussian(), C)
    lam = 1e12 * np.linalg.norm(K_C, 2)
    score = cme.loo_score(kern.gaussian(), lam, C, A, kern.linear())
    assert score == pytest.approx(np.sum(A**2), rel=1e-6)


def test_loo_degenerate_when_ridge_too_small():
    C = np.linspace(-1, 1, 6)[:, None]
    with pytest.raises(DegenerateError):
        cme.loo_score(kern.delta(), 1e-300, C, C, kern.gaussian())


def test_lambda_grid_anchor():
    K = np.diag([4.0, 1.0])
    grid = cme.lambda_grid(K)
    assert len(grid) == 7
    assert grid[0] == pytest.approx(40 * np.finfo(float).eps)
    assert grid[-1] == pytest.approx(4e7 * np.finfo(float).eps)


def test_singleton_grid_skips_loo():
    rng = np.random.default_rng(1)
    C, A = rng.normal(size=(8, 1)), rng.normal(size=(8, 1))
    model = cme.fit_krr(C, A, kern.gaussian(), [kern.gaussian(0.5)], [0.01])
    assert model.c_kernel == kern.gaussian(0.5) and model.lam == 0.01 and model.loo is None


def test_selection_matches_exhaustive_sweep():
    rng = np.random.default_rng(2)
    C = rng.normal(size=(30, 1))
    A = np.tanh(2 * C) + 0.2 * rng.normal(size=(30, 1))
    lams = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]
    model = cme.fit_krr(C, A, kern.gaussian(), GAUSS_GRID, lams)
    sweep = {(s, l): cme.loo_score(s, l, C, A, kern.gaussian()) for s in GAUSS_GRID for l in lams}
    best = min(sweep, key=sweep.get)
    assert (model.c_kernel, model.lam) == best
    assert model.loo == pytest.approx(sweep[best], rel=1e-10)


def test_ties_prefer_larger_lambda():
    # the constant target makes every candidate score zero
    C = np.linspace(0, 1, 6)[:, None]
    A = np.zeros((6, 1))
    model = cme.fit_krr(C, A, kern.linear(), [kern.gaussian(1.0), kern.gaussian(2.0)], [1e-3, 1e-1, 1e-2])
    assert model.lam == 1e-1 and model.c_kernel == kern.gaussian(1.0)


def test_all_candidates_failing_is_a_fit_error():
    C = np.linspace(-1, 1, 5)[:, None]
    with pytest.raises(FitError) as info:
        cme.fit_krr(C, C, kern.gaussian(), [kern.delta()], [1e-300, 1e-299])
    assert len(info.value.failures) == 2


def test_fit_input_checks():
    with pytest.raises(InputError):
        cme.fit_krr(np.zeros((1, 1)), np.zeros((1, 1)), kern.gaussian(), GAUSS_GRID)
    with pytest.raises(InputError):
        cme.fit_krr(np.zeros((3, 1)), np.zeros((4, 1)), kern.gaussian(), GAUSS_GRID)
    with pytest.raises(ConfigError):
        cme.fit_krr(np.zeros((3, 1)), np.zeros((3, 1)), kern.gaussian(), GAUSS_GRID, [0.0])
    with pytest.raises(ConfigError):
        cme.fit_krr(np.zeros((3, 1)), np.zeros((3, 1)), kern.gaussian(), [])


def test_model_is_immutable():
    rng = np.random.default_rng(3)
    model = cme.fit_krr(rng.normal(size=(6, 1)), rng.normal(size=(6, 1)), kern.gaussian(), GAUSS_GRID)
    with pytest.raises(ValueError):
        model.C_train[0, 0] = 1.0
    with pytest.raises(AttributeError):
        model.lam = 2.0


def test_fit_recovers_identity_map():
    rng = np.random.default_rng(4)
    C = rng.normal(size=(60, 1))
    ak = kern.gaussian(1.0)
    model = cme.fit_krr(C, C, ak, GAUSS_GRID)
    resid = np.diag(cme.centered_gram(model, model, C, C))
    plain = np.diag(kern.gram(ak, C))
    assert resid.sum() < 0.1 * plain.sum()


def _scalar_krr(C, a, lam, spec, Cq):
    m = C.shape[0]
    K = kern.gram(spec, C)
    return kern.gram(spec, Cq, C) @ np.linalg.solve(K + lam * m * np.eye(m), a)


def test_cross_kernel_linear_target_oracle():
    rng = np.random.default_rng(5)
    C, a = rng.normal(size=(15, 2)), rng.normal(size=15)
    spec = kern.gaussian(0.5)
    model = cme.fit_krr(C, a, kern.linear(), [spec], [0.01])
    Cq, a_other = rng.normal(size=(7, 2)), rng.normal(size=(4, 1))
    expected = np.outer(_scalar_krr(C, a, 0.01, spec, Cq), a_other[:, 0])
    np.testing.assert_allclose(cme.predict_cross_kernel(model, Cq, a_other), expected, rtol=0, atol=1e-10)


def test_cross_kernel_two_point_by_hand():
    C = np.array([[0.0], [1.0]])
    A = np.array([[1.0], [-1.0]])
    lam = 0.5
    model = cme.fit_krr(C, A, kern.linear(), [kern.linear()], [lam])
    # K_C = [[0, 0], [0, 1]], ridge 1: W = diag(1, 1/2); query c=2 -> K_cC = [0, 2]
    out = cme.predict_cross_kernel(model, np.array([[2.0]]), np.array([[3.0]]))
    # prediction = [0, 2] W A = 2 * 0.5 * (-1) = -1; times a_other = 3
    assert out[0, 0] == pytest.approx(-3.0, abs=1e-14)


def test_cross_kernel_vanishes_for_huge_ridge():
    rng = np.random.default_rng(6)
    C, A = rng.normal(size=(10, 1)), rng.normal(size=(10, 1))
    model = cme.fit_krr(C, A, kern.gaussian(), [kern.gaussian()], [1e12])
    assert np.abs(cme.predict_cross_kernel(model, C, A)).max() < 1e-11


def test_centered_gram_linear_residual_products():
    rng = np.random.default_rng(7)
    C = rng.normal(size=(40, 1))
    a = (C[:, 0] ** 2 + 0.1 * rng.normal(size=40))
    spec = kern.gaussian(0.5)
    m1 = cme.fit_krr(C[:20], a[:20], kern.linear(), [spec], [1e-3])
    m2 = cme.fit_krr(C[20:], a[20:], kern.linear(), [spec], [1e-2])
    Ct, at = rng.normal(size=(9, 1)), rng.normal(size=9)
    r1 = at - _scalar_krr(C[:20], a[:20], 1e-3, spec, Ct)
    r2 = at - _scalar_krr(C[20:], a[20:], 1e-2, spec, Ct)
    expected = 0.5 * (np.outer(r1, r2) + np.outer(r2, r1))
    np.testing.assert_allclose(cme.centered_gram(m1, m2, at, Ct), expected, rtol=0, atol=1e-10)
    # swapping the models gives the same symmetrized matrix
    np.testing.assert_allclose(cme.centered_gram(m2, m1, at, Ct), expected, rtol=0, atol=1e-10)


def test_centered_gram_zero_models_is_plain_gram():
    rng = np.random.default_rng(8)
    A, C = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
    ak = kern.gaussian(1.0)
    assert np.array_equal(cme.centered_gram(None, None, A, C, a_kernel=ak), kern.gram(ak, A))
    with pytest.raises(ConfigError):
        cme.centered_gram(None, None, A, C)


def test_centered_gram_identical_models_symmetric_and_kernel_mismatch():
    rng = np.random.default_rng(9)
    C, A = rng.normal(size=(12, 1)), rng.normal(size=(12, 1))
    m = cme.fit_krr(C, A, kern.gaussian(), GAUSS_GRID)
    other = cme.fit_krr(C, A, kern.linear(), GAUSS_GRID)
    K = cme.centered_gram(m, m, A[:5], C[:5])
    assert np.array_equal(K, K.T)
    with pytest.raises(ConfigError):
        cme.centered_gram(m, other, A[:5], C[:5])


def test_in_sample_residuals_grow_with_ridge():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        C = rng.normal(size=(25, 1))
        A = np.cos(2 * C) + 0.2 * rng.normal(size=(25, 1))
        grid = cme.lambda_grid(kern.gram(kern.gaussian(0.5), C))
        totals = []
        for lam in grid:
            model = cme.fit_krr(C, A, kern.gaussian(), [kern.gaussian(0.5)], [lam])
            totals.append(np.trace(cme.centered_gram(model, model, A, C)))
        assert all(b >= a - 1e-9 * abs(a) for a, b in zip(totals, totals[1:]))


def test_predictions_finite_and_bounded():
    rng = np.random.default_rng(10)
    C, A = rng.normal(size=(30, 2)), rng.normal(size=(30, 1))
    model = cme.fit_krr(C, A, kern.gaussian(), GAUSS_GRID)
    Cq = rng.normal(scale=3, size=(20, 2))
    Z = model.dual(Cq)
    bound = np.abs(Z).sum(axis=0)  # k_a(a, a) = 1 for the gaussian target
    norms = np.sqrt(np.maximum(np.einsum("ij,ik,kj->j", Z, kern.gram(model.a_kernel, A), Z), 0))
    assert np.all(np.isfinite(norms)) and np.all(norms <= bound + 1e-12)


def test_cholesky_jitter_retry(monkeypatch):
    calls = []
    real = cme.scipy.linalg.cho_factor

    def flaky(M, **kw):
        calls.append(M[0, 0])
        if len(calls) == 1:
            raise np.linalg.LinAlgError("not positive definite")
        return real(M, **kw)

    monkeypatch.setattr(cme.scipy.linalg, "cho_factor", flaky)
    C = np.linspace(0, 1, 4)[:, None]
    cme.fit_krr(C, C, kern.gaussian(), [kern.gaussian()], [0.1])
    assert len(calls) == 2
    assert calls[1] - calls[0] == pytest.approx(1e-10, rel=1e-6)
