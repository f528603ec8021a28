import numpy as np
import pytest
import scipy.linalg
from scipy import optimize

from app.exceptions import DegenerateResidualError, DimensionError, InputError, InsufficientDrawsError
from app.model.model import IVDataset
from app.service.clr_statistic import (
    anderson_rubin,
    conditioning_eigenvalues,
    liml_estimate,
    lr_statistic,
    run_clr_test,
    tilde_x,
)
from app.service.projection import projection_basis


def brute_force(ds, beta0, projectors):
    """LR, AR and conditioning eigenvalues from dense n x n projectors."""
    P, M = projectors(ds.Z)
    n, k = ds.n, ds.k
    r = ds.y - ds.X @ beta0
    ar = (n - k) * (r @ P @ r) / (r @ M @ r)
    W = np.column_stack((ds.y, ds.X))
    kappa = scipy.linalg.eigh(W.T @ P @ W, W.T @ M @ W, eigvals_only=True)[0]
    Xt = ds.X - np.outer(r, (r @ M @ ds.X) / (r @ M @ r))
    matrix = (n - k) * np.linalg.solve(Xt.T @ M @ Xt, Xt.T @ P @ Xt)
    spectrum = np.sort(np.linalg.eigvals(matrix).real)
    return ar - (n - k) * kappa, ar, Xt, spectrum


class TestTildeX:
    def test_matches_dense_projector(self, make_dataset, explicit_projectors):
        ds = make_dataset(n=200, k=6, m=2)
        beta0 = np.array([0.3, -0.2])
        _, _, expected, _ = brute_force(ds, beta0, explicit_projectors)
        np.testing.assert_allclose(tilde_x(ds, beta0), expected, rtol=1e-10, atol=1e-10)

    def test_orthogonal_to_residual(self, make_dataset, explicit_projectors):
        ds = make_dataset(n=300, k=8, m=3, spectrum=(3.0, 30.0, 300.0))
        beta0 = np.array([1.0, 0.0, -1.0])
        _, M = explicit_projectors(ds.Z)
        r = ds.y - ds.X @ beta0
        Xt = tilde_x(ds, beta0)
        scale = np.linalg.norm(M @ r) * np.linalg.norm(Xt, axis=0)
        assert np.all(np.abs(r @ M @ Xt) <= 1e-8 * scale)

    def test_in_sample_exogenous_x_is_unchanged(self, rng, explicit_projectors):
        n, k = 100, 4
        Z = rng.normal(size=(n, k))
        X = rng.normal(size=(n, 2))
        P, M = explicit_projectors(Z)
        e = M @ rng.normal(size=n)
        MX = M @ X
        e = e - MX @ np.linalg.lstsq(MX, e, rcond=None)[0]
        y = X @ np.array([0.5, 1.0]) + Z @ rng.normal(size=k) + e
        ds = IVDataset(y=y, X=X, Z=Z)
        np.testing.assert_allclose(tilde_x(ds, [0.5, 1.0]), X, atol=1e-10)

    def test_outcome_equal_to_first_column(self, make_dataset, explicit_projectors):
        ds = make_dataset(n=150, k=5, m=2)
        ds = IVDataset(y=ds.X[:, 0], X=ds.X, Z=ds.Z)
        Xt = tilde_x(ds, [0.0, 0.0])
        _, M = explicit_projectors(ds.Z)
        np.testing.assert_allclose(Xt[:, 0], 0.0, atol=1e-10)
        assert np.all(np.abs(ds.y @ M @ Xt) <= 1e-8 * np.linalg.norm(M @ ds.y) * (1.0 + np.linalg.norm(Xt)))

    def test_degenerate_residual(self, rng):
        n, k = 60, 3
        Z = rng.normal(size=(n, k))
        X = rng.normal(size=(n, 1))
        y = X[:, 0] * 2.0 + Z @ np.array([1.0, -1.0, 0.5])
        ds = IVDataset(y=y, X=X, Z=Z)
        with pytest.raises(DegenerateResidualError):
            tilde_x(ds, [2.0])

    def test_beta_length_checked(self, make_dataset):
        with pytest.raises(DimensionError):
            tilde_x(make_dataset(m=2), [0.0])


class TestStatistic:
    def test_matches_dense_projector_oracle(self, make_dataset, explicit_projectors):
        for seed in range(50):
            ds = make_dataset(n=60 + 4 * seed, k=4 + seed % 4, m=1 + seed % 3,
                              spectrum=None, seed=seed)
            beta0 = np.linspace(-0.5, 0.5, ds.m)
            lr, ar, _, spectrum = brute_force(ds, beta0, explicit_projectors)
            assert lr_statistic(ds, beta0) == pytest.approx(max(lr, 0.0), rel=1e-8, abs=1e-8)
            assert anderson_rubin(ds, beta0) == pytest.approx(ar, rel=1e-10)
            np.testing.assert_allclose(conditioning_eigenvalues(ds, beta0).array, spectrum,
                                       rtol=1e-8, atol=1e-8 * max(1.0, spectrum.max()))

    def test_large_null_dataset(self, make_dataset, explicit_projectors):
        ds = make_dataset(n=1000, k=10, m=2, spectrum=(5.0, 100.0), seed=3)
        lr, _, _, spectrum = brute_force(ds, np.zeros(2), explicit_projectors)
        assert lr_statistic(ds, [0.0, 0.0]) == pytest.approx(lr, rel=1e-8, abs=1e-8)
        np.testing.assert_allclose(conditioning_eigenvalues(ds, [0.0, 0.0]).array, spectrum, rtol=1e-8)

    def test_zero_at_liml_estimate(self, make_dataset):
        ds = make_dataset(n=400, k=8, m=2, spectrum=(30.0, 80.0), beta0=(1.0, -1.0))
        estimate = liml_estimate(ds)
        assert lr_statistic(ds, estimate) <= 1e-8 * max(1.0, anderson_rubin(ds, estimate))

    def test_liml_minimizes_anderson_rubin(self, make_dataset):
        ds = make_dataset(n=400, k=8, m=2, spectrum=(30.0, 80.0))
        estimate = liml_estimate(ds)
        at_minimum = anderson_rubin(ds, estimate)
        for shift in ([0.05, 0.0], [0.0, -0.05], [0.02, 0.02]):
            assert anderson_rubin(ds, estimate + np.array(shift)) > at_minimum

    def test_single_regressor_grid_search(self, make_dataset):
        ds = make_dataset(n=500, k=5, m=1, spectrum=(200.0,), beta0=(0.5,), seed=4)
        basis = projection_basis(ds)
        grid = np.linspace(-10.0, 10.0, 20_001)
        values = np.array([anderson_rubin(ds, [b], basis) for b in grid])
        i = int(np.argmin(values))
        refined = optimize.minimize_scalar(
            lambda b: anderson_rubin(ds, [b], basis),
            bounds=(grid[i - 1], grid[i + 1]),
            method="bounded",
            options={"xatol": 1e-12},
        )
        beta0 = [1.5]
        expected = anderson_rubin(ds, beta0) - min(refined.fun, values[i])
        assert lr_statistic(ds, beta0) == pytest.approx(expected, abs=1e-6)

    def test_nonnegative(self, make_dataset):
        ds = make_dataset(n=200, k=6, m=2)
        for beta in np.linspace(-3.0, 3.0, 13):
            assert lr_statistic(ds, [beta, -beta]) >= 0.0


class TestConditioningEigenvalues:
    def test_single_regressor_closed_form(self, make_dataset, explicit_projectors):
        ds = make_dataset(n=250, k=7, m=1, spectrum=(15.0,))
        P, M = explicit_projectors(ds.Z)
        xt = tilde_x(ds, [0.2])[:, 0]
        expected = (ds.n - ds.k) * (xt @ P @ xt) / (xt @ M @ xt)
        spectrum = conditioning_eigenvalues(ds, [0.2])
        assert spectrum.m == 1
        assert spectrum.smallest == pytest.approx(expected, rel=1e-10)

    def test_zero_when_everything_is_orthogonal_to_instruments(self, rng, explicit_projectors):
        n, k = 80, 5
        Z = rng.normal(size=(n, k))
        _, M = explicit_projectors(Z)
        ds = IVDataset(y=M @ rng.normal(size=n), X=M @ rng.normal(size=(n, 2)), Z=Z)
        spectrum = conditioning_eigenvalues(ds, [0.0, 0.0])
        np.testing.assert_allclose(spectrum.array, 0.0, atol=1e-8)
        assert all(v >= 0.0 for v in spectrum.lambdas)

    def test_sorted_and_sized(self, make_dataset):
        ds = make_dataset(n=300, k=9, m=3, spectrum=(100.0, 1.0, 10.0))
        spectrum = conditioning_eigenvalues(ds, [0.0, 0.0, 0.0])
        assert spectrum.k == 9 and spectrum.m == 3
        assert list(spectrum.lambdas) == sorted(spectrum.lambdas)


class TestInvariance:
    def test_instrument_rotation(self, make_dataset, rng):
        ds = make_dataset(n=200, k=6, m=2, spectrum=(10.0, 60.0))
        beta0 = np.array([0.1, -0.3])
        lr = lr_statistic(ds, beta0)
        spectrum = conditioning_eigenvalues(ds, beta0).array
        for _ in range(50):
            rotation, _ = np.linalg.qr(rng.normal(size=(6, 6)))
            A = rotation * rng.uniform(0.5, 2.0, size=6)
            rotated = IVDataset(y=ds.y, X=ds.X, Z=ds.Z @ A)
            assert lr_statistic(rotated, beta0) == pytest.approx(lr, rel=1e-8)
            np.testing.assert_allclose(conditioning_eigenvalues(rotated, beta0).array, spectrum, rtol=1e-8)

    def test_endogenous_basis_change(self, make_dataset):
        ds = make_dataset(n=200, k=6, m=2, spectrum=(10.0, 60.0))
        beta0 = np.array([0.1, -0.3])
        B = np.array([[2.0, 0.5], [-1.0, 1.5]])
        changed = IVDataset(y=ds.y, X=ds.X @ B, Z=ds.Z)
        changed_beta = np.linalg.solve(B, beta0)
        assert lr_statistic(changed, changed_beta) == pytest.approx(lr_statistic(ds, beta0), rel=1e-8)
        np.testing.assert_allclose(conditioning_eigenvalues(changed, changed_beta).array,
                                   conditioning_eigenvalues(ds, beta0).array, rtol=1e-8)


class TestRunClrTest:
    def test_result_fields(self, make_dataset):
        ds = make_dataset(n=300, k=8, m=2, spectrum=(5.0, 50.0))
        result = run_clr_test(ds, [0.0, 0.0], alpha=0.05, draws=5_000, seed=1)
        assert 0.0 < result.pvalue_exact <= 1.0
        assert result.pvalue_exact <= result.pvalue_bound
        assert result.critical_value_exact <= result.critical_value_bound + 1e-9
        assert result.reject_exact == (result.pvalue_exact < 0.05)
        assert result.lr == pytest.approx(lr_statistic(ds, [0.0, 0.0]))
        assert result.ar >= result.lr
        assert 0.0 <= result.pvalue_ar <= 1.0
        assert result.summary()["spectrum"] == list(result.spectrum.lambdas)

    def test_deterministic(self, make_dataset):
        ds = make_dataset()
        first = run_clr_test(ds, [0.1, 0.1], draws=2_000, seed=9)
        second = run_clr_test(ds, [0.1, 0.1], draws=2_000, seed=9, threads=3)
        assert first == second

    def test_just_identified(self, make_dataset):
        ds = make_dataset(n=200, k=2, m=2, spectrum=(50.0, 50.0))
        result = run_clr_test(ds, [0.0, 0.0], draws=2_000)
        assert result.spectrum.just_identified
        assert result.pvalue_exact == result.pvalue_bound

    def test_too_few_draws(self, make_dataset):
        with pytest.raises(InsufficientDrawsError):
            run_clr_test(make_dataset(), [0.0, 0.0], draws=500)

    def test_zero_draws_are_not_replaced_by_the_default(self, make_dataset):
        with pytest.raises(InsufficientDrawsError):
            run_clr_test(make_dataset(), [0.0, 0.0], draws=0)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0])
    def test_level_outside_unit_interval(self, make_dataset, alpha):
        with pytest.raises(InputError, match="alpha"):
            run_clr_test(make_dataset(), [0.0, 0.0], alpha=alpha, draws=2_000)
