import numpy as np
import pytest
from pydantic import ValidationError

from app.exceptions import DimensionError, NonFiniteEntryError, RankDeficientError
from app.model.model import (
    EigenSpectrum,
    ExperimentGrid,
    IVDataset,
    NullDraw,
    RejectionRow,
    RejectionTable,
    SimConfig,
    validate_dataset,
)
from app.service.random_streams import substream
from app.service.simulation import gen_gaussian_iv


class TestIVDataset:
    def test_shapes_and_immutability(self, make_dataset):
        ds = make_dataset(n=120, k=5, m=2)
        assert (ds.n, ds.k, ds.m) == (120, 5, 2)
        with pytest.raises(ValueError):
            ds.y[0] = 1.0

    def test_vector_x_becomes_single_column(self, rng):
        ds = IVDataset(y=rng.normal(size=30), X=rng.normal(size=30), Z=rng.normal(size=(30, 3)))
        assert ds.X.shape == (30, 1)

    def test_generated_dataset_is_valid(self, make_dataset):
        assert validate_dataset(make_dataset(n=500, k=10, m=2)) is None

    def test_nan_in_y(self, make_dataset):
        ds = make_dataset()
        y = ds.y.copy()
        y[3] = np.nan
        with pytest.raises(NonFiniteEntryError, match="non-finite entry"):
            validate_dataset(IVDataset(y=y, X=ds.X, Z=ds.Z))

    def test_rank_deficient_instruments(self, make_dataset):
        ds = make_dataset(k=6)
        Z = ds.Z.copy()
        Z[:, 5] = Z[:, 0] - 2.0 * Z[:, 1]
        with pytest.raises(RankDeficientError, match="rank-deficient"):
            validate_dataset(IVDataset(y=ds.y, X=ds.X, Z=Z))

    def test_only_instruments_are_rank_checked(self, make_dataset):
        ds = make_dataset(k=6)
        X = np.column_stack([ds.X[:, 0], ds.X[:, 0]])
        assert validate_dataset(IVDataset(y=ds.y, X=X, Z=ds.Z)) is None

    def test_too_few_rows(self, rng):
        ds = IVDataset(y=rng.normal(size=8), X=rng.normal(size=(8, 2)), Z=rng.normal(size=(8, 10)))
        with pytest.raises(DimensionError, match="n ≤ k"):
            validate_dataset(ds)

    def test_more_endogenous_than_instruments(self, rng):
        ds = IVDataset(y=rng.normal(size=50), X=rng.normal(size=(50, 3)), Z=rng.normal(size=(50, 2)))
        with pytest.raises(DimensionError, match="k < m"):
            validate_dataset(ds)

    def test_row_count_mismatch(self, rng):
        ds = IVDataset(y=rng.normal(size=50), X=rng.normal(size=(49, 1)), Z=rng.normal(size=(50, 2)))
        with pytest.raises(DimensionError, match="row counts"):
            validate_dataset(ds)

    def test_generator_output_always_validates(self):
        draw = np.random.default_rng(7)
        for i in range(100):
            m = int(draw.integers(1, 4))
            k = int(draw.integers(m, 9))
            n = int(draw.integers(k + 5, 80))
            cfg = SimConfig(n=n, k=k, m=m, spectrum=tuple(draw.uniform(0.0, 100.0, size=m)), seed=i)
            validate_dataset(gen_gaussian_iv(cfg, substream(i, 3)))


class TestEigenSpectrum:
    def test_sorted_ascending(self):
        spectrum = EigenSpectrum(lambdas=(50.0, 5.0, 20.0), k=10, m=3)
        assert spectrum.lambdas == (5.0, 20.0, 50.0)
        assert spectrum.smallest == 5.0
        assert not spectrum.just_identified

    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(ValidationError):
            EigenSpectrum(lambdas=(-1.0, 3.0), k=4, m=2)

    def test_length_must_match_m(self):
        with pytest.raises(ValidationError):
            EigenSpectrum(lambdas=(1.0,), k=4, m=2)

    def test_k_at_least_m(self):
        with pytest.raises(ValidationError):
            EigenSpectrum(lambdas=(1.0, 2.0), k=1, m=2)

    def test_just_identified(self):
        assert EigenSpectrum(lambdas=(1.0, 2.0), k=2, m=2).just_identified


def test_null_draw_total():
    draw = NullDraw(q0=2.0, q=(0.5, 1.5))
    assert draw.total == pytest.approx(4.0)
    with pytest.raises(ValidationError):
        NullDraw(q0=1.0, q=(-0.1,))


class TestSimConfig:
    def test_defaults(self):
        cfg = SimConfig(n=100, k=5, m=3, spectrum=(1.0, 2.0, 3.0))
        assert cfg.cov_eps_v == (-0.5, 0.0, 0.0)
        assert cfg.beta0 == (0.0, 0.0, 0.0)
        np.testing.assert_allclose(np.diag(cfg.omega()), 1.0)
        assert cfg.omega()[0, 1] == -0.5

    def test_omega_v_dot_eps(self):
        cfg = SimConfig(n=100, k=5, m=2, spectrum=(1.0, 2.0))
        np.testing.assert_allclose(cfg.omega_v_dot_eps(), np.diag([0.75, 1.0]))

    def test_not_positive_definite(self):
        with pytest.raises(ValidationError):
            SimConfig(n=100, k=5, m=2, spectrum=(1.0, 2.0), cov_eps_v=(0.9, 0.9))

    def test_negative_spectrum(self):
        with pytest.raises(ValidationError):
            SimConfig(n=100, k=5, m=2, spectrum=(-1.0, 2.0))

    def test_dimension_order(self):
        with pytest.raises(ValidationError):
            SimConfig(n=5, k=5, m=2, spectrum=(1.0, 2.0))


class TestExperimentGrid:
    def test_minimum_reps(self):
        with pytest.raises(ValidationError):
            ExperimentGrid(lambda1_values=(1.0,), lambda2_values=(1.0,), reps=99)

    def test_negative_lambda(self):
        with pytest.raises(ValidationError):
            ExperimentGrid(lambda1_values=(-1.0,), lambda2_values=(1.0,), reps=100)

    def test_spectrum_repeats_lambda2(self):
        grid = ExperimentGrid(lambda1_values=(1.0,), lambda2_values=(9.0,), reps=100, m=3, k=5)
        assert grid.spectrum(1.0, 9.0) == (1.0, 9.0, 9.0)
        assert grid.sim_config(1.0, 9.0).spectrum == (1.0, 9.0, 9.0)


def test_rejection_table_columns():
    rows = [RejectionRow(lambda1=1.0, lambda2=2.0, beta1=0.5, rate_exact=0.3, rate_bound=0.2, stderr=0.01)]
    power = RejectionTable(kind="power", alpha=0.05, reps=100, rows=rows)
    assert list(power.records()[0]) == [
        "lambda1", "lambda2", "beta1", "rate_exact", "rate_bound", "difference", "stderr",
    ]
    assert power.max_power_difference() == pytest.approx(0.1)

    size = RejectionTable(kind="size", alpha=0.05, reps=100, rows=rows)
    assert list(size.records()[0]) == ["lambda1", "lambda2", "rate_exact", "rate_bound", "stderr"]
    assert size.max_size_distortion() == pytest.approx(0.25)
