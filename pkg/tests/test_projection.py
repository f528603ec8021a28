import numpy as np
import pytest
import scipy.linalg

from app.exceptions import NumericalDegeneracyError, RankDeficientError, SingularGramError
from app.model.model import IVDataset
from app.service.projection import clamp_nonnegative, pencil_eigh, projection_basis


def _dataset(Z, rng):
    n = Z.shape[0]
    return IVDataset(y=rng.normal(size=n), X=rng.normal(size=(n, 1)), Z=Z)


def test_orthonormal_basis(rng):
    basis = projection_basis(_dataset(rng.normal(size=(50, 5)), rng))
    assert np.max(np.abs(basis.Q.T @ basis.Q - np.eye(5))) < 1e-12


def test_identity_block_instruments(rng):
    k, n = 4, 12
    Z = np.vstack((np.eye(k), np.zeros((n - k, k))))
    basis = projection_basis(_dataset(Z, rng))
    v = rng.normal(size=n)
    projected = basis.project(v)
    np.testing.assert_allclose(projected[:k], v[:k], atol=1e-12)
    np.testing.assert_allclose(projected[k:], 0.0, atol=1e-12)
    np.testing.assert_allclose(basis.annihilate(v), v - projected, atol=1e-15)


def test_projection_reproduces_instruments(rng):
    Z = rng.normal(size=(80, 6))
    basis = projection_basis(_dataset(Z, rng))
    assert np.max(np.abs(basis.project(Z) - Z)) < 1e-10


def test_duplicated_column_is_rank_deficient(rng):
    Z = rng.normal(size=(40, 3))
    Z = np.column_stack((Z, Z[:, 1]))
    with pytest.raises(RankDeficientError):
        projection_basis(_dataset(Z, rng))


def test_gram_pair_matches_dense_projectors(rng, explicit_projectors):
    Z = rng.normal(size=(60, 4))
    W = rng.normal(size=(60, 3))
    P, M = explicit_projectors(Z)
    projected, annihilated = projection_basis(_dataset(Z, rng)).gram_pair(W)
    np.testing.assert_allclose(projected, W.T @ P @ W, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(annihilated, W.T @ M @ W, rtol=1e-10, atol=1e-10)


def test_pencil_matches_generalized_eigh(rng):
    F = rng.normal(size=(10, 3))
    G = rng.normal(size=(10, 3))
    a, b = F.T @ F, G.T @ G + np.eye(3)
    values, vectors = pencil_eigh(a, b)
    np.testing.assert_allclose(values, scipy.linalg.eigh(a, b, eigvals_only=True), rtol=1e-10)
    np.testing.assert_allclose(a @ vectors, b @ vectors * values, atol=1e-9)


def test_pencil_singular_denominator():
    with pytest.raises(SingularGramError, match="singular"):
        pencil_eigh(np.eye(2), np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_clamp_nonnegative():
    np.testing.assert_array_equal(clamp_nonnegative([-1e-12, 0.5], scale=1.0, what="x"), [0.0, 0.5])
    # the floor scales with the magnitude of the values
    np.testing.assert_array_equal(clamp_nonnegative([-1e-5, 1e4], scale=1e4, what="x"), [0.0, 1e4])
    with pytest.raises(NumericalDegeneracyError):
        clamp_nonnegative([-1e-3, 1.0], scale=1.0, what="x")
