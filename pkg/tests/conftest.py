import numpy as np
import pytest

from app.model.model import SimConfig
from app.service.random_streams import substream
from app.service.simulation import gen_gaussian_iv


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def make_dataset():
    """Factory for Gaussian weak-IV datasets with a fixed stream per seed."""

    def _make(n=200, k=6, m=2, spectrum=None, beta0=None, cov_eps_v=None, seed=0, normalize_by_omega=False):
        cfg = SimConfig(
            n=n,
            k=k,
            m=m,
            spectrum=spectrum if spectrum is not None else (20.0,) * m,
            beta0=beta0,
            cov_eps_v=cov_eps_v,
            normalize_by_omega=normalize_by_omega,
        )
        return gen_gaussian_iv(cfg, substream(seed, 12345))

    return _make


@pytest.fixture
def explicit_projectors():
    """Dense n x n P_Z and M_Z, the brute-force reference for the thin-basis code."""

    def _projectors(Z):
        P = Z @ np.linalg.solve(Z.T @ Z, Z.T)
        return P, np.eye(Z.shape[0]) - P

    return _projectors


@pytest.fixture
def write_dataset(tmp_path):
    """Write y, X, Z as a CSV with the y, X1.., Z1.. header and return its path."""

    def _write(y, X, Z, name="data.csv"):
        X = np.atleast_2d(np.asarray(X).T).T
        Z = np.atleast_2d(np.asarray(Z).T).T
        header = ["y"] + [f"X{j + 1}" for j in range(X.shape[1])] + [f"Z{j + 1}" for j in range(Z.shape[1])]
        rows = np.column_stack((y, X, Z))
        path = tmp_path / name
        lines = [",".join(header)] + [",".join(repr(float(v)) for v in row) for row in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


