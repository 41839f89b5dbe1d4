"""Target posteriors: potential energies, minibatch gradients, closed-form moments.

Potentials are negative log joint densities with theta-independent additive
constants dropped (the Gaussian normalizers); gradients are unaffected and the
only consumer of raw potential values is diagnostics.

Minibatches are index multisets drawn with replacement; the likelihood term of
a stochastic gradient is rescaled by N / |batch| so its expectation over
uniform batches equals the full-data gradient. Priors are never subsampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ModelError(ValueError):
    """Invalid model construction or evaluation input."""


@dataclass(frozen=True)
class Minibatch:
    """Multiset of data indices drawn with replacement."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ModelError("minibatch must be a nonempty 1-d index array")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return int(self.indices.size)


def draw_minibatch(rng: np.random.Generator, n_data: int, size: int) -> Minibatch:
    """Uniform with-replacement draw of ``size`` indices from [0, n_data)."""
    if n_data < 1:
        raise ModelError("cannot draw a minibatch from an empty dataset")
    if size < 1:
        raise ModelError("minibatch size must be positive")
    return Minibatch(rng.integers(0, n_data, size=size))


class LinearGaussianModel:
    """Standard-normal prior on theta, Gaussian observations x_n ~ N(a_n . theta, sigma_x2).

    The posterior is Gaussian with covariance (A^T A / sigma_x2 + I)^-1, which
    also equals the inverse expected Fisher information for this model.
    """

    def __init__(self, a: np.ndarray, x: np.ndarray, sigma_x2: float):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        x = np.asarray(x, dtype=float).reshape(-1)
        if sigma_x2 <= 0:
            raise ModelError(f"sigma_x2 must be positive, got {sigma_x2}")
        if a.shape[0] != x.shape[0]:
            raise ModelError(
                f"design has {a.shape[0]} rows but {x.shape[0]} observations"
            )
        self.a = a
        self.x = x
        self.sigma_x2 = float(sigma_x2)
        self.n_obs = int(x.shape[0])
        self.dim = int(a.shape[1])

    def _check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.dim,):
            raise ModelError(f"theta has shape {theta.shape}, expected ({self.dim},)")
        return theta

    def potential(self, theta: np.ndarray) -> float:
        theta = self._check_theta(theta)
        resid = self.x - self.a @ theta
        return float(0.5 * theta @ theta + 0.5 * resid @ resid / self.sigma_x2)

    def full_grad(self, theta: np.ndarray) -> np.ndarray:
        theta = self._check_theta(theta)
        return theta + self.a.T @ (self.a @ theta - self.x) / self.sigma_x2

    def prior_grad(self, theta: np.ndarray) -> np.ndarray:
        return self._check_theta(theta).copy()

    def stoch_grad(self, theta: np.ndarray, batch: Minibatch) -> np.ndarray:
        theta = self._check_theta(theta)
        idx = batch.indices
        if idx.min() < 0 or idx.max() >= self.n_obs:
            raise ModelError("minibatch index out of range")
        a_b = self.a[idx]
        scale = self.n_obs / batch.size
        return theta + scale * (a_b.T @ (a_b @ theta - self.x[idx])) / self.sigma_x2

    def likelihood_grad_mean(self, theta: np.ndarray, batch: Minibatch) -> np.ndarray:
        """Mean over the batch of the per-datum log-likelihood gradient."""
        theta = self._check_theta(theta)
        a_b = self.a[batch.indices]
        return -(a_b.T @ (a_b @ theta - self.x[batch.indices])) / (
            self.sigma_x2 * batch.size
        )

    def analytic_posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and covariance in closed form."""
        precision = self.a.T @ self.a / self.sigma_x2 + np.eye(self.dim)
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (self.a.T @ self.x / self.sigma_x2)
        return mean, cov

    def expected_fim_inverse(self) -> np.ndarray:
        """Inverse expected Fisher information; coincides with the posterior covariance."""
        return self.analytic_posterior()[1]


def make_correlated_gaussian(
    dim: int,
    n_obs: int,
    sigma_x2: float,
    correlation: float,
    seed,
) -> LinearGaussianModel:
    """Synthetic linear-Gaussian instance with a correlated posterior.

    Rows of the design are a blend c * z_n * u + (1 - c) * w_n of a shared
    random unit direction u and isotropic noise; c near 1 concentrates the
    design on u, which makes the posterior long and narrow off the axes.
    """
    if not 0.0 <= correlation < 1.0:
        raise ModelError(f"correlation must be in [0, 1), got {correlation}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    z = rng.standard_normal(n_obs)
    w = rng.standard_normal((n_obs, dim))
    a = correlation * z[:, None] * u[None, :] + (1.0 - correlation) * w
    theta_true = rng.standard_normal(dim)
    x = a @ theta_true + np.sqrt(sigma_x2) * rng.standard_normal(n_obs)
    return LinearGaussianModel(a, x, sigma_x2)


class GaussianMFModel:
    """Gaussian matrix factorization: X_ij ~ N(sum_k W_ik H_kj, sigma_x2).

    W is I x K with N(0, sigma_w2) entries, H is K x J with N(0, sigma_h2)
    entries, and only the listed (i, j, value) cells of X are observed.
    theta is the row-major flattening of W followed by the row-major
    flattening of H; this layout is part of the public contract.
    """

    def __init__(
        self,
        observed: np.ndarray | list,
        n_rows: int,
        n_cols: int,
        rank: int,
        sigma_w2: float = 1.0,
        sigma_h2: float = 1.0,
        sigma_x2: float = 1.0,
    ):
        for name, v in (("sigma_w2", sigma_w2), ("sigma_h2", sigma_h2), ("sigma_x2", sigma_x2)):
            if v <= 0:
                raise ModelError(f"{name} must be positive, got {v}")
        if n_rows < 1 or n_cols < 1 or rank < 1:
            raise ModelError("matrix dimensions and rank must be positive")
        triples = list(observed)
        rows = np.array([t[0] for t in triples], dtype=np.int64)
        cols = np.array([t[1] for t in triples], dtype=np.int64)
        vals = np.array([t[2] for t in triples], dtype=float)
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
                raise ModelError("observed index out of bounds")
        if len({(int(i), int(j)) for i, j in zip(rows, cols)}) != rows.size:
            raise ModelError("duplicate observed (i, j) entry")
        self.rows = rows
        self.cols = cols
        self.vals = vals
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.rank = int(rank)
        self.sigma_w2 = float(sigma_w2)
        self.sigma_h2 = float(sigma_h2)
        self.sigma_x2 = float(sigma_x2)
        self.n_obs = int(rows.size)
        self.dim = self.n_rows * self.rank + self.rank * self.n_cols
        self._w_size = self.n_rows * self.rank

    def unpack(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Views of theta as (W, H); no copy."""
        theta = self._check_theta(theta)
        w = theta[: self._w_size].reshape(self.n_rows, self.rank)
        h = theta[self._w_size :].reshape(self.rank, self.n_cols)
        return w, h

    def pack(self, w: np.ndarray, h: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(w, dtype=float).ravel(), np.asarray(h, dtype=float).ravel()])

    def _check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (self.dim,):
            raise ModelError(f"theta has shape {theta.shape}, expected ({self.dim},)")
        return theta

    def _residual(self, w, h, idx) -> np.ndarray:
        ii = self.rows[idx]
        jj = self.cols[idx]
        pred = np.einsum("nk,kn->n", w[ii], h[:, jj])
        return pred - self.vals[idx]

    def potential(self, theta: np.ndarray) -> float:
        w, h = self.unpack(theta)
        resid = self._residual(w, h, slice(None))
        return float(
            0.5 * np.sum(w * w) / self.sigma_w2
            + 0.5 * np.sum(h * h) / self.sigma_h2
            + 0.5 * resid @ resid / self.sigma_x2
        )

    def prior_grad(self, theta: np.ndarray) -> np.ndarray:
        w, h = self.unpack(theta)
        return self.pack(w / self.sigma_w2, h / self.sigma_h2)

    def _likelihood_grad_sum(self, theta: np.ndarray, idx) -> np.ndarray:
        """Sum over the indexed observations of the negative log-likelihood gradient."""
        w, h = self.unpack(theta)
        ii = self.rows[idx]
        jj = self.cols[idx]
        resid = self._residual(w, h, idx) / self.sigma_x2
        dw = np.zeros_like(w)
        dh_t = np.zeros((self.n_cols, self.rank))
        np.add.at(dw, ii, resid[:, None] * h[:, jj].T)
        np.add.at(dh_t, jj, resid[:, None] * w[ii])
        return self.pack(dw, dh_t.T)

    def full_grad(self, theta: np.ndarray) -> np.ndarray:
        return self.prior_grad(theta) + self._likelihood_grad_sum(theta, slice(None))

    def stoch_grad(self, theta: np.ndarray, batch: Minibatch) -> np.ndarray:
        idx = batch.indices
        if self.n_obs == 0:
            raise ModelError("model has no observed entries")
        if idx.min() < 0 or idx.max() >= self.n_obs:
            raise ModelError("minibatch index out of range")
        scale = self.n_obs / batch.size
        return self.prior_grad(theta) + scale * self._likelihood_grad_sum(theta, idx)

    def likelihood_grad_mean(self, theta: np.ndarray, batch: Minibatch) -> np.ndarray:
        return -self._likelihood_grad_sum(theta, batch.indices) / batch.size

    def mf_predict(self, theta: np.ndarray, pairs) -> np.ndarray:
        """Predicted entries sum_k W_ik H_kj for each (i, j) pair."""
        w, h = self.unpack(theta)
        ii = np.array([p[0] for p in pairs], dtype=np.int64)
        jj = np.array([p[1] for p in pairs], dtype=np.int64)
        if ii.size:
            if ii.min() < 0 or ii.max() >= self.n_rows or jj.min() < 0 or jj.max() >= self.n_cols:
                raise ModelError("prediction index out of bounds")
        return np.einsum("nk,kn->n", w[ii], h[:, jj])


def make_low_rank_mf(
    n_rows: int,
    n_cols: int,
    true_rank: int,
    model_rank: int,
    seed,
    noise_std: float = 0.1,
    density: float = 1.0,
    scale_spread: float = 0.0,
    sigma_w2: float = 1.0,
    sigma_h2: float = 1.0,
    sigma_x2: float = 1.0,
) -> tuple[list[tuple[int, int, float]], dict]:
    """Synthetic low-rank observations plus generation metadata.

    Returns the observed (i, j, value) triples (a ``density`` fraction of all
    cells, without replacement) and a dict with the generating factors.
    ``scale_spread`` > 0 multiplies rows and columns by lognormal scales, which
    spreads the curvature across coordinates the way popularity imbalance does
    in real ratings matrices.
    """
    if not 0.0 < density <= 1.0:
        raise ModelError(f"density must be in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    w_true = rng.standard_normal((n_rows, true_rank)) / np.sqrt(true_rank)
    h_true = rng.standard_normal((true_rank, n_cols))
    if scale_spread > 0.0:
        w_true *= np.exp(scale_spread * rng.standard_normal(n_rows))[:, None]
        h_true *= np.exp(scale_spread * rng.standard_normal(n_cols))[None, :]
    x = w_true @ h_true + noise_std * rng.standard_normal((n_rows, n_cols))
    n_cells = n_rows * n_cols
    n_keep = max(1, int(round(density * n_cells)))
    keep = rng.choice(n_cells, size=n_keep, replace=False) if n_keep < n_cells else np.arange(n_cells)
    keep = np.sort(keep)
    ii, jj = np.unravel_index(keep, (n_rows, n_cols))
    triples = [(int(i), int(j), float(x[i, j])) for i, j in zip(ii, jj)]
    meta = {
        "w_true": w_true,
        "h_true": h_true,
        "model_rank": model_rank,
        "sigma_w2": sigma_w2,
        "sigma_h2": sigma_h2,
        "sigma_x2": sigma_x2,
    }
    return triples, meta
