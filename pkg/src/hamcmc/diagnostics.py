"""Monte Carlo estimators and ground-truth comparisons over sampler traces.

Posterior expectations are estimated with step-size-weighted sample averages:
h_hat = sum_t eps_t h(theta_t) / sum_t eps_t over the post-burn-in samples,
which stays consistent under decreasing step schedules and is invariant to a
uniform rescaling of the weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DiagnosticsError(ValueError):
    """Invalid trace or estimator input."""


@dataclass
class Trace:
    """Ordered chain output: one sample and one step size per iteration."""

    samples: np.ndarray           # (T, D)
    eps: np.ndarray               # (T,)
    burn_in: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        self.eps = np.asarray(self.eps, dtype=float).reshape(-1)
        if self.samples.shape[0] != self.eps.shape[0]:
            raise DiagnosticsError(
                f"{self.samples.shape[0]} samples but {self.eps.shape[0]} step sizes"
            )
        if not 0 <= self.burn_in <= self.samples.shape[0]:
            raise DiagnosticsError(
                f"burn_in {self.burn_in} outside [0, {self.samples.shape[0]}]"
            )

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def retained(self) -> np.ndarray:
        return self.samples[self.burn_in :]

    @property
    def retained_eps(self) -> np.ndarray:
        return self.eps[self.burn_in :]


def weighted_mean(trace: Trace, h: Callable[[np.ndarray], np.ndarray] | None = None):
    """Step-size-weighted average of h over the post-burn-in samples.

    h defaults to the identity; it may return a scalar or a vector.
    """
    thetas = trace.retained
    weights = trace.retained_eps
    if thetas.shape[0] == 0:
        raise DiagnosticsError("no post-burn-in samples to average")
    if h is None:
        values = thetas
    else:
        values = np.asarray([h(theta) for theta in thetas], dtype=float)
    return np.average(values, axis=0, weights=weights)


def posterior_mean_error(trace: Trace, model) -> float:
    """Squared distance between the weighted-mean estimate and the analytic mean."""
    mean, _ = model.analytic_posterior()
    estimate = weighted_mean(trace)
    diff = estimate - mean
    return float(diff @ diff)


def empirical_cov(trace: Trace) -> np.ndarray:
    """Step-size-weighted sample covariance of the post-burn-in samples."""
    thetas = trace.retained
    if thetas.shape[0] < 2:
        raise DiagnosticsError("need at least two post-burn-in samples")
    weights = trace.retained_eps / trace.retained_eps.sum()
    mu = weights @ thetas
    centered = thetas - mu
    return (centered.T * weights) @ centered


def bias_mse_curve(model, configs, replicates: int) -> list[dict]:
    """Replicated posterior-mean estimates as an empirical bias/MSE table.

    For every config (each fixing a sampler and a chain length) the chain is
    run ``replicates`` times with seeds derived from the config's seed.
    Per-replicate rows carry the squared estimate error; aggregate rows
    (replicate -1) carry per-coordinate absolute bias, its norm, and the mean
    squared error.
    """
    from .samplers import replicate_configs, run_chain  # lazy: avoids an import cycle

    if replicates < 1:
        raise DiagnosticsError("replicates must be positive")
    mean_true, _ = model.analytic_posterior()
    rows: list[dict] = []
    for cfg in configs:
        estimates = []
        for rep, rep_cfg in enumerate(replicate_configs(cfg, replicates)):
            trace = run_chain(model, rep_cfg)
            estimate = weighted_mean(trace)
            estimates.append(estimate)
            err = estimate - mean_true
            rows.append(
                {
                    "sampler": cfg.sampler,
                    "T": cfg.n_steps,
                    "replicate": rep,
                    "metric": "sq_error",
                    "value": float(err @ err),
                }
            )
        estimates = np.asarray(estimates)
        bias_vec = estimates.mean(axis=0) - mean_true
        for i, b in enumerate(np.abs(bias_vec)):
            rows.append(
                {
                    "sampler": cfg.sampler,
                    "T": cfg.n_steps,
                    "replicate": -1,
                    "metric": f"abs_bias_{i}",
                    "value": float(b),
                }
            )
        rows.append(
            {
                "sampler": cfg.sampler,
                "T": cfg.n_steps,
                "replicate": -1,
                "metric": "bias_norm",
                "value": float(np.linalg.norm(bias_vec)),
            }
        )
        sq_errors = ((estimates - mean_true) ** 2).sum(axis=1)
        rows.append(
            {
                "sampler": cfg.sampler,
                "T": cfg.n_steps,
                "replicate": -1,
                "metric": "mse",
                "value": float(sq_errors.mean()),
            }
        )
    return rows


def curve_summary(rows: list[dict]) -> dict:
    """Aggregate bias/MSE rows keyed by (sampler, T) for programmatic checks."""
    out: dict = {}
    for row in rows:
        if row["replicate"] == -1 and row["metric"] in ("bias_norm", "mse"):
            out.setdefault((row["sampler"], row["T"]), {})[row["metric"]] = row["value"]
    return out


def rmse(model, trace: Trace, test) -> float:
    """Root mean squared error of weighted-mean predictions on held-out entries.

    Predictions are averaged across samples (not computed from an averaged
    parameter), matching the Monte Carlo estimate of the predictive mean.
    """
    test = list(test)
    if not test:
        raise DiagnosticsError("empty test set")
    pairs = [(t[0], t[1]) for t in test]
    values = np.array([t[2] for t in test], dtype=float)
    pred_mean = weighted_mean(trace, h=lambda theta: model.mf_predict(theta, pairs))
    diff = pred_mean - values
    return float(np.sqrt(np.mean(diff * diff)))
