"""Figure rendering for experiment reports.

Renders PNG companions next to the CSV outputs. CSV stays the canonical
result format; figures are a convenience view and can be switched off with
``output.figures = false``.
"""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# 0.95 quantile of a chi-square with 2 degrees of freedom: the contour scale
# for a bivariate Gaussian 95% coverage ellipse.
_CHI2_95_2DOF = 5.991464547107979

_COLORS = {
    "sgld": "tab:blue",
    "psgld": "tab:orange",
    "sgrld": "tab:green",
    "naive_qn": "tab:red",
    "hamcmc": "tab:purple",
    "dsgld": "tab:blue",
    "dpsgld": "tab:orange",
    "dhamcmc": "tab:purple",
}


def _cov_ellipse(mean: np.ndarray, cov: np.ndarray, n_points: int = 200) -> np.ndarray:
    """Boundary of the 95% coverage ellipse of a bivariate Gaussian."""
    angles = np.linspace(0.0, 2.0 * np.pi, n_points)
    circle = np.stack([np.cos(angles), np.sin(angles)])
    scale = np.linalg.cholesky(cov) * np.sqrt(_CHI2_95_2DOF)
    return (mean[:, None] + scale @ circle).T


def render_sample_clouds(path: str, clouds: dict, mean: np.ndarray, cov: np.ndarray) -> str:
    """Scatter of retained samples per sampler with the analytic 95% ellipse."""
    n = len(clouds)
    ncols = 2
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.2 * ncols, 3.6 * nrows), squeeze=False)
    ellipse = _cov_ellipse(mean, cov)
    for ax, (name, samples) in zip(axes.ravel(), clouds.items()):
        ax.scatter(samples[:, 0], samples[:, 1], s=2, alpha=0.15,
                   color=_COLORS.get(name, "gray"), rasterized=True)
        ax.plot(ellipse[:, 0], ellipse[:, 1], "k--", lw=1.2, label="posterior 95%")
        ax.plot(mean[0], mean[1], "k+", ms=10)
        ax.set_title(name)
        ax.set_xlabel("theta_0")
        ax.set_ylabel("theta_1")
    for ax in axes.ravel()[n:]:
        ax.set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _group_xy(rows, x_col: int, y_col: int):
    grouped = defaultdict(list)
    for row in rows:
        grouped[row[0]].append((row[x_col], row[y_col]))
    return grouped


def render_error_curves(path: str, rows, x_label: str) -> str:
    """Median-over-replicates posterior-mean error curves, one line per sampler.

    rows: (sampler, replicate, x, sq_error).
    """
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    per_sampler = defaultdict(lambda: defaultdict(list))
    for sampler, _rep, x, err in rows:
        per_sampler[sampler][x].append(err)
    for sampler, curve in per_sampler.items():
        xs = sorted(curve)
        med = [float(np.median(curve[x])) for x in xs]
        ax.loglog(xs, med, label=sampler, color=_COLORS.get(sampler))
    ax.set_xlabel(x_label)
    ax.set_ylabel("squared posterior-mean error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_bias_mse(path: str, rows: list[dict]) -> str:
    """Aggregate bias and MSE versus chain length, one panel per metric."""
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.8))
    for ax, metric in zip(axes, ("bias_norm", "mse")):
        series = defaultdict(list)
        for row in rows:
            if row["replicate"] == -1 and row["metric"] == metric:
                series[row["sampler"]].append((row["T"], row["value"]))
        for sampler, points in series.items():
            points.sort()
            ax.loglog(*zip(*points), marker="o", label=sampler, color=_COLORS.get(sampler))
        ax.set_xlabel("chain length T")
        ax.set_ylabel(metric)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_rmse_curve(path: str, rows) -> str:
    """Held-out RMSE per round for each distributed sampler; rows: (sampler, round, rmse)."""
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for sampler, points in _group_xy(rows, 1, 2).items():
        points.sort()
        ax.plot(*zip(*points), label=sampler, color=_COLORS.get(sampler))
    ax.set_xlabel("round")
    ax.set_ylabel("test RMSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
