"""Experiment orchestration: chains, sweeps, and deterministic CSV emission.

Every experiment writes RFC-style CSV (comma separator, ``.`` decimal, header
row) preceded by ``#``-prefixed comment lines echoing the exact config, so a
result file reproduces its own run. Result CSVs are byte-identical across
reruns with the same config and seed; the one exception is the wall-clock
sidecar (``*_walltime.csv``), whose time column is measured and therefore
hardware-dependent.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ExperimentConfig
from .data import DataError, ingest_movielens, split_train_test
from .diagnostics import Trace, bias_mse_curve
from .dist_sim import build_partition, run_distributed_chain
from .models import GaussianMFModel, LinearGaussianModel, make_correlated_gaussian, make_low_rank_mf
from .samplers import ChainConfig, StepSchedule, run_chain

DEFAULT_SERIAL_SAMPLERS = ("sgld", "psgld", "sgrld", "hamcmc")
DEFAULT_DISTRIBUTED_SAMPLERS = ("dsgld", "dpsgld", "dhamcmc")


class ExperimentError(RuntimeError):
    """Runtime failure while executing an experiment."""


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            raise ExperimentError(f"non-finite value {value!r} in CSV output")
        return repr(value)
    return str(value)


def write_csv(path, header, rows, echo_lines) -> str:
    """Write comment-echoed, header-first CSV; rejects non-finite numeric cells."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in echo_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])
    return path


def chain_seed(master_seed: int, replicate: int) -> int:
    """Replicate seed shared across samplers, so paired chains see the same batches."""
    return int(np.random.SeedSequence(entropy=[master_seed, replicate]).generate_state(1)[0])


def resolve_burn_in(requested: int, n_steps: int, default: int) -> int:
    if requested == -1:
        return min(default, n_steps)
    return min(requested, n_steps)


def build_chain_config(
    cfg: ExperimentConfig,
    sampler: str,
    n_steps: int,
    burn_in: int,
    seed: int,
    record_walltime: bool = False,
) -> ChainConfig:
    """ChainConfig for one sampler, honoring per-sampler config overrides."""
    value = lambda f: cfg.sampler_value(sampler, f)
    kind = value("schedule_kind")
    schedule = StepSchedule(
        kind=kind,
        a_eps=value("a_eps"),
        exponent=value("exponent"),
        eps_const=value("eps_const"),
    )
    return ChainConfig(
        sampler=sampler,
        n_steps=n_steps,
        seed=seed,
        schedule=schedule,
        burn_in=burn_in,
        m=value("m"),
        gamma=value("gamma"),
        lam=value("lam"),
        n_omega=value("n_omega"),
        alpha=value("alpha"),
        lambda_p=value("lambda_p"),
        mirror=cfg.sampler.mirror,
        record_walltime=record_walltime,
    )


def build_gaussian_model(cfg: ExperimentConfig) -> LinearGaussianModel:
    return make_correlated_gaussian(
        dim=cfg.model.d,
        n_obs=cfg.model.n,
        sigma_x2=cfg.model.sigma_x2,
        correlation=cfg.model.correlation,
        seed=np.random.SeedSequence(entropy=[cfg.seed, 0xDA7A]),
    )


def build_mf_data(cfg: ExperimentConfig):
    """(model built on the training split, test triples)."""
    if cfg.model.movielens_path:
        if not os.path.exists(cfg.model.movielens_path):
            raise DataError(f"ratings file not found: {cfg.model.movielens_path}")
        triples, n_rows, n_cols, _ = ingest_movielens(cfg.model.movielens_path)
    else:
        triples, _ = make_low_rank_mf(
            n_rows=cfg.model.mf_rows,
            n_cols=cfg.model.mf_cols,
            true_rank=cfg.model.mf_true_rank,
            model_rank=cfg.model.mf_rank,
            seed=np.random.SeedSequence(entropy=[cfg.seed, 0x3F]),
            noise_std=cfg.model.mf_noise_std,
            density=cfg.model.mf_density,
        )
        n_rows, n_cols = cfg.model.mf_rows, cfg.model.mf_cols
    train, test = split_train_test(
        triples,
        cfg.dist.test_fraction,
        seed=np.random.SeedSequence(entropy=[cfg.seed, 0x5B117]),
    )
    model = GaussianMFModel(
        train,
        n_rows,
        n_cols,
        rank=cfg.model.mf_rank,
        sigma_w2=cfg.model.sigma_w2,
        sigma_h2=cfg.model.sigma_h2,
        sigma_x2=cfg.model.sigma_x2,
    )
    return model, test


def _run_many(jobs, threads: int):
    """Evaluate zero-argument jobs, optionally on a thread pool, ordered by index."""
    if threads <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def _checkpoints(burn_in: int, n_steps: int, count: int = 40) -> np.ndarray:
    """Log-spaced iteration checkpoints strictly after burn-in."""
    lo = burn_in + 1
    if n_steps <= lo:
        return np.array([n_steps], dtype=int)
    grid = np.logspace(math.log10(lo), math.log10(n_steps), count)
    return np.unique(np.round(grid).astype(int))


def _prefix_errors(trace: Trace, mean_true: np.ndarray, checkpoints: np.ndarray):
    """Squared error of the weighted prefix estimate at each checkpoint."""
    num = np.cumsum(trace.eps[:, None] * trace.samples, axis=0)
    den = np.cumsum(trace.eps)
    burn = trace.burn_in
    base_num = num[burn - 1] if burn > 0 else 0.0
    base_den = den[burn - 1] if burn > 0 else 0.0
    errors = np.empty(len(checkpoints))
    for i, c in enumerate(checkpoints):
        est = (num[c - 1] - base_num) / (den[c - 1] - base_den)
        diff = est - mean_true
        errors[i] = diff @ diff
    return errors


def run_synthetic_2d(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> list[str]:
    """Posterior-cloud experiment: retained samples per sampler plus the analytic posterior."""
    model = build_gaussian_model(cfg)
    samplers = cfg.sweep.samplers or DEFAULT_SERIAL_SAMPLERS
    n_steps = cfg.sampler.t
    burn_in = resolve_burn_in(cfg.sampler.burn_in, n_steps, n_steps // 2)
    echo = cfg.echo_lines()
    seed = chain_seed(cfg.seed, 0)

    jobs = [
        (lambda s=s: run_chain(model, build_chain_config(cfg, s, n_steps, burn_in, seed)))
        for s in samplers
    ]
    traces = _run_many(jobs, threads)

    paths = []
    header = ["t"] + [f"theta_{i}" for i in range(model.dim)]
    for sampler, trace in zip(samplers, traces):
        rows = [
            [burn_in + i + 1] + list(theta)
            for i, theta in enumerate(trace.retained)
        ]
        paths.append(write_csv(os.path.join(out_dir, f"samples_{sampler}.csv"), header, rows, echo))

    mean, cov = model.analytic_posterior()
    post_rows = [["mean"] + list(mean)]
    for i in range(model.dim):
        post_rows.append([f"cov_{i}"] + list(cov[i]))
    paths.append(
        write_csv(
            os.path.join(out_dir, "posterior.csv"),
            ["quantity"] + [f"col_{i}" for i in range(model.dim)],
            post_rows,
            echo,
        )
    )

    if cfg.output.figures:
        from . import figures

        paths.append(
            figures.render_sample_clouds(
                os.path.join(out_dir, "synthetic_2d.png"),
                {s: t.retained for s, t in zip(samplers, traces)},
                mean,
                cov,
            )
        )
    return paths


def run_posterior_mean_error(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> list[str]:
    """Error of the posterior-mean estimate versus iteration and versus wall time."""
    model = build_gaussian_model(cfg)
    samplers = cfg.sweep.samplers or DEFAULT_SERIAL_SAMPLERS
    n_steps = cfg.sampler.t
    burn_in = resolve_burn_in(cfg.sampler.burn_in, n_steps, n_steps // 2)
    replicates = cfg.sweep.replicates
    mean_true, _ = model.analytic_posterior()
    checkpoints = _checkpoints(burn_in, n_steps)
    echo = cfg.echo_lines()

    jobs = []
    labels = []
    for sampler in samplers:
        for rep in range(replicates):
            cc = build_chain_config(
                cfg, sampler, n_steps, burn_in, chain_seed(cfg.seed, rep), record_walltime=True
            )
            jobs.append(lambda cc=cc: run_chain(model, cc))
            labels.append((sampler, rep))
    traces = _run_many(jobs, threads)

    iter_rows = []
    wall_rows = []
    for (sampler, rep), trace in zip(labels, traces):
        errors = _prefix_errors(trace, mean_true, checkpoints)
        wall = trace.meta["wall_s"]
        for c, err in zip(checkpoints, errors):
            iter_rows.append([sampler, rep, int(c), err])
            wall_rows.append([sampler, rep, float(wall[c - 1]), err])

    paths = [
        write_csv(
            os.path.join(out_dir, "error_vs_iteration.csv"),
            ["sampler", "replicate", "iteration", "sq_error"],
            iter_rows,
            echo,
        ),
        write_csv(
            os.path.join(out_dir, "error_vs_walltime.csv"),
            ["sampler", "replicate", "wall_s", "sq_error"],
            wall_rows,
            echo + ["wall_s is measured wall-clock time: this file is not byte-stable across reruns"],
        ),
    ]
    if cfg.output.figures:
        from . import figures

        paths.append(
            figures.render_error_curves(
                os.path.join(out_dir, "error_vs_iteration.png"), iter_rows, x_label="iteration"
            )
        )
        paths.append(
            figures.render_error_curves(
                os.path.join(out_dir, "error_vs_walltime.png"), wall_rows, x_label="wall-clock (s)"
            )
        )
    return paths


def run_bias_mse(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> list[str]:
    """Replicated bias/MSE decay table over the configured chain lengths."""
    model = build_gaussian_model(cfg)
    samplers = cfg.sweep.samplers or DEFAULT_SERIAL_SAMPLERS
    configs = []
    for sampler in samplers:
        for t in cfg.sweep.t_values:
            burn = resolve_burn_in(cfg.sampler.burn_in, t, t // 2)
            configs.append(build_chain_config(cfg, sampler, t, burn, chain_seed(cfg.seed, 0)))
    rows = bias_mse_curve(model, configs, cfg.sweep.replicates)
    csv_rows = [[r["sampler"], r["T"], r["replicate"], r["metric"], r["value"]] for r in rows]
    paths = [
        write_csv(
            os.path.join(out_dir, "bias_mse.csv"),
            ["sampler", "T", "replicate", "metric", "value"],
            csv_rows,
            cfg.echo_lines(),
        )
    ]
    if cfg.output.figures:
        from . import figures

        paths.append(figures.render_bias_mse(os.path.join(out_dir, "bias_mse.png"), rows))
    return paths


def run_mf_distributed(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> list[str]:
    """Distributed matrix-factorization comparison: test RMSE per round plus telemetry."""
    model, test = build_mf_data(cfg)
    plan = build_partition(model.n_rows, model.n_cols, cfg.dist.p, model.rows, model.cols)
    samplers = cfg.sweep.samplers or DEFAULT_DISTRIBUTED_SAMPLERS
    rounds = cfg.dist.rounds
    burn_in = resolve_burn_in(cfg.sampler.burn_in, rounds, min(50, rounds // 2))
    echo = cfg.echo_lines()

    rmse_rows = []
    telemetry_rows = []
    for sampler in samplers:
        serial_name = {"dsgld": "sgld", "dpsgld": "psgld", "dhamcmc": "hamcmc"}[sampler]
        cc = build_chain_config(cfg, serial_name, rounds, burn_in, chain_seed(cfg.seed, 0))
        trace = run_distributed_chain(
            plan,
            model,
            sampler,
            cc,
            test=test,
            rmse_every=cfg.dist.rmse_every,
            keep_samples=cfg.dist.keep_samples,
        )
        for rnd, value in trace.meta["rmse_curve"]:
            rmse_rows.append([sampler, rnd, value])
        for rnd, subset, worker, cells, nbytes in trace.meta["telemetry"]:
            telemetry_rows.append([sampler, rnd, subset, worker, cells, nbytes])

    paths = [
        write_csv(
            os.path.join(out_dir, "rmse_vs_round.csv"),
            ["sampler", "round", "rmse"],
            rmse_rows,
            echo,
        ),
        write_csv(
            os.path.join(out_dir, "telemetry.csv"),
            ["sampler", "round", "subset", "worker", "cells_processed", "bytes_transferred"],
            telemetry_rows,
            echo,
        ),
    ]
    if cfg.output.figures:
        from . import figures

        paths.append(figures.render_rmse_curve(os.path.join(out_dir, "rmse_vs_round.png"), rmse_rows))
    return paths


_RUNNERS = {
    "synthetic_2d": run_synthetic_2d,
    "posterior_mean_error": run_posterior_mean_error,
    "bias_mse": run_bias_mse,
    "mf_distributed": run_mf_distributed,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> list[str]:
    """Execute the configured experiment and return the written file paths."""
    os.makedirs(out_dir, exist_ok=True)
    return _RUNNERS[cfg.experiment](cfg, out_dir, threads)
