"""Synchronous desk-scale simulation of block-partitioned distributed sampling.

The observation matrix is cut into a P x P block grid. Subset k collects the
P blocks {(w, (w + k) mod P)}, which are pairwise row- and column-disjoint, so
the P workers can each process one block of the chosen subset without write
conflicts: worker w permanently owns W row-block w and holds exactly one
migratory H column-block per round.

Rounds are synchronous and executed in fixed worker-index order, which makes
runs deterministic and lets the P = 1 case reproduce the serial chain bit for
bit. Communication is not performed, only accounted: migrated H-block payloads
and reduced scalars are counted as bytes in per-round telemetry rows.

The actual update math is the serial step functions, driven through three
seams: a batch provider that performs subset selection and block migration, a
noise source that draws each worker's shard from its own stream, and a dot
product that sums per-worker partial dots so every quasi-Newton scalar goes
through the reduce path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import Trace
from .models import GaussianMFModel, Minibatch
from .samplers import ChainConfig, init_chain_state, _step

DISTRIBUTED_SAMPLERS = {"dsgld": "sgld", "dpsgld": "psgld", "dhamcmc": "hamcmc"}


class PartitionError(ValueError):
    """Invalid partition geometry."""


@dataclass(frozen=True)
class PartitionPlan:
    """P x P block grid with P row/column-disjoint subsets and a block-owner map."""

    n_workers: int
    n_rows: int
    n_cols: int
    row_bounds: np.ndarray        # (P + 1,) row-block boundaries
    col_bounds: np.ndarray        # (P + 1,) column-block boundaries
    block_entries: dict           # (bi, bj) -> observed-entry indices, stable order
    subset_sizes: np.ndarray      # (P,) observed-entry count per subset
    _subset_entry_cache: dict = field(default_factory=dict, compare=False)

    def subset_blocks(self, k: int) -> list[tuple[int, int]]:
        """Blocks of subset k: worker w handles block (w, (w + k) mod P)."""
        p = self.n_workers
        return [(w, (w + k) % p) for w in range(p)]

    def subset_entries(self, k: int) -> np.ndarray:
        """Observed-entry indices of subset k, concatenated in worker order."""
        if k not in self._subset_entry_cache:
            parts = [self.block_entries[b] for b in self.subset_blocks(k)]
            self._subset_entry_cache[k] = (
                np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
            )
        return self._subset_entry_cache[k]

    def block_owner(self, bi: int, bj: int) -> int:
        """The worker that stores and processes block (bi, bj)."""
        return bi

    def block_of_cell(self, i: int, j: int) -> tuple[int, int]:
        bi = int(np.searchsorted(self.row_bounds, i, side="right") - 1)
        bj = int(np.searchsorted(self.col_bounds, j, side="right") - 1)
        return bi, bj


def build_partition(
    n_rows: int, n_cols: int, n_workers: int, rows: np.ndarray, cols: np.ndarray
) -> PartitionPlan:
    """Balanced P x P grid over the matrix with observed entries bucketed per block.

    Block boundaries split rows and columns as evenly as possible (sizes within
    one of each other). Entry indices keep their input order within a block.
    """
    p = n_workers
    if p < 1 or p > min(n_rows, n_cols):
        raise PartitionError(
            f"need 1 <= P <= min(rows, cols) = {min(n_rows, n_cols)}, got {p}"
        )
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    row_bounds = np.array([(b * n_rows) // p for b in range(p + 1)], dtype=np.int64)
    col_bounds = np.array([(b * n_cols) // p for b in range(p + 1)], dtype=np.int64)
    bi = np.searchsorted(row_bounds, rows, side="right") - 1
    bj = np.searchsorted(col_bounds, cols, side="right") - 1
    block_entries = {
        (a, b): np.flatnonzero((bi == a) & (bj == b)).astype(np.int64)
        for a in range(p)
        for b in range(p)
    }
    subset_sizes = np.array(
        [
            sum(block_entries[(w, (w + k) % p)].size for w in range(p))
            for k in range(p)
        ],
        dtype=np.int64,
    )
    return PartitionPlan(
        n_workers=p,
        n_rows=n_rows,
        n_cols=n_cols,
        row_bounds=row_bounds,
        col_bounds=col_bounds,
        block_entries=block_entries,
        subset_sizes=subset_sizes,
    )


def select_subset(plan: PartitionPlan, rng: np.random.Generator) -> int:
    """Draw a subset id with probability proportional to its observed count."""
    total = int(plan.subset_sizes.sum())
    if total == 0:
        raise PartitionError("all subsets are empty")
    cutoffs = np.cumsum(plan.subset_sizes) / total
    u = rng.random()
    return int(np.searchsorted(cutoffs, u, side="right"))


def reduce_dots(workers, vectors: dict, pairs) -> np.ndarray:
    """Global dot products as sums of per-worker partial dots, in worker order.

    ``vectors`` maps names to full-length arrays; each worker contributes the
    dot over its current shard. Summation order is fixed by worker index, so
    results are bitwise reproducible across runs.
    """
    out = np.empty(len(pairs))
    for n, (name_a, name_b) in enumerate(pairs):
        a = vectors[name_a]
        b = vectors[name_b]
        if a.shape != b.shape:
            raise PartitionError(f"shard dimension mismatch: {a.shape} vs {b.shape}")
        acc = 0.0
        for w in workers:
            idx = w.theta_indices
            acc += float(np.dot(a[idx], b[idx]))
        out[n] = acc
    return out


@dataclass
class WorkerState:
    """One simulated node: static W row-block, migratory H column-block."""

    worker_id: int
    row_range: tuple[int, int]            # W rows owned, persistent
    rng: np.random.Generator              # local noise stream
    held_col_block: int | None = None     # H column-block currently held
    theta_indices: np.ndarray | None = None

    def shard_size(self) -> int:
        return 0 if self.theta_indices is None else int(self.theta_indices.size)


def _theta_indices(model: GaussianMFModel, plan: PartitionPlan, w: WorkerState) -> np.ndarray:
    """Flat theta indices of worker w's current shard: its W rows then its H columns."""
    k = model.rank
    r0, r1 = w.row_range
    w_part = np.arange(r0 * k, r1 * k, dtype=np.int64)
    c0 = int(plan.col_bounds[w.held_col_block])
    c1 = int(plan.col_bounds[w.held_col_block + 1])
    w_size = model.n_rows * k
    h_part = (
        w_size
        + (np.arange(k, dtype=np.int64) * model.n_cols)[:, None]
        + np.arange(c0, c1, dtype=np.int64)[None, :]
    ).ravel()
    return np.concatenate([w_part, h_part])


class _ShardedNoise:
    """Per-worker normal draws assembled into full-length vectors.

    Standing in for the chain's noise generator: each call draws every
    worker's shard from that worker's own stream, in worker order. With one
    worker this is exactly a single stream drawing full vectors, which is what
    the serial chain does.
    """

    def __init__(self, workers):
        self._workers = workers

    def normal(self, size: int) -> np.ndarray:
        out = np.empty(size)
        for w in self._workers:
            out[w.theta_indices] = w.rng.normal(size=w.shard_size())
        return out


def subset_batch_provider(plan: PartitionPlan):
    """Serial-chain batch provider drawing whole subsets as minibatches.

    The reference path for the P = 1 equivalence contract: a serial chain fed
    by this provider sees exactly the batch sequence of the distributed runner.
    """

    def provider(rng: np.random.Generator) -> Minibatch:
        k = select_subset(plan, rng)
        return Minibatch(plan.subset_entries(k))

    return provider


def run_distributed_chain(
    plan: PartitionPlan,
    model: GaussianMFModel,
    sampler: str,
    cfg: ChainConfig,
    test=None,
    rmse_every: int | None = None,
    keep_samples: bool = True,
) -> Trace:
    """Synchronous-round distributed chain over a partitioned MF posterior.

    Each round selects a subset, migrates H column-blocks to the workers that
    need them, computes the subset-restricted stochastic gradient (likelihood
    scaled by total observed count over subset size), and applies the sampler
    update; for dhamcmc every quasi-Newton scalar is a worker-order reduce.
    Fully deterministic given the seed. Telemetry rows land in
    ``trace.meta["telemetry"]`` as (round, subset, worker, cells_processed,
    bytes_transferred); a streaming test-RMSE curve lands in
    ``trace.meta["rmse_curve"]`` when a test set is supplied.
    """
    if sampler not in DISTRIBUTED_SAMPLERS:
        raise PartitionError(
            f"unknown distributed sampler {sampler!r}; "
            f"expected one of {sorted(DISTRIBUTED_SAMPLERS)}"
        )
    if plan.n_rows != model.n_rows or plan.n_cols != model.n_cols:
        raise PartitionError("partition plan does not match model dimensions")
    serial_cfg = replace(cfg, sampler=DISTRIBUTED_SAMPLERS[sampler])
    serial_cfg.validate()

    p = plan.n_workers
    noise_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    # P = 1 inherits the serial noise stream unchanged so the degenerate
    # partition reproduces the serial chain bit for bit.
    worker_seeds = [noise_ss] if p == 1 else noise_ss.spawn(p)
    workers = [
        WorkerState(
            worker_id=w,
            row_range=(int(plan.row_bounds[w]), int(plan.row_bounds[w + 1])),
            rng=np.random.default_rng(worker_seeds[w]),
        )
        for w in range(p)
    ]
    rng_batch = np.random.default_rng(batch_ss)

    k = model.rank
    bytes_per_float = 8
    telemetry: list[tuple] = []
    round_ctx = {"round": 0, "subset": None, "migrated_cols": [0] * p, "reduces": 0}

    def migrate(subset: int) -> None:
        for w in workers:
            needed = (w.worker_id + subset) % p
            moved_cols = 0
            if w.held_col_block != needed:
                width = int(plan.col_bounds[needed + 1] - plan.col_bounds[needed])
                # Initial placement is free; later moves carry the block payload.
                moved_cols = 0 if w.held_col_block is None else width
                w.held_col_block = needed
                w.theta_indices = _theta_indices(model, plan, w)
            elif w.theta_indices is None:
                w.theta_indices = _theta_indices(model, plan, w)
            round_ctx["migrated_cols"][w.worker_id] = moved_cols

    def provider(rng: np.random.Generator) -> Minibatch:
        subset = select_subset(plan, rng)
        round_ctx["subset"] = subset
        migrate(subset)
        return Minibatch(plan.subset_entries(subset))

    def sharded_dot(a: np.ndarray, b: np.ndarray) -> float:
        round_ctx["reduces"] += 1
        return float(reduce_dots(workers, {"a": a, "b": b}, [("a", "b")])[0])

    dot = sharded_dot if sampler == "dhamcmc" else np.dot
    state = init_chain_state(
        model,
        serial_cfg,
        batch_provider=provider,
        rng_noise=_ShardedNoise(workers),
        rng_batch=rng_batch,
        dot=dot,
    )

    # Payload multiplier for a migrated H block: the block itself, plus the
    # matching diagonal-preconditioner slice for dpsgld.
    payload_mult = 2 if sampler == "dpsgld" else 1

    test_pairs = None
    test_values = None
    rmse_curve: list[tuple[int, float]] = []
    if test is not None:
        test = list(test)
        test_pairs = [(t[0], t[1]) for t in test]
        test_values = np.array([t[2] for t in test], dtype=float)
        pred_num = np.zeros(len(test))
        pred_den = 0.0

    samples = np.empty((cfg.n_steps if keep_samples else 0, model.dim))
    eps = np.empty(cfg.n_steps)
    for r in range(cfg.n_steps):
        round_ctx["round"] = r
        round_ctx["reduces"] = 0
        eps[r] = cfg.schedule(state.t + 1)
        theta = _step(state, model, serial_cfg)
        if keep_samples:
            samples[r] = theta
        for w in workers:
            cells = plan.block_entries[
                (w.worker_id, (w.worker_id + round_ctx["subset"]) % p)
            ].size
            moved = round_ctx["migrated_cols"][w.worker_id]
            nbytes = bytes_per_float * (
                moved * k * payload_mult + round_ctx["reduces"]
            )
            telemetry.append((r, round_ctx["subset"], w.worker_id, int(cells), int(nbytes)))
        if test is not None and r >= cfg.burn_in:
            e = eps[r]
            pred_num += e * model.mf_predict(theta, test_pairs)
            pred_den += e
            if rmse_every is not None and (r + 1) % rmse_every == 0:
                diff = pred_num / pred_den - test_values
                rmse_curve.append((r + 1, float(np.sqrt(np.mean(diff * diff)))))

    meta = {
        "sampler": sampler,
        "seed": cfg.seed,
        "config": cfg,
        "n_workers": p,
        "telemetry": telemetry,
        "pairs_accepted": state.pairs_accepted,
        "pairs_rejected": state.pairs_rejected,
        "lambda_escalations": state.lambda_escalations,
    }
    if test is not None:
        final_missing = rmse_every is None or cfg.n_steps % rmse_every != 0
        if final_missing and pred_den > 0:
            diff = pred_num / pred_den - test_values
            rmse_curve.append((cfg.n_steps, float(np.sqrt(np.mean(diff * diff)))))
        meta["rmse_curve"] = rmse_curve
    return Trace(
        samples=samples,
        eps=eps if keep_samples else np.empty(0),
        burn_in=min(cfg.burn_in, samples.shape[0]),
        meta=meta,
    )
