"""Langevin-family stochastic-gradient samplers.

Five update rules over a shared chain-state structure:

* ``sgld_step``     -- isotropic Langevin with minibatch gradients.
* ``psgld_step``    -- diagonal RMSprop-style preconditioner (correction term
  intentionally omitted; this baseline carries a permanent bias).
* ``sgrld_step``    -- constant dense metric equal to the inverse expected
  Fisher information (only for models where that matrix is available).
* ``naive_qn_step`` -- quasi-Newton metric built from the immediately
  preceding iterates, including the current base point. Kept as a bias
  demonstrator: its metric depends on the state it preconditions, so the
  missing drift-correction term is nonzero and the chain does not target
  the posterior.
* ``hamcmc_step``   -- the delayed-base quasi-Newton sampler: the step moves
  from the sample M iterations back, and the limited-memory metric is built
  only from history that excludes that base point, so the metric is constant
  with respect to the state being moved and no correction term is needed.

Each chain owns two independent seeded streams (noise, batch) derived from a
master seed, so samplers sharing a seed see identical batch sequences. Every
step consumes exactly one batch draw followed by one D-dimensional normal
draw, which keeps trajectories comparable across samplers under shared seeds.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .diagnostics import Trace
from .lbfgs import DegenerateMetricError, LbfgsMemory
from .models import Minibatch, draw_minibatch

SAMPLER_NAMES = ("sgld", "psgld", "sgrld", "naive_qn", "hamcmc")

M_MIN = 2
M_MAX = 20


class SamplerError(ValueError):
    """Invalid sampler configuration or precondition."""


class ChainAbortError(RuntimeError):
    """The chain could not recover a usable metric and was aborted."""


@dataclass(frozen=True)
class StepSchedule:
    """Deterministic map from the iteration counter t >= 1 to a step size.

    ``polynomial`` gives eps_t = (a_eps / t) ** exponent, strictly decreasing;
    ``constant`` gives eps_const (bounded but asymptotically biased).
    """

    kind: str = "polynomial"
    a_eps: float = 1.0
    exponent: float = 0.51
    eps_const: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("polynomial", "constant"):
            raise SamplerError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "polynomial" and self.a_eps <= 0:
            raise SamplerError(f"a_eps must be positive, got {self.a_eps}")
        if self.kind == "constant" and self.eps_const <= 0:
            raise SamplerError(f"eps_const must be positive, got {self.eps_const}")

    def __call__(self, t: int) -> float:
        if t < 1:
            raise SamplerError(f"schedule index starts at 1, got {t}")
        if self.kind == "constant":
            return self.eps_const
        return (self.a_eps / t) ** self.exponent

    @classmethod
    def polynomial(cls, a_eps: float, exponent: float = 0.51) -> "StepSchedule":
        return cls(kind="polynomial", a_eps=a_eps, exponent=exponent)

    @classmethod
    def constant(cls, eps: float) -> "StepSchedule":
        return cls(kind="constant", eps_const=eps)


@dataclass
class ChainConfig:
    """Everything needed to reproduce one chain."""

    sampler: str
    n_steps: int
    seed: int
    schedule: StepSchedule = field(default_factory=StepSchedule)
    burn_in: int = 0
    m: int = 3                  # quasi-Newton window; memory holds m - 1 pairs
    gamma: float = 1.0
    lam: float = 1.0            # trust-region damping y <- y + lam s
    n_omega: int = 1
    alpha: float = 0.99         # psgld moving-average rate
    lambda_p: float = 1e-5      # psgld diagonal floor
    mirror: bool = False
    theta0: np.ndarray | None = None
    record_walltime: bool = False

    def validate(self) -> None:
        if self.sampler not in SAMPLER_NAMES:
            raise SamplerError(f"unknown sampler {self.sampler!r}")
        if self.n_steps < 0:
            raise SamplerError("n_steps must be nonnegative")
        if not 0 <= self.burn_in <= max(self.n_steps, 0):
            raise SamplerError("burn_in must lie in [0, n_steps]")
        if not M_MIN <= self.m <= M_MAX:
            raise SamplerError(
                f"m must be chosen at least {M_MIN} and at most {M_MAX}, got {self.m}"
            )
        if self.gamma <= 0:
            raise SamplerError("gamma must be positive")
        if self.lam < 0:
            raise SamplerError("lam must be nonnegative")
        if self.n_omega < 1:
            raise SamplerError("n_omega must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise SamplerError("alpha must lie in [0, 1]")
        if self.lambda_p <= 0:
            raise SamplerError("lambda_p must be positive")


BatchProvider = Callable[[np.random.Generator], Minibatch]


class ChainState:
    """Mutable single-chain state: history ring, quasi-Newton memory, RNG streams.

    ``history`` keeps the last 2m - 1 samples so the delayed-base sampler can
    read its base point m iterations back while the metric memory spans the
    rest of the window.
    """

    def __init__(
        self,
        dim: int,
        cfg: ChainConfig,
        rng_noise: np.random.Generator,
        rng_batch: np.random.Generator,
        batch_provider: BatchProvider | None = None,
        n_data: int | None = None,
        dot: Callable[[np.ndarray, np.ndarray], float] = np.dot,
    ):
        self.dim = dim
        self.cfg = cfg
        self.t = 0
        self.m = cfg.m
        self.history: deque[np.ndarray] = deque(maxlen=2 * cfg.m - 1)
        self.lbfgs = LbfgsMemory(
            dim=dim, capacity=cfg.m - 1, gamma=cfg.gamma, lam=cfg.lam, dot=dot
        )
        self.rng_noise = rng_noise
        self.rng_batch = rng_batch
        self.precond_v = np.zeros(dim)
        self.last_grad_record: tuple[np.ndarray, np.ndarray] | None = None
        self.fim_inv: np.ndarray | None = None
        self.fim_sqrt: np.ndarray | None = None
        self.pairs_accepted = 0
        self.pairs_rejected = 0
        self.lambda_escalations = 0
        self._provider = batch_provider
        self._n_data = n_data

    @property
    def current(self) -> np.ndarray:
        return self.history[-1]

    def push_sample(self, theta: np.ndarray) -> None:
        self.history.append(theta)

    def draw_batch(self) -> Minibatch:
        if self._provider is not None:
            return self._provider(self.rng_batch)
        return draw_minibatch(self.rng_batch, self._n_data, self.cfg.n_omega)

    def warmed_up(self) -> bool:
        return len(self.history) == self.history.maxlen


def mirror(theta: np.ndarray) -> np.ndarray:
    """Reflect negative coordinates to their absolute values; idempotent."""
    return np.abs(theta)


def _maybe_mirror(state: ChainState, theta: np.ndarray) -> np.ndarray:
    """Post-update mirroring hook, applied before any pair or history bookkeeping."""
    return mirror(theta) if state.cfg.mirror else theta


def metric_correction_fd(h_fn, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Drift-correction vector Gamma_i = sum_j d H_ij / d theta_j by central differences.

    A preconditioned Langevin scheme whose metric H depends on the state must
    add this vector to its drift to keep the posterior invariant; it vanishes
    identically for constant metrics.
    """
    theta = np.asarray(theta, dtype=float)
    dim = theta.size
    gamma = np.zeros(dim)
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = step
        dh = (h_fn(theta + e) - h_fn(theta - e)) / (2.0 * step)
        gamma += dh[:, j]
    return gamma


def sgld_step(state: ChainState, model, schedule: StepSchedule) -> np.ndarray:
    """theta_t = theta_{t-1} - eps_t grad + N(0, 2 eps_t I)."""
    t = state.t + 1
    eps = schedule(t)
    theta_prev = state.current
    batch = state.draw_batch()
    grad = model.stoch_grad(theta_prev, batch)
    noise = state.rng_noise.normal(size=state.dim)
    theta = _maybe_mirror(state, theta_prev - eps * grad + np.sqrt(2.0 * eps) * noise)
    state.last_grad_record = (theta_prev, grad)
    state.push_sample(theta)
    state.t = t
    return theta


def psgld_step(
    state: ChainState,
    model,
    schedule: StepSchedule,
    alpha: float,
    lambda_p: float,
) -> np.ndarray:
    """Diagonal-metric step with an RMSprop-style running second moment.

    The moving average is refreshed from the mean per-datum likelihood
    gradient on the step's own batch before the metric is formed. The drift
    correction for the state-dependent diagonal is omitted on purpose, as is
    conventional for this baseline; the induced bias does not vanish.
    """
    t = state.t + 1
    eps = schedule(t)
    theta_prev = state.current
    batch = state.draw_batch()
    gbar = model.likelihood_grad_mean(theta_prev, batch)
    state.precond_v = alpha * state.precond_v + (1.0 - alpha) * gbar * gbar
    h_diag = 1.0 / (lambda_p + np.sqrt(state.precond_v))
    grad = model.stoch_grad(theta_prev, batch)
    noise = state.rng_noise.normal(size=state.dim)
    theta = _maybe_mirror(
        state, theta_prev - eps * h_diag * grad + np.sqrt(2.0 * eps * h_diag) * noise
    )
    state.push_sample(theta)
    state.t = t
    return theta


def sgrld_step(state: ChainState, model, schedule: StepSchedule) -> np.ndarray:
    """Constant dense metric equal to the inverse expected Fisher information.

    Only models exposing ``expected_fim_inverse`` qualify; the metric and its
    Cholesky factor are computed once per chain and cached. The metric being
    constant, the drift-correction vector is identically zero.
    """
    if state.fim_inv is None:
        if not hasattr(model, "expected_fim_inverse"):
            raise SamplerError(
                f"sgrld requires a model with a closed-form expected Fisher "
                f"information; {type(model).__name__} has none"
            )
        state.fim_inv = model.expected_fim_inverse()
        state.fim_sqrt = np.linalg.cholesky(state.fim_inv)
    t = state.t + 1
    eps = schedule(t)
    theta_prev = state.current
    batch = state.draw_batch()
    grad = model.stoch_grad(theta_prev, batch)
    noise = state.rng_noise.normal(size=state.dim)
    theta = _maybe_mirror(
        state,
        theta_prev - eps * (state.fim_inv @ grad) + np.sqrt(2.0 * eps) * (state.fim_sqrt @ noise),
    )
    state.push_sample(theta)
    state.t = t
    return theta


def naive_qn_step(state: ChainState, model, schedule: StepSchedule) -> np.ndarray:
    """Quasi-Newton Langevin with pairs from consecutive iterates.

    Displacements and gradient differences come from adjacent samples, with
    each gradient evaluated on its own batch, so the newest pair involves the
    current base point and the differences are cross-batch. Both properties
    make this the construction that fails to target the posterior; it exists
    for the bias-demonstration experiment. Degenerate-metric errors propagate.
    """
    t = state.t + 1
    eps = schedule(t)
    theta_prev = state.current
    batch = state.draw_batch()
    grad = model.stoch_grad(theta_prev, batch)
    if state.last_grad_record is not None:
        theta_old, grad_old = state.last_grad_record
        s = theta_prev - theta_old
        if np.any(s != 0.0):
            if state.lbfgs.push_pair(s, grad - grad_old):
                state.pairs_accepted += 1
            else:
                state.pairs_rejected += 1
    noise = state.rng_noise.normal(size=state.dim)
    xi = state.lbfgs.apply_h(grad)
    eta = state.lbfgs.apply_sqrt(noise)
    theta = _maybe_mirror(state, theta_prev - eps * xi + np.sqrt(2.0 * eps) * eta)
    state.last_grad_record = (theta_prev, grad)
    state.push_sample(theta)
    state.t = t
    return theta


def hamcmc_step(state: ChainState, model, schedule: StepSchedule) -> np.ndarray:
    """Delayed-base quasi-Newton step.

    Moves from the sample m iterations back. Both gradients entering the new
    curvature pair are evaluated on the step's own batch, so the pair measures
    curvature rather than batch noise. The metric memory never contains a pair
    involving the base point, so the metric is independent of the state being
    moved and needs no drift correction.

    If the noise factorization reports a degenerate metric, the step is
    retried with the damping doubled (memory rebuilt from raw pairs), up to
    ten times, before the chain aborts.
    """
    if not state.warmed_up():
        raise SamplerError(
            f"hamcmc needs a full history of {state.history.maxlen} samples; "
            f"have {len(state.history)}"
        )
    t = state.t + 1
    eps = schedule(t)
    base = state.history[-state.m]
    batch = state.draw_batch()
    grad_base = model.stoch_grad(base, batch)
    noise = state.rng_noise.normal(size=state.dim)

    mem = state.lbfgs
    lam_eff = state.cfg.lam
    for attempt in range(11):
        try:
            xi = mem.apply_h(grad_base)
            eta = mem.apply_sqrt(noise)
            break
        except DegenerateMetricError:
            if attempt == 10:
                raise ChainAbortError(
                    f"metric still degenerate after {attempt} damping escalations"
                )
            lam_eff = max(2.0 * lam_eff, 1e-8)
            mem = state.lbfgs.redamped(lam_eff)
            state.lambda_escalations += 1

    theta = _maybe_mirror(state, base - eps * xi + np.sqrt(2.0 * eps) * eta)
    s = theta - base
    y_raw = model.stoch_grad(theta, batch) - grad_base
    if state.lbfgs.push_pair(s, y_raw):
        state.pairs_accepted += 1
    else:
        state.pairs_rejected += 1
    state.push_sample(theta)
    state.t = t
    return theta


def _step(state: ChainState, model, cfg: ChainConfig) -> np.ndarray:
    name = cfg.sampler
    if name == "sgld":
        return sgld_step(state, model, cfg.schedule)
    if name == "psgld":
        return psgld_step(state, model, cfg.schedule, cfg.alpha, cfg.lambda_p)
    if name == "sgrld":
        return sgrld_step(state, model, cfg.schedule)
    if name == "naive_qn":
        return naive_qn_step(state, model, cfg.schedule)
    if name == "hamcmc":
        return hamcmc_step(state, model, cfg.schedule)
    raise SamplerError(f"unknown sampler {name!r}")


def warmup_steps_for(cfg: ChainConfig) -> int:
    """Number of plain-Langevin warm-up steps run before the configured sampler.

    The quasi-Newton samplers need a filled history window; 2m + 1 warm-up
    steps overfill the 2m - 1 ring slightly so the first metric step sees a
    complete window regardless of m. The memoryless samplers start cold.

    Warm-up steps are taken at the gamma-scaled step size: an empty-memory
    quasi-Newton step with metric gamma * I is exactly a plain Langevin step
    of size gamma * eps (drift and noise both), so this keeps the warm-up
    dynamics continuous with the sampler's own early steps.
    """
    if cfg.sampler in ("hamcmc", "naive_qn"):
        return 2 * cfg.m + 1
    return 0


def init_chain_state(
    model,
    cfg: ChainConfig,
    batch_provider: BatchProvider | None = None,
    rng_noise: np.random.Generator | None = None,
    rng_batch: np.random.Generator | None = None,
    dot: Callable[[np.ndarray, np.ndarray], float] = np.dot,
) -> ChainState:
    """Seeded chain state with the warm-up already applied.

    The two RNG streams derive from the master seed by fixed spawn order
    (noise first, batch second); passing explicit generators overrides that.
    """
    cfg.validate()
    if rng_noise is None or rng_batch is None:
        noise_ss, batch_ss = np.random.SeedSequence(cfg.seed).spawn(2)
        rng_noise = rng_noise or np.random.default_rng(noise_ss)
        rng_batch = rng_batch or np.random.default_rng(batch_ss)
    state = ChainState(
        dim=model.dim,
        cfg=cfg,
        rng_noise=rng_noise,
        rng_batch=rng_batch,
        batch_provider=batch_provider,
        n_data=model.n_obs,
        dot=dot,
    )
    theta0 = np.zeros(model.dim) if cfg.theta0 is None else np.asarray(cfg.theta0, dtype=float)
    if theta0.shape != (model.dim,):
        raise SamplerError(f"theta0 has shape {theta0.shape}, expected ({model.dim},)")
    state.push_sample(theta0.copy())
    n_warm = warmup_steps_for(cfg)
    if n_warm:
        warm_schedule = lambda t: cfg.gamma * cfg.schedule(t)
        for _ in range(n_warm):
            sgld_step(state, model, warm_schedule)
    return state


def run_chain(
    model,
    cfg: ChainConfig,
    batch_provider: BatchProvider | None = None,
) -> Trace:
    """Warm up, run ``cfg.n_steps`` sampler steps, and collect the trace.

    Fully deterministic for a fixed config and seed. The trace holds only the
    post-warm-up samples; the schedule clock keeps counting across warm-up so
    polynomial step sizes decay continuously.
    """
    state = init_chain_state(model, cfg, batch_provider=batch_provider)
    samples = np.empty((cfg.n_steps, model.dim))
    eps = np.empty(cfg.n_steps)
    wall = np.empty(cfg.n_steps) if cfg.record_walltime else None
    t0 = time.perf_counter()
    for i in range(cfg.n_steps):
        eps[i] = cfg.schedule(state.t + 1)
        samples[i] = _step(state, model, cfg)
        if wall is not None:
            wall[i] = time.perf_counter() - t0
    meta = {
        "sampler": cfg.sampler,
        "seed": cfg.seed,
        "config": cfg,
        "pairs_accepted": state.pairs_accepted,
        "pairs_rejected": state.pairs_rejected,
        "lambda_escalations": state.lambda_escalations,
    }
    if wall is not None:
        meta["wall_s"] = wall
    return Trace(samples=samples, eps=eps, burn_in=cfg.burn_in, meta=meta)


def replicate_configs(cfg: ChainConfig, replicates: int) -> list[ChainConfig]:
    """Independent per-replicate configs with seeds spawned from the base seed."""
    children = np.random.SeedSequence(cfg.seed).spawn(replicates)
    return [
        replace(cfg, seed=int(child.generate_state(1)[0])) for child in children
    ]
