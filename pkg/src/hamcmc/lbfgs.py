"""Limited-memory BFGS machinery for dense inverse-Hessian metrics.

Stores damped (s, y) displacement / gradient-difference pairs and applies the
resulting inverse-Hessian approximation H to vectors without ever
materializing a D x D matrix:

* ``apply_h``    -- H v via the two-loop recursion, O(M D).
* ``apply_sqrt`` -- S z with S S^T = H via a rank-one factored recursion,
  O(M^2 D); used to draw Gaussian noise with covariance proportional to H.
* ``dense_h``    -- literal dense evaluation of the same recursion, kept as a
  test oracle for the vector-only paths.

All inner products are routed through a pluggable ``dot`` so a distributed
runner can substitute a sharded reduce; the default is ``numpy.dot``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class LbfgsError(ValueError):
    """Invalid input to the limited-memory machinery."""


class DegenerateMetricError(RuntimeError):
    """The factored noise recursion hit a nonpositive s^T B s scalar."""


@dataclass
class OpCounter:
    """Counts O(D)-cost vector primitives executed by an instrumented call."""

    dots: int = 0
    axpys: int = 0
    scalings: int = 0

    @property
    def vector_ops(self) -> int:
        return self.dots + self.axpys + self.scalings


@dataclass
class _Pair:
    s: np.ndarray
    y: np.ndarray          # damped: y_raw + lam * s
    y_raw: np.ndarray
    sy: float              # cached s . y


@dataclass
class LbfgsMemory:
    """FIFO store of at most ``capacity`` accepted curvature pairs.

    ``gamma`` scales the initial approximation (H with no pairs is gamma * I).
    ``lam`` is the trust-region damping added to every gradient difference at
    push time (y <- y_raw + lam * s); pairs whose damped curvature s.y falls
    below a relative floor are rejected so H stays positive definite even for
    noisy stochastic gradient differences.
    """

    dim: int
    capacity: int
    gamma: float = 1.0
    lam: float = 0.0
    curvature_floor: float = 1e-8
    dot: Callable[[np.ndarray, np.ndarray], float] = field(default=np.dot)
    pairs: list[_Pair] = field(default_factory=list)

    def __post_init__(self):
        if self.dim < 1:
            raise LbfgsError(f"dim must be positive, got {self.dim}")
        if self.capacity < 1:
            raise LbfgsError(f"capacity must be positive, got {self.capacity}")
        if self.gamma <= 0:
            raise LbfgsError(f"gamma must be positive, got {self.gamma}")
        if self.lam < 0:
            raise LbfgsError(f"lam must be nonnegative, got {self.lam}")

    def __len__(self) -> int:
        return len(self.pairs)

    def _check_dim(self, v: np.ndarray, name: str) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise LbfgsError(f"{name} has shape {v.shape}, expected ({self.dim},)")
        return v

    def push_pair(self, s: np.ndarray, y_raw: np.ndarray) -> bool:
        """Damp, curvature-check and store a pair; returns the accepted flag.

        On rejection the memory is left unchanged. The oldest pair is evicted
        once the store exceeds its capacity.
        """
        s = self._check_dim(s, "s")
        y_raw = self._check_dim(y_raw, "y_raw")
        s_norm = float(np.sqrt(self.dot(s, s)))
        if s_norm == 0.0:
            raise LbfgsError("zero displacement")
        y = y_raw + self.lam * s
        sy = float(self.dot(s, y))
        y_norm = float(np.sqrt(self.dot(y, y)))
        if not sy > self.curvature_floor * s_norm * y_norm:
            return False
        self.pairs.append(_Pair(s=s.copy(), y=y, y_raw=y_raw.copy(), sy=sy))
        if len(self.pairs) > self.capacity:
            self.pairs.pop(0)
        return True

    def redamped(self, lam: float) -> "LbfgsMemory":
        """Rebuild a memory from the stored raw pairs under a different damping.

        Used by the sampler layer to retry a step with a stiffer trust region;
        the original memory is untouched.
        """
        fresh = LbfgsMemory(
            dim=self.dim,
            capacity=self.capacity,
            gamma=self.gamma,
            lam=lam,
            curvature_floor=self.curvature_floor,
            dot=self.dot,
        )
        for pair in self.pairs:
            fresh.push_pair(pair.s, pair.y_raw)
        return fresh

    def apply_h(self, v: np.ndarray, ops: OpCounter | None = None) -> np.ndarray:
        """H v by the two-loop recursion over the stored pairs, O(M D)."""
        v = self._check_dim(v, "v")
        dot = self.dot
        q = v.copy()
        alphas = []
        for pair in reversed(self.pairs):
            alpha = dot(pair.s, q) / pair.sy
            q -= alpha * pair.y
            alphas.append(alpha)
            if ops is not None:
                ops.dots += 1
                ops.axpys += 1
        r = self.gamma * q
        if ops is not None:
            ops.scalings += 1
        for pair, alpha in zip(self.pairs, reversed(alphas)):
            beta = dot(pair.y, r) / pair.sy
            r += pair.s * (alpha - beta)
            if ops is not None:
                ops.dots += 1
                ops.axpys += 1
        return r

    def _sqrt_factors(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Rank-one factors (p, q) with S = (I - p_M q_M^T)...(I - p_1 q_1^T) sqrt(gamma) I.

        Each level needs B s for the direct-Hessian factor C (B = C C^T,
        C built from companion rank-one factors (u, v)); B s is obtained by
        applying the accumulated C factors twice rather than forming B.
        """
        dot = self.dot
        inv_sqrt_gamma = 1.0 / np.sqrt(self.gamma)
        pq: list[tuple[np.ndarray, np.ndarray]] = []
        uv: list[tuple[np.ndarray, np.ndarray]] = []
        for pair in self.pairs:
            # w = C^T s, applied factor-by-factor, newest first.
            w = pair.s.copy()
            for u, v in reversed(uv):
                w -= v * dot(u, w)
            w *= inv_sqrt_gamma
            # Bs = C w.
            bs = inv_sqrt_gamma * w
            for u, v in uv:
                bs -= u * dot(v, bs)
            s_bs = float(dot(pair.s, bs))
            if not s_bs > 0.0:
                raise DegenerateMetricError(
                    f"nonpositive curvature scalar s.Bs = {s_bs!r}"
                )
            sy = pair.sy
            if not sy > 0.0:
                raise DegenerateMetricError(f"nonpositive damped curvature s.y = {sy!r}")
            p = pair.s / sy
            q = pair.y - np.sqrt(sy / s_bs) * bs
            u = np.sqrt(s_bs / sy) * pair.y + bs
            v = pair.s / s_bs
            pq.append((p, q))
            uv.append((u, v))
        return pq

    def apply_sqrt(self, z: np.ndarray) -> np.ndarray:
        """S z with S S^T = H, via the factored recursion, O(M^2 D).

        Raises DegenerateMetricError if an intermediate curvature scalar is
        nonpositive (numerically degenerate metric); callers may rebuild the
        memory with a larger damping and retry.
        """
        z = self._check_dim(z, "z")
        dot = self.dot
        r = np.sqrt(self.gamma) * z
        for p, q in self._sqrt_factors():
            r -= p * dot(q, r)
        return r

    def dense_h(self) -> np.ndarray:
        """Dense D x D evaluation of the recursion; test oracle, O(M D^2)."""
        h = self.gamma * np.eye(self.dim)
        for pair in self.pairs:
            rho = 1.0 / pair.sy
            left = np.eye(self.dim) - rho * np.outer(pair.s, pair.y)
            h = left @ h @ left.T + rho * np.outer(pair.s, pair.s)
        return h
