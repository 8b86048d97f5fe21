"""Euclidean NMF by multiplicative updates.

Factorizes a non-negative (L x N) matrix M as W @ H with W (L x R) and
H (R x N), minimizing 0.5 * ||M - WH||_F^2 via

    H <- H * (W^T M) / (W^T W H + delta)
    W <- W * (M H^T) / (W H H^T + delta)

The small ``delta`` in each denominator only enlarges the diagonal
majorizer, so the objective stays non-increasing.
"""

from dataclasses import dataclass, field

import numpy as np


class DegenerateInputError(ValueError):
    pass


@dataclass
class NmfOptions:
    components: int = 1
    max_iters: int = 500
    rel_tol: float = 1e-5
    seed: int = 0
    delta: float = 1e-12

    def validate(self):
        if self.components < 1:
            raise ValueError("components must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")


@dataclass
class NmfFactors:
    W: np.ndarray
    H: np.ndarray
    final_error: float
    iterations_run: int
    objective: list = field(default_factory=list)

    @property
    def R(self):
        return self.W.shape[1]


def _check_input(M):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("NMF input must be a matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("NMF input has non-finite entries")
    if np.any(M < 0):
        raise ValueError("NMF input has negative entries")
    if not np.any(M > 0):
        raise DegenerateInputError("NMF input is identically zero")
    return M


def reconstruction_error(M, W, H):
    """Frobenius norm ||M - WH||."""
    M, W, H = (np.asarray(a, dtype=np.float64) for a in (M, W, H))
    if W.shape[0] != M.shape[0] or H.shape[1] != M.shape[1] or W.shape[1] != H.shape[0]:
        raise ValueError(f"shape mismatch: M {M.shape}, W {W.shape}, H {H.shape}")
    return float(np.linalg.norm(M - W @ H))


def init_factors(M, components, seed):
    """Entries uniform on (0, 1], scaled by sqrt(mean(M) / R)."""
    rng = np.random.default_rng(seed)
    L, N = M.shape
    scale = np.sqrt(M.mean() / components)
    W = (1.0 - rng.random((L, components))) * scale
    H = (1.0 - rng.random((components, N))) * scale
    return W, H


def factorize(M, opts=None, track=False):
    """Run multiplicative updates until the improvement drops below rel_tol or max_iters is hit.

    With ``track=True`` the objective after every iteration (index 0 is the
    initial value) is kept in ``NmfFactors.objective``.
    """
    opts = opts or NmfOptions()
    opts.validate()
    M = _check_input(M)
    W, H = init_factors(M, opts.components, opts.seed)
    delta = opts.delta

    def objective(W, H):
        r = M - W @ H
        return 0.5 * float(np.vdot(r, r))

    prev = objective(W, H)
    history = [prev] if track else []
    it = 0
    while it < opts.max_iters:
        it += 1
        H *= (W.T @ M) / (W.T @ W @ H + delta)
        W *= (M @ H.T) / (W @ (H @ H.T) + delta)
        cur = objective(W, H)
        if track:
            history.append(cur)
        if cur == 0.0 or (prev - cur) < opts.rel_tol * prev:
            prev = cur
            break
        prev = cur
    return NmfFactors(W, H, float(np.sqrt(2.0 * prev)), it, history)
