"""Numeric evaluation of the RAGA convergence and robustness bounds.

All evaluators are plain functions of the constants and per-round sequences;
sequences are indexed from round 1 at position 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BoundDomainError(ValueError):
    """Inputs outside the region where a bound is defined."""


@dataclass(frozen=True)
class TheoryConstants:
    L: float
    sigma: float = 0.0
    theta: float = 0.0
    G: float = 0.0
    epsilon: float = 0.0
    c_alpha: float = 1.0
    mu: float | None = None
    # True when the values were measured along a trajectory (lower estimates).
    empirical: bool = False

    def __post_init__(self):
        for name in ("L", "sigma", "theta", "G", "epsilon"):
            if getattr(self, name) < 0:
                raise BoundDomainError(f"{name} must be non-negative")
        if self.mu is not None and self.mu < 0:
            raise BoundDomainError("mu must be non-negative")
        if not 0.5 < self.c_alpha <= 1.0:
            raise BoundDomainError(f"honest fraction must lie in (0.5, 1], got {self.c_alpha}")

    @property
    def robust_denominator(self) -> float:
        return (2.0 * self.c_alpha - 1.0) ** 2


@dataclass(frozen=True)
class BoundTrace:
    """Per-round ingredients of the two theorems, for reporting."""

    delta: np.ndarray
    p: np.ndarray
    gamma: np.ndarray | None
    lam: np.ndarray | None
    q: np.ndarray
    theorem1_partial: np.ndarray
    theorem2_partial: np.ndarray | None


@dataclass(frozen=True)
class Theorem1Result:
    rhs: float
    rate_weights: np.ndarray  # eta^t / sum(eta)

    def lhs(self, grad_sq_norms) -> float:
        """Rate-weighted average of ``||grad F(w^t)||^2`` over the run."""
        g = np.asarray(grad_sq_norms, dtype=float)
        if g.shape != self.rate_weights.shape:
            raise BoundDomainError("need one gradient norm per round")
        return float(self.rate_weights @ g)


def step_indicator(etas, L: float) -> np.ndarray:
    """1 where the global rate exceeds 1/L, else 0."""
    return (np.asarray(etas, dtype=float) * L > 1.0).astype(int)


def delta_t(constants: TheoryConstants, rates, K: int, honest_alphas) -> float:
    """Local-drift plus heterogeneity term of a round.

    ``rates`` holds the local step sizes, shape ``(K,)`` when shared by all
    honest clients or ``(n_honest, K)`` per client.
    """
    if K < 1:
        raise BoundDomainError("K must be at least 1")
    c = constants
    alphas = np.asarray(honest_alphas, dtype=float)
    if abs(alphas.sum() - c.c_alpha) > 1e-9:
        raise BoundDomainError(f"honest weights sum to {alphas.sum()}, expected {c.c_alpha}")
    eta = np.asarray(rates, dtype=float)
    eta = np.broadcast_to(eta, (len(alphas), K)) if eta.ndim == 1 else eta
    if eta.shape != (len(alphas), K):
        raise BoundDomainError(f"rates must have shape (K,) or ({len(alphas)}, {K})")
    # sum_{k=2}^{K} (k-1) * sum_{i=1}^{k-1} eta_i^2, per client
    prefix = np.cumsum(eta**2, axis=1)[:, :-1]
    drift = (prefix * np.arange(1, K)).sum(axis=1)
    per_client = 2 * alphas * c.L**2 * (c.G**2 + c.sigma**2) / K * drift + 2 * alphas * c.theta**2
    return float(8 * c.c_alpha / c.robust_denominator * per_client.sum())


def _as_rounds(name, values, T):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (T,):
        raise BoundDomainError(f"{name} must have length {T}")
    return arr


def theorem1_terms(constants: TheoryConstants, etas, deltas, ps, f_drop: float) -> np.ndarray:
    """The four summands of the non-convex bound, shape ``(4,)``."""
    c = constants
    eta = np.asarray(etas, dtype=float)
    T = len(eta)
    if T == 0:
        raise BoundDomainError("need at least one round")
    deltas = _as_rounds("deltas", deltas, T)
    p = step_indicator(eta, c.L) if ps is None else _as_rounds("ps", ps, T)
    total = eta.sum()
    if total <= 0:
        raise BoundDomainError("sum of global rates must be positive")
    extra = p * eta**2 * c.L - p * eta
    return np.array([
        2 * f_drop / total,
        (eta @ deltas) / total,
        np.sum(2 * (eta + extra) * c.epsilon**2) / (c.robust_denominator * total),
        np.sum(8 * c.c_alpha**2 * (eta * c.sigma**2 + extra * (c.G**2 + c.sigma**2)))
        / (c.robust_denominator * total),
    ])


def theorem1_rhs(constants: TheoryConstants, etas, deltas, ps=None, f_drop: float = 0.0) -> Theorem1Result:
    """Right-hand side of the non-convex stationarity bound.

    ``f_drop`` is the expected loss decrease ``F(w^1) - F(w^T)``; ``ps``
    defaults to :func:`step_indicator` of ``etas``.
    """
    eta = np.asarray(etas, dtype=float)
    terms = theorem1_terms(constants, eta, deltas, ps, f_drop)
    return Theorem1Result(float(terms.sum()), eta / eta.sum())


def contraction_factors(constants: TheoryConstants, etas, lambdas) -> np.ndarray:
    c = constants
    if c.mu is None:
        raise BoundDomainError("strong convexity constant mu is required")
    eta = np.asarray(etas, dtype=float)
    lam = _as_rounds("lambdas", lambdas, len(eta))
    if np.any(lam <= 0) or np.any(lam >= 1):
        raise BoundDomainError("every lambda must lie strictly between 0 and 1")
    return (1 - 2 * eta * c.mu + c.L**2 * eta**2) / (1 - lam)


def theorem2_rhs(constants: TheoryConstants, etas, lambdas, deltas, w1_gap: float) -> float:
    """Right-hand side of the strongly-convex optimality-gap bound.

    ``w1_gap`` is ``E||w^1 - w*||^2``. Round ``t``'s error term is carried
    forward by the contraction factors of rounds ``t+1 .. T-1``.
    """
    c = constants
    eta = np.asarray(etas, dtype=float)
    T = len(eta)
    if T == 0:
        raise BoundDomainError("need at least one round")
    gamma = contraction_factors(c, eta, lambdas)
    lam = np.asarray(lambdas, dtype=float)
    deltas = _as_rounds("deltas", deltas, T)
    noise = 8 * c.sigma**2 * c.c_alpha**2 / c.robust_denominator + 2 * c.epsilon**2 / c.robust_denominator
    head = c.L / 2 * w1_gap * np.prod(gamma[: T - 1])
    tail = 0.0
    for t in range(T - 1):
        # gamma^{i+1} for i = t .. T-1, with the round-T factor switched off
        carry = np.prod(gamma[t + 1 : T - 1])
        tail += eta[t] ** 2 / lam[t] * (deltas[t] + noise) * carry
    return float(head + c.L / 2 * tail)


def lemma_bounds(constants: TheoryConstants, honest_alphas, honest_sq_norms, delta: float = 0.0):
    """Bounds on ``E||z - grad F||^2``, ``E||z||^2`` and the median's squared norm.

    The third uses the squared norms of this round's honest uploads.
    """
    c = constants
    den = c.robust_denominator
    eps_term = 2 * c.epsilon**2 / den
    lemma1 = delta + 8 * c.sigma**2 * c.c_alpha**2 / den + eps_term
    lemma2 = 8 * c.c_alpha**2 * (c.G**2 + c.sigma**2) / den + eps_term
    alphas = np.asarray(honest_alphas, dtype=float)
    sq = np.asarray(honest_sq_norms, dtype=float)
    if alphas.shape != sq.shape:
        raise BoundDomainError("need one squared norm per honest weight")
    lemma3 = 8 * c.c_alpha / den * float(alphas @ sq) + eps_term
    return lemma1, lemma2, lemma3


def median_norm_bound(c_alpha: float, honest_alphas, honest_sq_norms, epsilon: float) -> float:
    """Squared-norm bound on an epsilon-approximate median of a contaminated set."""
    consts = TheoryConstants(L=0.0, epsilon=epsilon, c_alpha=c_alpha)
    return lemma_bounds(consts, honest_alphas, honest_sq_norms)[2]


def bound_trace(constants: TheoryConstants, etas, deltas, lambdas=None, f_drop: float = 0.0, w1_gap=None):
    """Per-round bound ingredients plus the theorem right-hand sides for every prefix."""
    eta = np.asarray(etas, dtype=float)
    T = len(eta)
    deltas = _as_rounds("deltas", deltas, T)
    p = step_indicator(eta, constants.L)
    q = np.ones(T, dtype=int)
    q[-1] = 0
    t1 = np.array([theorem1_rhs(constants, eta[:n], deltas[:n], p[:n], f_drop).rhs for n in range(1, T + 1)])
    gamma = lam = t2 = None
    if lambdas is not None:
        lam = _as_rounds("lambdas", lambdas, T)
        gamma = contraction_factors(constants, eta, lam)
        if w1_gap is not None:
            t2 = np.array([theorem2_rhs(constants, eta[:n], lam[:n], deltas[:n], w1_gap) for n in range(1, T + 1)])
    return BoundTrace(deltas, p, gamma, lam, q, t1, t2)
