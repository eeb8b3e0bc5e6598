"""Empirical checks of the convergence and robustness bounds on quadratic runs.

The constants L = mu = 1, the heterogeneity theta and the minibatch noise
sigma are exact for the quadratic family. G is measured a posteriori as the
largest honest local-gradient norm met along the realized trajectories,
including the intermediate local iterates (replayed with the same seeds).
Expectations are means over trainer seeds; the data set stays fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import theory
from .client import client_rng, local_update_run, lr_value
from .config import ExperimentConfig, QuadraticData
from .experiment import build_problem
from .models import init_params, minibatch_variance
from .server import RoundTrace, run_training

STOCHASTIC_SEEDS = 30
HORIZONS = (10, 50, 200)
LEMMA3_SLACK = 1e-9


class VerifyError(ValueError):
    pass


@dataclass(frozen=True)
class Check:
    name: str
    lhs: float
    rhs: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"{status} {self.name}: lhs={self.lhs:.6g} rhs={self.rhs:.6g}{extra}"


@dataclass(frozen=True)
class VerifyReport:
    checks: list[Check]
    constants: theory.TheoryConstants
    seeds: list[int]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass
class _SeedRun:
    ws: list[np.ndarray]
    zs: list[np.ndarray]
    lemma3_worst: float  # max over rounds of ||z||^2 / bound
    g_max: float


def _replay_g_max(config, trainer, ds, trace: RoundTrace, honest_means) -> float:
    """Largest ||grad F_m|| over honest clients' local iterates in one round."""
    spec = config.model_spec()
    g_max = 0.0
    for m in np.flatnonzero(trace.honest_mask):
        shard = ds.shards[m]
        steps = []
        local_update_run(
            spec, trace.w, shard, trainer.local_steps, trainer.local_lr,
            min(trainer.batch_size, len(shard)), trace.t, client_rng(trainer.seed, m, trace.t), m, steps,
        )
        w = trace.w.copy()
        for g, eta in steps:
            g_max = max(g_max, float(np.linalg.norm(w - honest_means[m])))
            w = w - eta * g
    return g_max


def _run_one(config, ds, trainer, honest_means, epsilon) -> _SeedRun:
    ws, zs = [], []
    state = {"lemma3": 0.0, "g": 0.0}

    def observe(trace: RoundTrace):
        ws.append(trace.w.copy())
        zs.append(trace.aggregate.copy())
        z2 = float(trace.aggregate @ trace.aggregate)
        honest = trace.honest_mask
        alphas = trace.weights[honest]
        uploads = trace.points[honest]
        bound = theory.median_norm_bound(float(alphas.sum()), alphas, np.sum(uploads**2, axis=1), epsilon)
        ratio = z2 / bound if bound > 0 else (0.0 if z2 == 0 else np.inf)
        state["lemma3"] = max(state["lemma3"], ratio)
        state["g"] = max(state["g"], _replay_g_max(config, trainer, ds, trace, honest_means))

    run_training(trainer, ds, config.model_spec(), observer=observe)
    return _SeedRun(ws, zs, state["lemma3"], state["g"])


def verify_bounds(config: ExperimentConfig, horizons=HORIZONS, seed_count: int | None = None) -> VerifyReport:
    """Run the quadratic instance and compare measured quantities with every bound."""
    if not isinstance(config.dataset, QuadraticData):
        raise VerifyError("bound verification needs dataset.kind 'quadratic'")
    agg = config.trainer.aggregator
    if agg.kind != "geomed":
        raise VerifyError("bound verification needs the geometric-median aggregator")
    spec = config.model_spec()
    base_seed = config.seeds[0]
    problem = build_problem(config, base_seed)
    ds = problem.data
    trainer0 = config.trainer_config(base_seed)
    attacked = config.trainer.attack.kind != "none"
    honest_idx = ds.honest_indices if attacked else list(range(ds.client_count))
    weights = ds.weights
    alphas = weights[honest_idx]
    c_alpha = float(alphas.sum())
    shards = [ds.shards[m] for m in honest_idx]

    # exact quadratic constants
    pooled_opt = np.concatenate([s.x for s in shards]).mean(axis=0)
    honest_means = {m: ds.shards[m].x.mean(axis=0) for m in honest_idx}
    theta = max(float(np.linalg.norm(honest_means[m] - pooled_opt)) for m in honest_idx)
    batch = trainer0.batch_size
    w_probe = np.zeros(spec.param_dim)
    sigma2 = max(minibatch_variance(spec, w_probe, s, min(batch, len(s))) for s in shards)
    stochastic = sigma2 > 0

    if seed_count is None:
        seed_count = max(STOCHASTIC_SEEDS, len(config.seeds)) if stochastic else 1
    seeds = list(range(base_seed, base_seed + seed_count))
    runs = [_run_one(config, ds, replace(trainer0, seed=s), honest_means, agg.epsilon) for s in seeds]

    consts = theory.TheoryConstants(
        L=1.0, mu=1.0, sigma=float(np.sqrt(sigma2)), theta=theta,
        G=max(r.g_max for r in runs), epsilon=agg.epsilon, c_alpha=c_alpha, empirical=True,
    )
    T = trainer0.rounds
    K = trainer0.local_steps
    etas = np.array([lr_value(trainer0.global_lr, t) for t in range(1, T + 1)])
    local_rates = [[lr_value(trainer0.local_lr, t, k) for k in range(1, K + 1)] for t in range(1, T + 1)]
    deltas = np.array([theory.delta_t(consts, local_rates[t], K, alphas) for t in range(T)])

    checks = []
    worst3 = max(r.lemma3_worst for r in runs)
    checks.append(Check("lemma3 every round", worst3, 1.0 + LEMMA3_SLACK, worst3 <= 1.0 + LEMMA3_SLACK,
                        "max over rounds and seeds of ||z||^2 / bound"))

    zs = np.array([r.zs for r in runs])  # (seeds, T, p)
    ws = np.array([r.ws for r in runs])
    full_grads = ws - pooled_opt  # gradient of the honest global loss at w^t
    lemma1, lemma2, _ = theory.lemma_bounds(consts, alphas, np.zeros_like(alphas))
    mean_z_sq = np.mean(np.sum(zs**2, axis=2), axis=0)
    checks.append(Check("lemma2 mean over seeds", float(mean_z_sq.max()), lemma2, bool(mean_z_sq.max() <= lemma2),
                        "max over rounds of mean ||z||^2"))
    # lemma1 = Delta^t + noise; the returned value used delta = 0
    mean_err = np.mean(np.sum((zs - full_grads) ** 2, axis=2), axis=0)
    ratio1 = mean_err / (deltas + lemma1)
    worst = int(np.argmax(ratio1))
    checks.append(Check("lemma1 mean over seeds", float(mean_err[worst]), float(deltas[worst] + lemma1),
                        bool(ratio1[worst] <= 1.0), f"tightest round t={worst + 1}"))

    w1 = init_params(spec, base_seed)
    w1_gap = float(np.sum((w1 - pooled_opt) ** 2))
    grad_sq = np.mean(np.sum(full_grads**2, axis=2), axis=0)
    mean_gap = 0.5 * grad_sq  # F(w) - F(w*) = 0.5 ||w - w*||^2
    for h in horizons:
        if h > T:
            continue
        f_drop = float(mean_gap[0] - mean_gap[h - 1])
        t1 = theory.theorem1_rhs(consts, etas[:h], deltas[:h], f_drop=f_drop)
        lhs = t1.lhs(grad_sq[:h])
        checks.append(Check(f"theorem1 T={h}", lhs, t1.rhs, lhs <= t1.rhs))
        lams = etas[:h] * consts.mu
        if np.any(lams <= 0) or np.any(lams >= 1):
            checks.append(Check(f"theorem2 T={h}", float("nan"), float("nan"), False, "lambda = mu*eta outside (0, 1)"))
            continue
        rhs2 = theory.theorem2_rhs(consts, etas[:h], lams, deltas[:h], w1_gap)
        checks.append(Check(f"theorem2 T={h}", float(mean_gap[h - 1]), rhs2, bool(mean_gap[h - 1] <= rhs2)))
    return VerifyReport(checks, consts, seeds)
