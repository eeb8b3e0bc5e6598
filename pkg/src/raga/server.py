"""The RAGA training loop: local updates, attack injection, robust aggregation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import aggregation
from .attacks import AttackKind, NoAttack, forge
from .client import ClientUpdate, LrSchedule, client_rng, local_update_run, lr_value
from .data import Samples, ShardedDataset
from .models import ModelSpec, accuracy, init_params, loss


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class GeometricMedian:
    epsilon: float = 1e-5
    max_iters: int = aggregation.DEFAULT_MAX_ITERS

    def __post_init__(self):
        if not self.epsilon > 0:
            raise TrainerError("geometric median epsilon must be positive")


@dataclass(frozen=True)
class Mean:
    pass


@dataclass(frozen=True)
class CoordinateMedian:
    pass


@dataclass(frozen=True)
class TrimmedMean:
    fraction: float = 0.1

    def __post_init__(self):
        if not 0 <= self.fraction < 0.5:
            raise TrainerError("trim fraction must lie in [0, 0.5)")


Aggregator = Union[GeometricMedian, Mean, CoordinateMedian, TrimmedMean]


@dataclass(frozen=True)
class TrainerConfig:
    aggregator: Aggregator = field(default_factory=GeometricMedian)
    rounds: int = 500
    local_steps: int = 3
    batch_size: int = 32
    global_lr: LrSchedule = field(default_factory=LrSchedule)
    local_lr: LrSchedule = field(default_factory=LrSchedule)
    attack: AttackKind = field(default_factory=NoAttack)
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise TrainerError("rounds must be at least 1")
        if self.local_steps < 1:
            raise TrainerError("local_steps must be at least 1")
        if self.batch_size < 1:
            raise TrainerError("batch_size must be at least 1")
        if self.eval_every < 1:
            raise TrainerError("eval_every must be at least 1")


@dataclass
class RoundRecord:
    t: int
    train_loss: float
    test_loss: float | None
    test_accuracy: float | None
    grad_proxy_norm: float
    gap_to_opt: float | None = None
    weiszfeld_iters: int | None = None
    # False when the median hit its iteration cap before the stopping rule fired
    certified: bool = True
    wall_ms: float = 0.0


@dataclass(frozen=True)
class RoundTrace:
    """Everything the server saw in one round, handed to observers."""

    t: int
    w: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    honest_mask: np.ndarray
    aggregate: np.ndarray
    step_size: float


def aggregate(agg: Aggregator, points, weights):
    """Apply ``agg``; returns ``(vector, GeomedResult or None)``."""
    if isinstance(agg, GeometricMedian):
        res = aggregation.geometric_median(points, weights, agg.epsilon, agg.max_iters)
        return res.point, res
    if isinstance(agg, Mean):
        return aggregation.weighted_mean(points, weights), None
    if isinstance(agg, CoordinateMedian):
        return aggregation.coordinate_median(points, weights), None
    if isinstance(agg, TrimmedMean):
        return aggregation.trimmed_mean(points, weights, agg.fraction), None
    raise TrainerError(f"unknown aggregator {agg!r}")


def evaluate(spec: ModelSpec, w: np.ndarray, test_set: Samples) -> tuple[float, float | None]:
    """Mean loss and, for classifiers, argmax accuracy on ``test_set``."""
    if len(test_set) == 0:
        raise TrainerError("test set is empty")
    with np.errstate(all="ignore"):
        value = loss(spec, w, test_set)
        acc = accuracy(spec, w, test_set) if spec.is_classifier else None
    return value, acc


@dataclass
class Evaluator:
    """Caches the pooled honest data (and the quadratic optimum) for a run."""

    spec: ModelSpec
    train: Samples
    test_set: Samples | None = None
    optimum: np.ndarray | None = None

    @classmethod
    def for_dataset(cls, spec: ModelSpec, ds: ShardedDataset, test_set: Samples | None = None) -> Evaluator:
        train = ds.pooled(honest_only=True)
        optimum = train.x.mean(axis=0) if spec.kind == "quadratic" else None
        return cls(spec, train, test_set, optimum)

    def gap(self, w: np.ndarray) -> float | None:
        if self.optimum is None:
            return None
        # F(w) - F(w*) = 0.5 ||w - w*||^2 exactly for the quadratic family
        r = w - self.optimum
        return float(0.5 * r @ r)


def _honest_uploads(config, ds, spec, w, t, honest) -> list[ClientUpdate]:
    batch = config.batch_size
    return [
        local_update_run(
            spec, w, ds.shards[m], config.local_steps, config.local_lr,
            min(batch, len(ds.shards[m])), t, client_rng(config.seed, m, t), client_index=m,
        )
        for m in honest
    ]


def run_round(
    w: np.ndarray,
    config: TrainerConfig,
    ds: ShardedDataset,
    spec: ModelSpec,
    t: int,
    evaluator: Evaluator | None = None,
    observer: Callable[[RoundTrace], None] | None = None,
    evaluate_test: bool = True,
) -> tuple[np.ndarray, RoundRecord]:
    """One round: honest local runs, forged uploads, aggregation, global step.

    Minibatches larger than a shard are clipped to the shard size. With
    NoAttack, clients marked Byzantine behave honestly.
    """
    start = time.perf_counter()
    if w.shape != (spec.param_dim,):
        raise TrainerError(f"parameter vector has shape {w.shape}, expected ({spec.param_dim},)")
    evaluator = evaluator or Evaluator.for_dataset(spec, ds)
    byzantine = ds.byzantine_mask.copy()
    if isinstance(config.attack, NoAttack):
        byzantine[:] = False
    honest = [m for m in range(ds.client_count) if not byzantine[m]]
    updates = _honest_uploads(config, ds, spec, w, t, honest)

    points = np.empty((ds.client_count, spec.param_dim))
    for u in updates:
        points[u.client_index] = u.vector
    attack_rng = np.random.default_rng(np.random.SeedSequence([config.seed, t], spawn_key=(1,)))
    forged = forge(config.attack, updates, int(byzantine.sum()), spec.param_dim, attack_rng)
    for m, vec in zip(np.flatnonzero(byzantine), forged):
        points[m] = vec

    weights = ds.weights
    with np.errstate(all="ignore"):
        z, med = aggregate(config.aggregator, points, weights)
        eta = lr_value(config.global_lr, t, 1)
        w_next = w - eta * z
    if observer is not None:
        observer(RoundTrace(t, w, points, weights, ~byzantine, z, eta))

    with np.errstate(all="ignore"):
        train_loss = loss(spec, w_next, evaluator.train)
    test_loss = test_acc = None
    if evaluate_test and evaluator.test_set is not None:
        test_loss, test_acc = evaluate(spec, w_next, evaluator.test_set)
    record = RoundRecord(
        t=t,
        train_loss=train_loss,
        test_loss=test_loss,
        test_accuracy=test_acc,
        grad_proxy_norm=float(np.linalg.norm(z)),
        gap_to_opt=evaluator.gap(w_next),
        weiszfeld_iters=None if med is None else med.iterations,
        certified=True if med is None else med.certified,
        wall_ms=(time.perf_counter() - start) * 1000.0,
    )
    return w_next, record


def run_training(
    config: TrainerConfig,
    ds: ShardedDataset,
    spec: ModelSpec,
    test_set: Samples | None = None,
    w1: np.ndarray | None = None,
    observer: Callable[[RoundTrace], None] | None = None,
) -> tuple[list[RoundRecord], np.ndarray]:
    """Run ``config.rounds`` rounds from ``w1`` (model init by default).

    Record ``t`` describes the model after the round-``t`` update. Test
    metrics are computed every ``eval_every`` rounds and on the last round.
    """
    w = init_params(spec, config.seed) if w1 is None else np.array(w1, dtype=float, copy=True)
    evaluator = Evaluator.for_dataset(spec, ds, test_set)
    records = []
    for t in range(1, config.rounds + 1):
        due = t % config.eval_every == 0 or t == config.rounds
        w, rec = run_round(w, config, ds, spec, t, evaluator, observer, evaluate_test=due)
        records.append(rec)
    return records, w
