import math

import numpy as np
import pytest

from raga.attacks import Gaussian, NoAttack, SignFlip
from raga.client import LrSchedule
from raga.data import PartitionPlan, Samples, ShardedDataset, dirichlet_partition, make_blobs, mark_byzantine
from raga.data import synthetic_quadratic
from raga.models import ModelSpec, gradient, loss
from raga.server import (
    CoordinateMedian,
    Evaluator,
    GeometricMedian,
    Mean,
    TrainerConfig,
    TrainerError,
    TrimmedMean,
    aggregate,
    evaluate,
    run_round,
    run_training,
)
from raga.theory import median_norm_bound

CONST = LrSchedule("constant", eta0=0.5)


def quad_ds(clients=5, offset=(1.0, -2.0), noise=0.0, per_shard=4, seed=0):
    return synthetic_quadratic(2, clients, per_shard, np.tile(offset, (clients, 1)), noise, seed)


def cfg(**kw):
    base = dict(aggregator=Mean(), rounds=1, local_steps=1, batch_size=10_000, global_lr=CONST, local_lr=CONST)
    base.update(kw)
    return TrainerConfig(**base)


def test_config_validation():
    with pytest.raises(TrainerError):
        TrainerConfig(rounds=0)
    with pytest.raises(TrainerError):
        GeometricMedian(epsilon=0)
    with pytest.raises(TrainerError):
        TrimmedMean(0.5)


def test_zero_uploads_keep_model():
    spec = ModelSpec("quadratic", 2)
    ds = quad_ds()
    w = np.array([1.0, -2.0])  # every shard sits exactly here
    w_next, rec = run_round(w, cfg(), ds, spec, 1)
    assert np.array_equal(w_next, w) and rec.grad_proxy_norm == 0.0


def test_single_client_mean_is_gd_step():
    spec = ModelSpec("logistic", 2, 2)
    rng = np.random.default_rng(0)
    shard = Samples(rng.standard_normal((8, 2)), rng.integers(0, 2, 8))
    ds = ShardedDataset([shard])
    w = rng.standard_normal(6)
    w_next, _ = run_round(w, cfg(), ds, spec, 1)
    assert np.array_equal(w_next, w - 0.5 * gradient(spec, w, shard))


def test_identical_shards_median_step():
    spec = ModelSpec("quadratic", 2)
    ds = quad_ds()
    w = np.array([3.0, 3.0])
    w_next, rec = run_round(w, cfg(aggregator=GeometricMedian(1e-9)), ds, spec, 1)
    gd = w - 0.5 * gradient(spec, w, ds.pooled())
    assert np.allclose(w_next, gd, atol=1e-6)
    assert rec.weiszfeld_iters is not None and rec.certified


def test_run_training_single_record_and_determinism():
    spec = ModelSpec("logistic", 2, 2)
    ds = mark_byzantine(dirichlet_partition(make_blobs(200, 2, 2, 4.0, np.random.default_rng(0)), PartitionPlan(8, 0.5, 0)), 0.25, 0)
    test = make_blobs(50, 2, 2, 4.0, np.random.default_rng(1))
    c = cfg(aggregator=GeometricMedian(), rounds=1, batch_size=4, local_steps=2, attack=Gaussian(), seed=3)
    recs, _ = run_training(c, ds, spec, test)
    assert len(recs) == 1 and recs[0].t == 1
    c = TrainerConfig(GeometricMedian(), rounds=6, local_steps=2, batch_size=4, attack=SignFlip(), seed=3)
    a, wa = run_training(c, ds, spec, test)
    b, wb = run_training(c, ds, spec, test)
    assert np.array_equal(wa, wb)
    strip = lambda rs: [(r.t, r.train_loss, r.test_loss, r.test_accuracy, r.grad_proxy_norm, r.weiszfeld_iters) for r in rs]
    assert strip(a) == strip(b)
    assert [r.t for r in a] == list(range(1, 7)) and all(r.wall_ms >= 0 for r in a)
    assert all(0 <= r.test_accuracy <= 1 for r in a)


def test_gd_contraction_closed_form():
    spec = ModelSpec("quadratic", 2)
    ds = quad_ds(clients=10, offset=(0.7, -0.3))
    c = cfg(aggregator=GeometricMedian(1e-9), rounds=8)
    recs, _ = run_training(c, ds, spec, w1=np.array([5.0, 4.0]))
    gaps = np.array([r.gap_to_opt for r in recs])
    assert np.allclose(gaps[1:] / gaps[:-1], 0.25, rtol=0, atol=1e-9)


def test_evaluate_examples():
    spec = ModelSpec("logistic", 2, 2)
    test = Samples(np.random.default_rng(0).standard_normal((10, 2)), np.array([0, 1] * 5))
    _, acc = evaluate(spec, np.zeros(6), test)
    assert acc == 0.5  # ties go to class 0
    rng = np.random.default_rng(1)
    blobs = make_blobs(400, 2, 2, 10.0, rng)
    means = np.array([blobs.x[blobs.y == c].mean(axis=0) for c in (0, 1)])
    # linear discriminant from the class means
    W = np.vstack([means.T, -0.5 * np.sum(means**2, axis=1)])
    assert evaluate(spec, W.ravel(), blobs)[1] == 1.0
    qspec = ModelSpec("quadratic", 2)
    s = Samples(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2, dtype=int))
    value, acc = evaluate(qspec, np.zeros(2), s)
    assert acc is None and value == pytest.approx(0.5)
    with pytest.raises(TrainerError):
        evaluate(qspec, np.zeros(2), Samples(np.zeros((0, 2)), np.zeros(0, dtype=int)))


def test_aggregate_dispatch():
    pts = np.array([[0.0], [1.0], [10.0]])
    w = np.full(3, 1 / 3)
    assert aggregate(Mean(), pts, w)[0][0] == pytest.approx(11 / 3)
    assert aggregate(CoordinateMedian(), pts, w)[0][0] == 1.0
    assert aggregate(TrimmedMean(0.34), pts, w)[0][0] == pytest.approx(1.0)
    vec, res = aggregate(GeometricMedian(), pts, w)
    assert res is not None and abs(vec[0] - 1.0) < 1e-4


def test_robustness_vs_mean_divergence():
    spec = ModelSpec("quadratic", 3)
    ds = mark_byzantine(synthetic_quadratic(3, 10, 5, np.zeros((10, 3)), 0.5, 0), 0.4, 0)
    attack = Gaussian(std=1e12)
    worst = 0.0

    def observe(tr):
        nonlocal worst
        h = tr.honest_mask
        bound = median_norm_bound(float(tr.weights[h].sum()), tr.weights[h], np.sum(tr.points[h] ** 2, axis=1), 1e-5)
        worst = max(worst, float(tr.aggregate @ tr.aggregate) / bound)

    c = cfg(aggregator=GeometricMedian(), rounds=10, batch_size=2, attack=attack, local_lr=LrSchedule("constant", eta0=0.1))
    run_training(c, ds, spec, w1=np.ones(3), observer=observe)
    assert worst <= 1 + 1e-9
    _, w = run_training(cfg(aggregator=Mean(), rounds=10, batch_size=2, attack=attack), ds, spec, w1=np.ones(3))
    assert np.linalg.norm(w) > 1e6


def test_byzantine_free_mean_is_full_gd():
    spec = ModelSpec("quadratic", 2)
    ds = synthetic_quadratic(2, 4, 6, np.random.default_rng(0).standard_normal((4, 2)), 1.0, 1)
    ds = ShardedDataset(ds.shards[:3] + [ds.shards[3].head(2)])  # unequal sizes
    recs, w = run_training(cfg(rounds=12), ds, spec, w1=np.zeros(2))
    pooled = ds.pooled()
    v = np.zeros(2)
    for _ in range(12):
        v = v - 0.5 * gradient(spec, v, pooled)
    assert np.allclose(w, v, rtol=0, atol=1e-12)


def test_no_attack_treats_marked_clients_as_honest():
    spec = ModelSpec("quadratic", 2)
    ds = quad_ds(clients=4)
    marked = mark_byzantine(ds, 0.25, 0)
    a, _ = run_round(np.zeros(2), cfg(), ds, spec, 1)
    b, _ = run_round(np.zeros(2), cfg(attack=NoAttack()), marked, spec, 1)
    assert np.array_equal(a, b)


def test_shape_mismatch():
    with pytest.raises(TrainerError):
        run_round(np.zeros(3), cfg(), quad_ds(), ModelSpec("quadratic", 2), 1)


def test_eval_every_skips_test_metrics():
    spec = ModelSpec("logistic", 2, 2)
    ds = dirichlet_partition(make_blobs(100, 2, 2, 4.0, np.random.default_rng(0)), PartitionPlan(4, 1.0, 0))
    test = make_blobs(20, 2, 2, 4.0, np.random.default_rng(1))
    recs, _ = run_training(cfg(rounds=5, eval_every=2, batch_size=5), ds, spec, test)
    assert [r.test_accuracy is not None for r in recs] == [False, True, False, True, True]
