"""Loss functions and hand-derived gradients for the three problem families.

Quadratic: ``f(w, s) = 0.5 * ||w - s||^2`` (labels ignored, ``L = mu = 1``).
Logistic: softmax regression, parameters laid out as a ``(d + 1, C)`` matrix
with the bias row last. Mlp: one tanh hidden layer, ``W1`` of shape
``(d + 1, h)`` followed by ``W2`` of shape ``(h + 1, C)``, both flattened in
that order. Bias features are appended internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import Samples
from .theory import TheoryConstants

ModelKind = Literal["quadratic", "logistic", "mlp"]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_dim: int
    class_count: int = 0
    hidden_dim: int = 0
    activation: Literal["tanh"] = "tanh"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ModelError("input_dim must be positive")
        if self.kind in ("logistic", "mlp") and self.class_count < 2:
            raise ModelError(f"{self.kind} needs class_count >= 2")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ModelError("mlp needs hidden_dim >= 1")
        if self.kind not in ("quadratic", "logistic", "mlp"):
            raise ModelError(f"unknown model kind {self.kind!r}")

    @property
    def param_dim(self) -> int:
        d, c, h = self.input_dim, self.class_count, self.hidden_dim
        if self.kind == "quadratic":
            return d
        if self.kind == "logistic":
            return (d + 1) * c
        return (d + 1) * h + (h + 1) * c

    @property
    def is_classifier(self) -> bool:
        return self.kind != "quadratic"


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: int
    step: float


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    if spec.kind != "mlp":
        return np.zeros(spec.param_dim)
    rng = np.random.default_rng(seed)
    d, h, c = spec.input_dim, spec.hidden_dim, spec.class_count
    w1 = rng.uniform(-1, 1, size=(d + 1, h)) / np.sqrt(d)
    w2 = rng.uniform(-1, 1, size=(h + 1, c)) / np.sqrt(h)
    return np.concatenate([w1.ravel(), w2.ravel()])


def _with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _unpack_mlp(spec: ModelSpec, w: np.ndarray):
    d, h, c = spec.input_dim, spec.hidden_dim, spec.class_count
    n1 = (d + 1) * h
    return w[:n1].reshape(d + 1, h), w[n1:].reshape(h + 1, c)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def logits(spec: ModelSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    if spec.kind == "logistic":
        return _with_bias(x) @ w.reshape(spec.input_dim + 1, spec.class_count)
    if spec.kind == "mlp":
        w1, w2 = _unpack_mlp(spec, w)
        return _with_bias(np.tanh(_with_bias(x) @ w1)) @ w2
    raise ModelError("quadratic model has no logits")


def _check_batch(batch: Samples):
    if len(batch) == 0:
        raise ModelError("batch must be non-empty")


def _loss_value(spec: ModelSpec, w: np.ndarray, x: np.ndarray, y: np.ndarray):
    # keeps the dtype of its inputs, so it also runs in extended precision
    if spec.kind == "quadratic":
        r = w - x
        return 0.5 * np.mean(np.sum(r * r, axis=1))
    logp = _log_softmax(logits(spec, w, x))
    return -np.mean(logp[np.arange(len(y)), y])


def loss(spec: ModelSpec, w: np.ndarray, batch: Samples) -> float:
    """Mean per-sample loss over ``batch``."""
    _check_batch(batch)
    return float(_loss_value(spec, w, batch.x, batch.y))


def gradient(spec: ModelSpec, w: np.ndarray, batch: Samples) -> np.ndarray:
    """Exact gradient of :func:`loss` with respect to ``w``."""
    _check_batch(batch)
    n = len(batch)
    if spec.kind == "quadratic":
        return w - batch.x.mean(axis=0)
    xb = _with_bias(batch.x)
    if spec.kind == "logistic":
        z = xb @ w.reshape(spec.input_dim + 1, spec.class_count)
        delta = np.exp(_log_softmax(z))
        delta[np.arange(n), batch.y] -= 1.0
        return (xb.T @ delta / n).ravel()
    w1, w2 = _unpack_mlp(spec, w)
    a = np.tanh(xb @ w1)
    ab = _with_bias(a)
    delta = np.exp(_log_softmax(ab @ w2))
    delta[np.arange(n), batch.y] -= 1.0
    delta /= n
    g2 = ab.T @ delta
    back = (delta @ w2[:-1].T) * (1.0 - a * a)
    g1 = xb.T @ back
    return np.concatenate([g1.ravel(), g2.ravel()])


def per_sample_gradients(spec: ModelSpec, w: np.ndarray, batch: Samples) -> np.ndarray:
    """``(n, p)`` matrix of single-sample gradients."""
    _check_batch(batch)
    if spec.kind == "quadratic":
        return w - batch.x
    return np.stack([gradient(spec, w, batch.subset([i])) for i in range(len(batch))])


def stochastic_gradient(spec, w, shard: Samples, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Gradient on ``batch_size`` samples drawn uniformly without replacement."""
    if len(shard) == 0:
        raise ModelError("cannot sample from an empty shard")
    if not 1 <= batch_size <= len(shard):
        raise ModelError(f"batch_size {batch_size} outside [1, {len(shard)}]")
    if batch_size == len(shard):
        return gradient(spec, w, shard)
    idx = np.sort(rng.choice(len(shard), size=batch_size, replace=False))
    return gradient(spec, w, shard.subset(idx))


def predict(spec: ModelSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    # np.argmax breaks ties toward the lowest class index
    return np.argmax(logits(spec, w, x), axis=1)


def accuracy(spec: ModelSpec, w: np.ndarray, batch: Samples) -> float:
    return float(np.mean(predict(spec, w, batch.x) == batch.y))


def finite_diff_check(spec: ModelSpec, w: np.ndarray, batch: Samples, step: float) -> GradCheckReport:
    if step <= 0:
        raise ModelError("step must be positive")
    g = gradient(spec, w, batch)
    est = np.empty_like(g)
    # differences of nearly equal losses are taken in extended precision so
    # that cancellation does not swamp small gradient components
    wx = np.asarray(w, dtype=np.longdouble)
    xx = np.asarray(batch.x, dtype=np.longdouble)
    e = np.zeros_like(wx)
    for i in range(len(w)):
        e[i] = step
        diff = _loss_value(spec, wx + e, xx, batch.y) - _loss_value(spec, wx - e, xx, batch.y)
        est[i] = float(diff / (2 * np.longdouble(step)))
        e[i] = 0.0
    rel = np.abs(g - est) / np.maximum(1e-12, np.abs(g) + np.abs(est))
    worst = int(np.argmax(rel))
    return GradCheckReport(float(rel[worst]), worst, step)


def measure_constants(
    spec: ModelSpec,
    shards,
    probe_points,
    batch_size: int | None = None,
    epsilon: float = 0.0,
    c_alpha: float = 1.0,
) -> TheoryConstants:
    """Empirical lower estimates of the smoothness/noise/heterogeneity constants.

    ``shards`` should be the honest shards; the global loss is their
    size-weighted average. ``sigma`` is the standard deviation of a
    ``batch_size`` minibatch gradient drawn without replacement (full shard
    when ``batch_size`` is None, which gives zero).
    """
    probes = [np.asarray(p, dtype=float) for p in probe_points]
    if len(probes) < 2:
        raise ModelError("measure_constants needs at least two probe points")
    everything = Samples.concat(shards)

    def full_grad(w):
        return gradient(spec, w, everything)

    if spec.kind == "quadratic":
        lip, mu = 1.0, 1.0
    else:
        mu = None
        grads = [full_grad(w) for w in probes]
        lip = 0.0
        for i in range(len(probes)):
            for j in range(i + 1, len(probes)):
                dw = np.linalg.norm(probes[i] - probes[j])
                if dw > 0:
                    lip = max(lip, np.linalg.norm(grads[i] - grads[j]) / dw)

    sigma2 = theta = g_max = 0.0
    for w in probes:
        g = full_grad(w)
        for shard in shards:
            gm = gradient(spec, w, shard)
            theta = max(theta, float(np.linalg.norm(gm - g)))
            g_max = max(g_max, float(np.linalg.norm(gm)))
            sigma2 = max(sigma2, minibatch_variance(spec, w, shard, batch_size))
    return TheoryConstants(
        L=lip, mu=mu, sigma=float(np.sqrt(sigma2)), theta=theta, G=g_max,
        epsilon=epsilon, c_alpha=c_alpha, empirical=True,
    )


def minibatch_variance(spec: ModelSpec, w: np.ndarray, shard: Samples, batch_size: int | None) -> float:
    """Total variance of the minibatch gradient under sampling without replacement."""
    n = len(shard)
    b = n if batch_size is None else min(batch_size, n)
    if n < 2 or b == n:
        return 0.0
    per = per_sample_gradients(spec, w, shard)
    centred = per - per.mean(axis=0)
    pop_var = float(np.sum(centred * centred)) / n
    return pop_var / b * (n - b) / (n - 1)


# (finite-difference step, largest accepted relative error) per family
GRADCHECK_THRESHOLDS = {
    "quadratic": (1e-6, 1e-8),
    "logistic": (1e-6, 1e-5),
    "mlp": (1e-5, 1e-4),
}


def gradcheck_suite(kind: ModelKind, cases: int = 100, seed: int = 0) -> list[GradCheckReport]:
    """Finite-difference reports for ``cases`` random (w, batch) pairs of one family."""
    step, _ = GRADCHECK_THRESHOLDS[kind]
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(cases):
        d = int(rng.integers(2, 7))
        c = int(rng.integers(2, 5))
        h = int(rng.integers(2, 6))
        spec = ModelSpec(kind, d, 0 if kind == "quadratic" else c, h if kind == "mlp" else 0)
        n = int(rng.integers(1, 9))
        batch = Samples(rng.standard_normal((n, d)), rng.integers(0, max(c, 1), size=n) if spec.is_classifier else np.zeros(n, dtype=int))
        w = rng.standard_normal(spec.param_dim)
        reports.append(finite_diff_check(spec, w, batch, step))
    return reports
