"""Honest-client local training and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import Samples
from .models import ModelSpec, stochastic_gradient

ScheduleKind = Literal["constant", "poly_decay", "k_sqrt_decay", "scaled_by_t"]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class LrSchedule:
    """Step-size rule ``eta(t, k)``.

    constant:      eta0
    poly_decay:    eta0 * (t + c) ** -exponent
    k_sqrt_decay:  k_ref / (sqrt(5) * sqrt(t + 5))
    scaled_by_t:   eta0 * (t_ref * k_ref) ** -beta
    """

    kind: ScheduleKind = "k_sqrt_decay"
    eta0: float = 1.0
    c: float = 0.0
    exponent: float = 0.5
    k_ref: int = 3
    t_ref: int = 1
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "poly_decay", "k_sqrt_decay", "scaled_by_t"):
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")
        if not self.eta0 > 0:
            raise ScheduleError("eta0 must be positive")
        if self.c < 0:
            raise ScheduleError("c must be non-negative")
        if self.k_ref < 1 or self.t_ref < 1:
            raise ScheduleError("k_ref and t_ref must be at least 1")
        if self.kind == "poly_decay" and self.c == 0 and self.exponent < 0:
            raise ScheduleError("negative exponent without shift grows without bound")


def lr_value(sched: LrSchedule, t: int, k: int = 1) -> float:
    if t < 1 or k < 1:
        raise ScheduleError(f"rounds and local steps start at 1, got t={t}, k={k}")
    if sched.kind == "constant":
        return sched.eta0
    if sched.kind == "poly_decay":
        return sched.eta0 * (t + sched.c) ** (-sched.exponent)
    if sched.kind == "k_sqrt_decay":
        return sched.k_ref / (math.sqrt(5) * math.sqrt(t + 5))
    return sched.eta0 * (sched.t_ref * sched.k_ref) ** (-sched.beta)


@dataclass(frozen=True)
class ClientUpdate:
    vector: np.ndarray
    steps_taken: int
    client_index: int


def client_rng(seed: int, client_index: int, t: int) -> np.random.Generator:
    """Generator keyed on (experiment seed, client, round), independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence([seed, client_index, t]))


def local_update_run(
    spec: ModelSpec,
    w_t: np.ndarray,
    shard: Samples,
    K: int,
    sched: LrSchedule,
    batch_size: int,
    t: int,
    rng: np.random.Generator,
    client_index: int = 0,
    trace: list | None = None,
) -> ClientUpdate:
    """Run ``K`` local SGD steps from ``w_t`` and upload the mean stochastic gradient.

    When ``trace`` is a list, ``(gradient, step_size)`` pairs are appended to it.
    """
    if K < 1:
        raise ScheduleError("K must be at least 1")
    w = np.array(w_t, dtype=float, copy=True)
    total = np.zeros_like(w)
    for k in range(1, K + 1):
        g = stochastic_gradient(spec, w, shard, batch_size, rng)
        eta = lr_value(sched, t, k)
        w -= eta * g
        total += g
        if trace is not None:
            trace.append((g, eta))
    return ClientUpdate(total / K, K, client_index)
