"""Omniscient Byzantine uploads forged from the honest uploads of a round."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class NoAttack:
    pass


@dataclass(frozen=True)
class Gaussian:
    # variance 90, read as N(mean, variance)
    std: float = math.sqrt(90.0)

    def __post_init__(self):
        if not self.std > 0:
            raise AttackError("gaussian std must be positive")


@dataclass(frozen=True)
class SignFlip:
    scale: float = 3.0

    def __post_init__(self):
        if not self.scale > 0:
            raise AttackError("sign-flip scale must be positive")


@dataclass(frozen=True)
class Lie:
    coeff: float = 0.7

    def __post_init__(self):
        if not self.coeff > 0:
            raise AttackError("LIE coefficient must be positive")


AttackKind = Union[NoAttack, Gaussian, SignFlip, Lie]


def forge(kind: AttackKind, honest_updates, byz_count: int, p: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Vectors uploaded by the ``byz_count`` Byzantine clients this round.

    ``honest_updates`` may hold ClientUpdate objects or raw vectors.
    """
    if byz_count < 0:
        raise AttackError("byz_count must be non-negative")
    if isinstance(kind, NoAttack):
        return []
    if byz_count == 0:
        return []
    if isinstance(kind, Gaussian):
        return [kind.std * rng.standard_normal(p) for _ in range(byz_count)]
    honest = [np.asarray(getattr(u, "vector", u), dtype=float) for u in honest_updates]
    if not honest:
        raise AttackError(f"{type(kind).__name__} needs at least one honest upload")
    stacked = np.stack(honest)
    if isinstance(kind, SignFlip):
        forged = -kind.scale * stacked.sum(axis=0)
    elif isinstance(kind, Lie):
        # population std (ddof=0)
        forged = stacked.mean(axis=0) + kind.coeff * stacked.std(axis=0)
    else:
        raise AttackError(f"unknown attack {kind!r}")
    return [forged.copy() for _ in range(byz_count)]
