"""Datasets, non-IID sharding and Byzantine bookkeeping."""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
BYZANTINE_TOLERANCE = 0.02
_EXHAUSTIVE_LIMIT = 16
_GREEDY_RESTARTS = 64


class ConfigurationError(ValueError):
    pass


class IdxParseError(ValueError):
    """Malformed IDX payload; ``field`` names the offending header field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class BadMagicError(IdxParseError):
    pass


class TruncatedPayloadError(IdxParseError):
    pass


class CountMismatchError(IdxParseError):
    pass


@dataclass(frozen=True)
class Samples:
    """Row-aligned features ``x`` (n, d) and labels ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ConfigurationError(f"features {self.x.shape} and labels {self.y.shape} do not align")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> Samples:
        idx = np.asarray(idx, dtype=int)
        return Samples(self.x[idx], self.y[idx])

    def head(self, n: int) -> Samples:
        return Samples(self.x[:n], self.y[:n])

    @staticmethod
    def concat(parts) -> Samples:
        parts = list(parts)
        return Samples(np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]))


@dataclass(frozen=True)
class PartitionPlan:
    client_count: int
    concentration: float
    seed: int = 0

    def __post_init__(self):
        if self.client_count < 1:
            raise ConfigurationError("client_count must be at least 1")
        if not self.concentration > 0:
            raise ConfigurationError("concentration must be positive")


@dataclass(frozen=True)
class ShardedDataset:
    shards: list[Samples]
    byzantine_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.shards:
            raise ConfigurationError("at least one shard is required")
        if any(len(s) == 0 for s in self.shards):
            raise ConfigurationError("every shard must be non-empty")
        mask = self.byzantine_mask
        mask = np.zeros(len(self.shards), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != (len(self.shards),):
            raise ConfigurationError("byzantine_mask must have one entry per shard")
        object.__setattr__(self, "byzantine_mask", mask)

    @property
    def client_count(self) -> int:
        return len(self.shards)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.shards], dtype=int)

    @property
    def weights(self) -> np.ndarray:
        sizes = self.sizes
        return sizes / sizes.sum()

    @property
    def honest_weight(self) -> float:
        return float(self.weights[~self.byzantine_mask].sum())

    @property
    def honest_indices(self) -> list[int]:
        return [m for m in range(self.client_count) if not self.byzantine_mask[m]]

    def honest_shards(self) -> list[Samples]:
        return [self.shards[m] for m in self.honest_indices]

    def pooled(self, honest_only: bool = True) -> Samples:
        return Samples.concat(self.honest_shards() if honest_only else self.shards)


def _largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    raw = total * proportions
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short > 0:
        # ties go to the lower client index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(samples: Samples, plan: PartitionPlan) -> ShardedDataset:
    """Deal each class over clients with Dirichlet(phi * 1_M) proportions."""
    n, m = len(samples), plan.client_count
    if n == 0:
        raise ConfigurationError("cannot partition an empty dataset")
    if n < m:
        raise ConfigurationError(f"{n} samples cannot fill {m} non-empty shards")
    rng = np.random.default_rng(plan.seed)
    buckets: list[list[int]] = [[] for _ in range(m)]
    for label in np.unique(samples.y):
        members = np.flatnonzero(samples.y == label)
        members = members[rng.permutation(len(members))]
        props = rng.dirichlet(np.full(m, plan.concentration))
        counts = _largest_remainder(len(members), props)
        start = 0
        for client, c in enumerate(counts):
            buckets[client].extend(members[start : start + c].tolist())
            start += c
    while True:
        empty = [i for i, b in enumerate(buckets) if not b]
        if not empty:
            break
        donor = max(range(m), key=lambda i: (len(buckets[i]), -i))
        buckets[empty[0]].append(buckets[donor].pop())
    return ShardedDataset([samples.subset(sorted(b)) for b in buckets])


def _best_subset_exhaustive(weights, target, limit, rng) -> np.ndarray:
    m = len(weights)
    masks = np.array(list(itertools.product([False, True], repeat=m)), dtype=bool)
    sums = masks @ weights
    ok = sums <= limit
    dist = np.where(ok, np.abs(sums - target), np.inf)
    best = np.flatnonzero(dist <= dist.min() + 1e-12)
    return masks[best[rng.integers(len(best))]]


def _best_subset_greedy(weights, target, limit, rng) -> np.ndarray:
    best_mask, best_dist = np.zeros(len(weights), dtype=bool), abs(target)
    for _ in range(_GREEDY_RESTARTS):
        mask = np.zeros(len(weights), dtype=bool)
        total = 0.0
        for i in rng.permutation(len(weights)):
            if total >= target - 1e-9:
                break
            if total + weights[i] <= limit:
                mask[i] = True
                total += weights[i]
        if abs(total - target) < best_dist - 1e-12:
            best_mask, best_dist = mask, abs(total - target)
    return best_mask


def mark_byzantine(ds: ShardedDataset, target_fraction: float, seed: int) -> ShardedDataset:
    """Mark shards Byzantine so their total weight is as near the target as possible.

    The chosen weight never exceeds ``target_fraction + 0.02`` and always
    stays below one half. Small client counts are searched exhaustively,
    larger ones by randomized greedy passes.
    """
    if not 0.0 <= target_fraction < 0.5:
        raise ConfigurationError(f"byzantine fraction must lie in [0, 0.5), got {target_fraction}")
    w = ds.weights
    if target_fraction == 0.0:
        return replace(ds, byzantine_mask=np.zeros(len(w), dtype=bool))
    rng = np.random.default_rng(seed)
    limit = min(target_fraction + BYZANTINE_TOLERANCE, 0.5 - 1e-12)
    if len(w) <= _EXHAUSTIVE_LIMIT:
        mask = _best_subset_exhaustive(w, target_fraction, limit, rng)
    else:
        mask = _best_subset_greedy(w, target_fraction, limit, rng)
    reached = float(w[mask].sum())
    if abs(reached - target_fraction) > BYZANTINE_TOLERANCE + 1e-12:
        raise ConfigurationError(
            f"shard weights only allow a byzantine fraction of {reached:.4f}, "
            f"not {target_fraction} +/- {BYZANTINE_TOLERANCE} with honest fraction above 0.5"
        )
    return replace(ds, byzantine_mask=mask)


def synthetic_quadratic(p, clients, per_shard, shard_offsets, noise_std, seed) -> ShardedDataset:
    """Shard ``m`` holds ``offset_m`` plus isotropic Gaussian noise."""
    offsets = np.asarray(shard_offsets, dtype=float).reshape(-1, p) if len(shard_offsets) else np.zeros((0, p))
    if offsets.shape[0] != clients:
        raise ConfigurationError(f"need {clients} shard offsets, got {offsets.shape[0]}")
    rng = np.random.default_rng(seed)
    shards = []
    for m in range(clients):
        x = offsets[m] + noise_std * rng.standard_normal((per_shard, p))
        shards.append(Samples(x, np.zeros(per_shard, dtype=int)))
    return ShardedDataset(shards)


def make_blobs(n, d, class_count, separation, rng: np.random.Generator) -> Samples:
    """Balanced unit-variance Gaussian classes whose means sit ``separation`` apart."""
    if class_count < 2:
        raise ConfigurationError("class_count must be at least 2")
    if class_count <= d:
        means = np.eye(class_count, d) * (separation / np.sqrt(2))
    else:
        # regular simplex is impossible here; random directions keep separation on average
        dirs = np.random.default_rng(0).standard_normal((class_count, d))
        means = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * (separation / np.sqrt(2))
    y = np.arange(n) % class_count
    x = means[y] + rng.standard_normal((n, d))
    return Samples(x, y)


def synthetic_logistic(d, clients, per_shard, class_count, separation, concentration, seed) -> ShardedDataset:
    rng = np.random.default_rng(seed)
    pool = make_blobs(clients * per_shard, d, class_count, separation, rng)
    return dirichlet_partition(pool, PartitionPlan(clients, concentration, seed))


def _header(buf: bytes, count: int, what: str) -> tuple[int, ...]:
    size = 4 * count
    if len(buf) < size:
        raise TruncatedPayloadError(f"{what}.header", f"need {size} bytes, got {len(buf)}")
    return struct.unpack(f">{count}I", buf[:size])


def parse_idx(images_bytes: bytes, labels_bytes: bytes) -> Samples:
    """Decode an IDX3 image file and IDX1 label file into scaled samples."""
    magic, n_img, rows, cols = _header(images_bytes, 4, "images")
    if magic != IMAGES_MAGIC:
        raise BadMagicError("images.magic", f"bad magic {magic}, expected {IMAGES_MAGIC}")
    magic, n_lab = _header(labels_bytes, 2, "labels")
    if magic != LABELS_MAGIC:
        raise BadMagicError("labels.magic", f"bad magic {magic}, expected {LABELS_MAGIC}")
    if n_img != n_lab:
        raise CountMismatchError("count", f"{n_img} images but {n_lab} labels")
    need = 16 + n_img * rows * cols
    if len(images_bytes) < need:
        raise TruncatedPayloadError("images.pixels", f"need {need} bytes, got {len(images_bytes)}")
    if len(labels_bytes) < 8 + n_lab:
        raise TruncatedPayloadError("labels.values", f"need {8 + n_lab} bytes, got {len(labels_bytes)}")
    pixels = np.frombuffer(images_bytes, dtype=np.uint8, count=n_img * rows * cols, offset=16)
    labels = np.frombuffer(labels_bytes, dtype=np.uint8, count=n_lab, offset=8).astype(int)
    if labels.size and labels.max() > 9:
        raise IdxParseError("labels.values", f"label {labels.max()} outside 0..9")
    return Samples(pixels.reshape(n_img, rows * cols) / 255.0, labels)


def load_idx(images_path, labels_path, subset: int | None = None) -> Samples:
    samples = parse_idx(Path(images_path).read_bytes(), Path(labels_path).read_bytes())
    return samples if subset is None else samples.head(subset)
