"""kNN-VC frame regression with pooled matching sets and input perturbations.

Every source frame is replaced by the mean of its k most similar frames in a
target matching set. Several matching sets (speakers or pseudo-speakers) can be
pooled with a weighted average of their per-set regressions. Two optional
perturbations run before regression: tempo resampling by a random factor and
additive uniform noise bounded in the infinity norm.

Neighbour search is exact. Query frames are processed in fixed-size blocks so
results never depend on how many workers share the blocks.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _rng
from .errors import CapacityError, DataError, DomainError, SchemaError
from .io_formats import FeatureSequence

DEFAULT_K = 4
RECOMMENDED_NOISE_BOUND = 32.0
RECOMMENDED_LENGTH_RANGE = (0.8, 1.2)
QUERY_BLOCK = 256
METRICS = ("cosine", "euclidean")


@dataclass(frozen=True, eq=False)
class MatchingSet:
    frames: np.ndarray
    frame_norms: np.ndarray
    source_id: str

    @property
    def M(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]


def build_matching_set(sequences: Sequence[FeatureSequence], source_id: str) -> MatchingSet:
    if not sequences:
        raise SchemaError("a matching set needs at least one sequence")
    dims = {s.D for s in sequences}
    if len(dims) != 1:
        raise SchemaError(f"mismatched feature dimensions {sorted(dims)} in {source_id!r}")
    frames = np.concatenate([s.frames for s in sequences], axis=0).astype(np.float64)
    norms = np.linalg.norm(frames, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DataError(f"zero-norm frame at row {bad} of matching set {source_id!r}")
    frames.setflags(write=False)
    norms.setflags(write=False)
    return MatchingSet(frames, norms, source_id)


@dataclass(frozen=True, eq=False)
class PooledTarget:
    sets: tuple[MatchingSet, ...]
    weights: tuple[float, ...]

    def __init__(self, sets: Sequence[MatchingSet], weights: Sequence[float] | None = None):
        if not sets:
            raise SchemaError("pooled target needs at least one matching set")
        if weights is None:
            weights = [1.0] * len(sets)
        if len(weights) != len(sets):
            raise SchemaError(f"{len(weights)} weights for {len(sets)} matching sets")
        w = [float(x) for x in weights]
        if any(not math.isfinite(x) or x < 0 for x in w):
            raise DomainError(f"pool weights must be finite and non-negative: {w}")
        total = math.fsum(w)
        if total <= 0:
            raise DomainError("pool weights sum to zero")
        if len({s.D for s in sets}) != 1:
            raise SchemaError("matching sets in a pool must share one feature dimension")
        object.__setattr__(self, "sets", tuple(sets))
        object.__setattr__(self, "weights", tuple(x / total for x in w))

    @property
    def D(self) -> int:
        return self.sets[0].D


@dataclass(frozen=True)
class PerturbConfig:
    noise_bound: float = 0.0
    length_factor_range: tuple[float, float] = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.length_factor_range
        if not (0 < lo <= hi) or not math.isfinite(hi):
            raise DomainError(f"length factor range must satisfy 0 < lo <= hi, got {lo}, {hi}")
        if not (self.noise_bound >= 0 and math.isfinite(self.noise_bound)):
            raise DomainError(f"noise bound must be finite and >= 0, got {self.noise_bound}")


# --------------------------------------------------------------------------
# neighbour search


def _similarities(mset: MatchingSet, queries: np.ndarray, metric: str) -> np.ndarray:
    dots = queries @ mset.frames.T
    if metric == "cosine":
        qn = np.linalg.norm(queries, axis=1)
        return dots / (qn[:, None] * mset.frame_norms[None, :])
    if metric == "euclidean":
        sq = (queries * queries).sum(axis=1)[:, None] - 2.0 * dots + (mset.frame_norms**2)[None, :]
        return -np.sqrt(np.maximum(sq, 0.0))
    raise SchemaError(f"unknown metric {metric!r}; expected one of {METRICS}")


def _top_k(sims: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the k largest values; ties go to the lower index."""
    n_rows, m = sims.shape
    if k == m:
        return np.argsort(-sims, axis=1, kind="stable")
    part = np.argpartition(-sims, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(sims, part, axis=1).min(axis=1)
    out = np.empty((n_rows, k), dtype=np.intp)
    for i in range(n_rows):
        cand = np.flatnonzero(sims[i] >= kth[i])
        order = np.argsort(-sims[i, cand], kind="stable")
        out[i] = cand[order[:k]]
    return out


def _check_query(mset: MatchingSet, queries: np.ndarray, k: int, metric: str) -> None:
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise DomainError(f"k must be a positive integer, got {k!r}")
    if k > mset.M:
        raise CapacityError(f"k={k} exceeds matching set {mset.source_id!r} size {mset.M}")
    if queries.shape[1] != mset.D:
        raise SchemaError(f"query dimension {queries.shape[1]} != matching set dimension {mset.D}")
    if metric == "cosine" and np.any(~np.any(queries != 0, axis=1)):
        raise DataError("zero-norm query frame under cosine similarity")


def knn_search(
    mset: MatchingSet, queries: np.ndarray, k: int, metric: str = "cosine"
) -> tuple[np.ndarray, np.ndarray]:
    """Batched exact search; returns (indices, similarities), each of shape (n, k)."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    _check_query(mset, queries, k, metric)
    sims = _similarities(mset, queries, metric)
    idx = _top_k(sims, k)
    return idx, np.take_along_axis(sims, idx, axis=1)


def knn_query(
    mset: MatchingSet, query: np.ndarray, k: int, metric: str = "cosine"
) -> list[tuple[int, float]]:
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise SchemaError("knn_query takes a single 1-D query vector")
    idx, sims = knn_search(mset, query[None, :], k, metric)
    return [(int(i), float(s)) for i, s in zip(idx[0], sims[0])]


def _regress_block(mset: MatchingSet, block: np.ndarray, k: int, metric: str) -> np.ndarray:
    idx, _ = knn_search(mset, block, k, metric)
    return mset.frames[idx].mean(axis=1)


def _regress_frames(
    frames: np.ndarray, mset: MatchingSet, k: int, metric: str, workers: int
) -> np.ndarray:
    """float64 regressed frames; blocks are fixed so output ignores ``workers``."""
    frames = np.asarray(frames, dtype=np.float64)
    _check_query(mset, frames, k, metric)
    blocks = [frames[i:i + QUERY_BLOCK] for i in range(0, frames.shape[0], QUERY_BLOCK)]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _regress_block(mset, b, k, metric), blocks))
    else:
        parts = [_regress_block(mset, b, k, metric) for b in blocks]
    return np.concatenate(parts, axis=0)


def knn_regress(
    seq: FeatureSequence,
    mset: MatchingSet,
    k: int = DEFAULT_K,
    metric: str = "cosine",
    workers: int = 1,
) -> FeatureSequence:
    return seq.with_frames(_regress_frames(seq.frames, mset, k, metric, workers).astype(np.float32))


def pooled_regress(
    seq: FeatureSequence,
    target: PooledTarget,
    k: int = DEFAULT_K,
    metric: str = "cosine",
    workers: int = 1,
) -> FeatureSequence:
    if not isinstance(target, PooledTarget):
        raise SchemaError("pooled_regress needs a PooledTarget")
    out = np.zeros(seq.frames.shape, dtype=np.float64)
    for mset, w in zip(target.sets, target.weights):
        out += w * _regress_frames(seq.frames, mset, k, metric, workers)
    return seq.with_frames(out.astype(np.float32))


# --------------------------------------------------------------------------
# perturbations


def perturb_noise(seq: FeatureSequence, bound: float = RECOMMENDED_NOISE_BOUND, seed: int = 0) -> FeatureSequence:
    """Add i.i.d. Uniform(-bound, bound) noise to every component.

    The stream is keyed on ``(seed, utterance_id)``. After float32 rounding the
    per-entry displacement is kept strictly below ``bound``.
    """
    if not (bound >= 0 and math.isfinite(bound)):
        raise DomainError(f"noise bound must be finite and >= 0, got {bound}")
    if bound == 0:
        return seq.with_frames(seq.frames.copy())
    rng = _rng.stream(seed, "noise", seq.utterance_id)
    x = seq.frames
    noise = rng.uniform(-bound, bound, size=x.shape)
    out = (x.astype(np.float64) + noise).astype(np.float32)
    # rounding to float32 can land exactly on the bound; step back toward the input
    bad = np.abs(out.astype(np.float64) - x) >= bound
    while np.any(bad):
        out[bad] = np.nextafter(out[bad], x[bad])
        bad = np.abs(out.astype(np.float64) - x) >= bound
    return seq.with_frames(out)


def stretched_length(T: int, factor: float) -> int:
    # round half up, so the rule does not depend on banker's rounding
    return max(1, int(math.floor(T / factor + 0.5)))


def length_variation(seq: FeatureSequence, factor: float) -> FeatureSequence:
    """Tempo-resample frames: T' = round(T / factor), linear interpolation."""
    if not (factor > 0 and math.isfinite(factor)):
        raise DomainError(f"length factor must be positive, got {factor}")
    T = seq.T
    new_t = stretched_length(T, factor)
    if factor == 1.0 or new_t == T == 1:
        return seq.with_frames(seq.frames.copy())
    if new_t == 1:
        pos = np.array([(T - 1) / 2.0])
    else:
        pos = np.arange(new_t, dtype=np.float64) * ((T - 1) / (new_t - 1))
    lo = np.minimum(np.floor(pos).astype(np.intp), T - 1)
    hi = np.minimum(lo + 1, T - 1)
    frac = (pos - lo)[:, None]
    x = seq.frames.astype(np.float64)
    out = x[lo] + frac * (x[hi] - x[lo])
    return seq.with_frames(out.astype(np.float32))


def draw_length_factor(perturb: PerturbConfig, utterance_id: str) -> float:
    lo, hi = perturb.length_factor_range
    if lo == hi:
        return float(lo)
    return float(_rng.stream(perturb.seed, "length", utterance_id).uniform(lo, hi))


def anonymize_utterance(
    seq: FeatureSequence,
    target: PooledTarget,
    k: int = DEFAULT_K,
    perturb: PerturbConfig | None = None,
    metric: str = "cosine",
    workers: int = 1,
) -> FeatureSequence:
    """Length variation, then additive noise, then pooled kNN regression."""
    perturb = perturb or PerturbConfig()
    factor = draw_length_factor(perturb, seq.utterance_id)
    out = length_variation(seq, factor)
    out = perturb_noise(out, perturb.noise_bound, perturb.seed)
    return pooled_regress(out, target, k, metric, workers)
