"""Discrete-token objective: k-means codebook, tokenization and a cosine-logit CTC loss.

Target-speaker frames are clustered with k-means. Converted utterances are
tokenized by nearest centroid, adjacent repeats are collapsed, and the
collapsed sequence is the CTC label for frames produced by a conversion
model. Per-frame logits are cosine similarities to the centroids divided by a
temperature, plus one constant logit for the CTC blank (the last class).

The loss is the negative log of the total probability of all blank-augmented
alignments, computed with the forward algorithm in log space. Its gradient is
taken with respect to the input frames; the codebook is frozen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CapacityError, DataError, DomainError, SchemaError

_ASSIGN_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class Codebook:
    centroids: np.ndarray
    inertia_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] < 1:
            raise SchemaError(f"centroids must be a K x D matrix, got shape {c.shape}")
        if c.shape[0] < 2:
            raise SchemaError(f"a codebook needs K >= 2 centroids, got {c.shape[0]}")
        if not np.all(np.isfinite(c)):
            raise DataError("non-finite centroid")
        if np.any(np.linalg.norm(c, axis=1) == 0.0):
            raise DataError("zero-norm centroid: cosine logits are undefined")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise DataError("duplicate centroids in codebook")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    @property
    def D(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class CtcConfig:
    temperature: float = 1.0
    blank_logit: float = 0.0
    # literal "cosine distance" logits (1 - cos) instead of cosine similarity
    distance_logits: bool = False

    def __post_init__(self) -> None:
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise DomainError(f"temperature must be positive, got {self.temperature}")
        if not math.isfinite(self.blank_logit):
            raise DomainError("blank logit must be finite")


class CtcResult(NamedTuple):
    loss: float
    grad: np.ndarray
    feasible: bool


# --------------------------------------------------------------------------
# k-means


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # direct differences rather than the |x|^2 - 2xc + |c|^2 expansion, so the
    # assignment argmin and the reported inertia see identical numbers
    out = np.empty((x.shape[0], centroids.shape[0]))
    for i in range(0, x.shape[0], _ASSIGN_BLOCK):
        diff = x[i:i + _ASSIGN_BLOCK, None, :] - centroids[None, :, :]
        out[i:i + _ASSIGN_BLOCK] = np.einsum("mkd,mkd->mk", diff, diff)
    return out


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = _sq_distances(x, centroids)
    labels = d.argmin(axis=1)
    return labels, d[np.arange(x.shape[0]), labels]


def _kmeans_pp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    M = x.shape[0]
    chosen = [int(rng.integers(M))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(M, p=closest / total))
        else:
            # every point coincides with a chosen centre
            rest = np.setdiff1d(np.arange(M), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        closest = np.minimum(closest, ((x - x[nxt]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans_fit(frames: np.ndarray, K: int, max_iters: int = 100, seed: int = 0) -> Codebook:
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops when an iteration changes no assignment or after ``max_iters``
    updates. An emptied cluster is moved onto the point farthest from its own
    centroid. ``inertia_history`` holds the inertia after every assignment step.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2:
        raise SchemaError(f"frames must be an M x D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite frame")
    M = x.shape[0]
    if K < 2:
        raise DomainError(f"K must be >= 2, got {K}")
    if M < K:
        raise CapacityError(f"{M} frames cannot fill {K} clusters")
    if max_iters < 1:
        raise DomainError("max_iters must be >= 1")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, K, rng)
    labels, dist = _assign(x, centroids)
    history = [float(dist.sum())]
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        filled = counts > 0
        centroids = centroids.copy()
        centroids[filled] = sums[filled] / counts[filled, None]
        if not filled.all():
            far = dist.copy()
            for c in np.flatnonzero(~filled):
                j = int(far.argmax())
                centroids[c] = x[j]
                far[j] = -1.0
        new_labels, dist = _assign(x, centroids)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return Codebook(centroids, tuple(history))


def inertia(frames: np.ndarray, codebook: Codebook) -> float:
    _, dist = _assign(np.asarray(frames, dtype=np.float64), codebook.centroids)
    return float(dist.sum())


def discretize(frames: np.ndarray, codebook: Codebook) -> list[int]:
    """Nearest centroid (squared Euclidean) per frame; ties to the lower index."""
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[1] != codebook.D:
        raise SchemaError(f"frame dimension {x.shape[1]} != codebook dimension {codebook.D}")
    labels, _ = _assign(x, codebook.centroids)
    return labels.tolist()


def collapse_repeats(tokens: Sequence[int]) -> list[int]:
    out: list[int] = []
    for t in tokens:
        if not out or out[-1] != t:
            out.append(t)
    return out


# --------------------------------------------------------------------------
# CTC


def _cosines(frames: np.ndarray, codebook: Codebook) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[1] != codebook.D:
        raise SchemaError(f"frame dimension {x.shape[1]} != codebook dimension {codebook.D}")
    xn = np.linalg.norm(x, axis=1)
    if np.any(xn == 0.0):
        raise DataError("zero-norm frame: cosine logits are undefined")
    unit_c = codebook.centroids / np.linalg.norm(codebook.centroids, axis=1)[:, None]
    cos = (x / xn[:, None]) @ unit_c.T
    return x, xn, cos


def _logits_from_cos(cos: np.ndarray, config: CtcConfig) -> np.ndarray:
    scores = (1.0 - cos) if config.distance_logits else cos
    blank = np.full((cos.shape[0], 1), config.blank_logit)
    return np.hstack([scores / config.temperature, blank])


def ctc_logits(frames: np.ndarray, codebook: Codebook, config: CtcConfig | None = None) -> np.ndarray:
    """T x (K+1) logits; column K is the blank."""
    config = config or CtcConfig()
    _, _, cos = _cosines(frames, codebook)
    return _logits_from_cos(cos, config)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def _logsumexp3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))


def ctc_forward_backward(logp: np.ndarray, target: Sequence[int], blank: int):
    """Log-space alpha/beta over the blank-augmented label sequence.

    alpha[t, s] includes the emission at t; beta[t, s] covers frames after t.
    Returns (log_likelihood, alpha, beta, extended_labels).
    """
    T = logp.shape[0]
    ext = np.full(2 * len(target) + 1, blank, dtype=np.intp)
    ext[1::2] = target
    S = ext.shape[0]
    # s - 2 -> s allowed only into a label differing from the label two back
    skip = np.zeros(S, dtype=bool)
    if S > 2:
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    neg_inf = -np.inf
    alpha = np.full((T, S), neg_inf)
    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        shift1 = np.concatenate(([neg_inf], prev[:-1]))
        shift2 = np.concatenate(([neg_inf, neg_inf], prev[:-2]))[:S]
        shift2 = np.where(skip, shift2, neg_inf)
        alpha[t] = _logsumexp3(prev, shift1, shift2) + logp[t, ext]

    beta = np.full((T, S), neg_inf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    skip_from = np.concatenate((skip[2:], [False, False]))[:S]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1, ext]
        stay = nxt
        step1 = np.concatenate((nxt[1:], [neg_inf]))
        step2 = np.where(skip_from, np.concatenate((nxt[2:], [neg_inf, neg_inf]))[:S], neg_inf)
        beta[t] = _logsumexp3(stay, step1, step2)

    tail = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    return float(tail), alpha, beta, ext


def ctc_loss(
    frames: np.ndarray,
    target: Sequence[int],
    codebook: Codebook,
    config: CtcConfig | None = None,
) -> CtcResult:
    """CTC negative log-likelihood of ``target`` and its gradient w.r.t. ``frames``.

    An infeasible target (too few frames) yields ``loss=inf``, a zero gradient
    and ``feasible=False``.
    """
    config = config or CtcConfig()
    x, xn, cos = _cosines(frames, codebook)
    target = [int(t) for t in target]
    K = codebook.K
    if any(t < 0 or t >= K for t in target):
        raise SchemaError(f"target tokens must lie in [0, {K})")
    T = x.shape[0]
    if T < min_frames(target):
        return CtcResult(math.inf, np.zeros_like(x), False)

    logits = _logits_from_cos(cos, config)
    logp = log_softmax(logits)
    loglik, alpha, beta, ext = ctc_forward_backward(logp, target, blank=K)

    # occupancy of each class at each frame, normalized by the total likelihood
    post = np.exp(alpha + beta - loglik)
    occupancy = np.zeros_like(logp)
    np.add.at(occupancy.T, ext, post.T)
    dlogits = np.exp(logp) - occupancy

    dscore = dlogits[:, :K] / config.temperature
    if config.distance_logits:
        dscore = -dscore
    unit_c = codebook.centroids / np.linalg.norm(codebook.centroids, axis=1)[:, None]
    # d cos(x, c) / dx = c_hat / |x| - cos * x / |x|^2
    grad = (dscore @ unit_c) / xn[:, None] - (dscore * cos).sum(axis=1)[:, None] * x / (xn**2)[:, None]
    return CtcResult(max(0.0, -loglik), grad, True)
