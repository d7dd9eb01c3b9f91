"""Privacy and utility metrics: trial scoring, EER, WER and UAR."""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DomainError, SchemaError
from .io_formats import Embedding, Transcript, TrialList, TrialScore

POOLING = ("embedding", "score")


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    n_target: int
    n_nontarget: int


@dataclass(frozen=True)
class WerResult:
    substitutions: int
    deletions: int
    insertions: int
    n_ref: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.n_ref

    def __add__(self, other: "WerResult") -> "WerResult":
        return WerResult(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.n_ref + other.n_ref,
        )


@dataclass(frozen=True)
class UarResult:
    per_class_recall: dict[str, float] = field(default_factory=dict)

    @property
    def uar(self) -> float:
        return math.fsum(self.per_class_recall.values()) / len(self.per_class_recall)


# --------------------------------------------------------------------------
# scoring


def _unit(vec: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DataError(f"zero-norm embedding {name}")
    return v / n


def _vector(e: Embedding | np.ndarray) -> tuple[np.ndarray, str]:
    if isinstance(e, Embedding):
        return e.vector, e.utterance_id
    return np.asarray(e), "<array>"


def enrollment_score(
    enroll: Sequence[Embedding | np.ndarray],
    test: Embedding | np.ndarray,
    pooling: str = "embedding",
) -> float:
    """Cosine score of ``test`` against an enrollment pool.

    ``pooling="embedding"`` averages the length-normalized enrollment vectors
    and scores once; ``pooling="score"`` averages per-utterance cosines.
    """
    if len(enroll) == 0:
        raise SchemaError("empty enrollment pool")
    units = [_unit(*_vector(e)) for e in enroll]
    t = _unit(*_vector(test))
    if any(u.shape != t.shape for u in units):
        raise SchemaError("enrollment and test embeddings differ in dimension")
    if pooling == "embedding":
        pooled = np.mean(units, axis=0)
        norm = np.linalg.norm(pooled)
        if norm == 0.0:
            raise DataError("enrollment vectors cancel out to a zero mean")
        return float(np.clip(pooled @ t / norm, -1.0, 1.0))
    if pooling == "score":
        return float(np.clip(np.mean([u @ t for u in units]), -1.0, 1.0))
    raise SchemaError(f"unknown pooling {pooling!r}; expected one of {POOLING}")


def score_trials(
    trials: TrialList | Iterable,
    enroll_pools: Mapping[str, Sequence[Embedding | np.ndarray]],
    tests: Mapping[str, Embedding | np.ndarray],
    pooling: str = "embedding",
) -> list[TrialScore]:
    out = []
    for tr in trials:
        if tr.enroll_speaker_id not in enroll_pools:
            raise DataError(f"no enrollment pool for speaker {tr.enroll_speaker_id!r}")
        if tr.test_utterance_id not in tests:
            raise DataError(f"no embedding for test utterance {tr.test_utterance_id!r}")
        s = enrollment_score(enroll_pools[tr.enroll_speaker_id], tests[tr.test_utterance_id], pooling)
        out.append(TrialScore(s, tr.is_target, tr.enroll_speaker_id, tr.test_utterance_id))
    return out


# --------------------------------------------------------------------------
# EER


def operating_points(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thresholds with their miss and false-alarm rates, in increasing threshold order.

    A trial is accepted when ``score >= threshold``. The thresholds are the
    lowest score, the midpoints between consecutive distinct scores and a value
    just above the highest score, so every distinct operating point appears once.
    """
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    y = labels[order]
    uniq, first = np.unique(s, return_index=True)
    n_t = int(y.sum())
    n_n = y.shape[0] - n_t
    # trials strictly below each distinct score
    tgt_below = np.concatenate(([0], np.cumsum(y)))[first]
    non_below = np.concatenate(([0], np.cumsum(~y)))[first]
    p_miss = np.concatenate((tgt_below / n_t, [1.0]))
    p_fa = np.concatenate((1.0 - non_below / n_n, [0.0]))
    thresholds = np.concatenate(
        ([uniq[0]], (uniq[:-1] + uniq[1:]) / 2.0, [np.nextafter(uniq[-1], np.inf)])
    )
    return thresholds, p_miss, p_fa


def eer_from_curve(thresholds: np.ndarray, p_miss: np.ndarray, p_fa: np.ndarray) -> tuple[float, float]:
    """Crossing of the miss and false-alarm curves, interpolated linearly."""
    i = int(np.argmax(p_miss >= p_fa))
    if p_miss[i] == p_fa[i] or i == 0:
        return float(p_miss[i]), float(thresholds[i])
    gap0 = p_fa[i - 1] - p_miss[i - 1]
    gap1 = p_fa[i] - p_miss[i]
    lam = gap0 / (gap0 - gap1)
    eer = p_miss[i - 1] + lam * (p_miss[i] - p_miss[i - 1])
    thr = thresholds[i - 1] + lam * (thresholds[i] - thresholds[i - 1])
    return float(eer), float(thr)


def compute_eer(scores: Sequence[TrialScore]) -> EerResult:
    values = np.array([float(s.score) for s in scores], dtype=np.float64)
    labels = np.array([bool(s.is_target) for s in scores], dtype=bool)
    n_t = int(labels.sum())
    n_n = labels.shape[0] - n_t
    if n_t == 0 or n_n == 0:
        raise SchemaError(f"EER needs target and non-target trials (got {n_t} and {n_n})")
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite trial score")
    eer, thr = eer_from_curve(*operating_points(values, labels))
    return EerResult(eer, thr, n_t, n_n)


def eer_from_arrays(target_scores: Sequence[float], nontarget_scores: Sequence[float]) -> EerResult:
    scores = [TrialScore(float(s), True) for s in target_scores]
    scores += [TrialScore(float(s), False) for s in nontarget_scores]
    return compute_eer(scores)


# --------------------------------------------------------------------------
# WER

_SUB, _INS, _DEL = 0, 1, 2


def _normalize(words: Sequence[str]) -> list[str]:
    return [w.strip().casefold() for w in words]


def align_words(ref: Sequence[str], hyp: Sequence[str]) -> list[tuple[str, str | None, str | None]]:
    """One minimal-cost alignment as (op, ref_word, hyp_word) tuples.

    op is ``"match"``, ``"sub"``, ``"ins"`` or ``"del"``. When several
    alignments are optimal the backtrace prefers the diagonal step, then an
    insertion, then a deletion.
    """
    r, h = _normalize(ref), _normalize(hyp)
    n, m = len(r), len(h)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        ri = r[i - 1]
        row, prev = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ri != h[j - 1])
            row[j] = min(diag, row[j - 1] + 1, prev[j] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (r[i - 1] != h[j - 1]):
            ops.append(("match" if r[i - 1] == h[j - 1] else "sub", ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            ops.append(("ins", None, hyp[j - 1]))
            j -= 1
        else:
            ops.append(("del", ref[i - 1], None))
            i -= 1
    ops.reverse()
    return ops


def _words(x: Transcript | Sequence[str] | str) -> list[str]:
    if isinstance(x, Transcript):
        return list(x.words)
    if isinstance(x, str):
        return x.split()
    return list(x)


def word_error_rate(ref: Transcript | Sequence[str], hyp: Transcript | Sequence[str]) -> WerResult:
    r, h = _words(ref), _words(hyp)
    if not r:
        raise DomainError("WER is undefined for an empty reference")
    counts = Counter(op for op, _, _ in align_words(r, h))
    return WerResult(counts["sub"], counts["del"], counts["ins"], len(r))


def corpus_wer(refs: Mapping[str, Transcript], hyps: Mapping[str, Transcript]) -> WerResult:
    """Aggregate sum(S+D+I) / sum(N) over every reference utterance.

    A reference without a hypothesis counts as fully deleted.
    """
    if not refs:
        raise DomainError("no reference transcripts")
    total = WerResult(0, 0, 0, 0)
    for utt, ref in refs.items():
        hyp = hyps.get(utt, Transcript(utt, []))
        if not ref.words:
            if hyp.words:
                total = total + WerResult(0, 0, len(hyp.words), 0)
            continue
        total = total + word_error_rate(ref, hyp)
    if total.n_ref == 0:
        raise DomainError("all reference transcripts are empty")
    return total


# --------------------------------------------------------------------------
# UAR


def unweighted_average_recall(pairs: Iterable[tuple[str, str]]) -> UarResult:
    """Mean per-class recall over the classes present in the gold labels."""
    total: dict[str, int] = defaultdict(int)
    correct: dict[str, int] = defaultdict(int)
    for gold, pred in pairs:
        total[gold] += 1
        if gold == pred:
            correct[gold] += 1
    if not total:
        raise SchemaError("UAR needs at least one labelled item")
    return UarResult({c: correct[c] / total[c] for c in sorted(total)})
