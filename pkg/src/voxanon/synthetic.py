"""Synthetic speakers: isotropic Gaussian frame clusters around separated means.

Lets the conversion and scoring pipeline run end to end without any external
feature extractor. Each speaker's cluster mean doubles as its reference
"embedding".
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, IoError, SchemaError
from .io_formats import (
    Embedding,
    FeatureSequence,
    write_embedding,
    write_feature_file,
    write_json,
    write_speaker_map,
)


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_speakers: int = 10
    frames_per_speaker: int = 1000
    D: int = 16
    cluster_separation: float = 10.0
    seed: int = 0
    utterances_per_speaker: int = 10
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.n_speakers < 2:
            raise SchemaError(f"need at least 2 speakers, got {self.n_speakers}")
        if self.D < 2:
            raise SchemaError(f"need D >= 2, got {self.D}")
        if self.utterances_per_speaker < 1:
            raise SchemaError("need at least one utterance per speaker")
        if self.frames_per_speaker < self.utterances_per_speaker:
            raise SchemaError("fewer frames than utterances per speaker")
        if not self.cluster_separation > 0:
            raise DomainError("cluster separation must be positive")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")


@dataclass
class SyntheticCorpus:
    spec: SyntheticCorpusSpec
    means: np.ndarray
    utterances: list[FeatureSequence]
    speaker_of: dict[str, str]

    @property
    def speakers(self) -> list[str]:
        return [speaker_id(i) for i in range(self.spec.n_speakers)]

    def utterances_of(self, speaker: str) -> list[FeatureSequence]:
        return [u for u in self.utterances if self.speaker_of[u.utterance_id] == speaker]


def speaker_id(i: int) -> str:
    return f"spk{i:03d}"


def _separated_means(spec: SyntheticCorpusSpec, rng: np.random.Generator) -> np.ndarray:
    # Scaled, randomly rotated simplex corners when they fit (every pair exactly
    # `separation` apart); rejection sampling otherwise.
    n, d, sep = spec.n_speakers, spec.D, spec.cluster_separation
    if n <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        return (sep / np.sqrt(2.0)) * (1.0 + 1e-6) * q[:n]
    means = []
    scale = sep
    while len(means) < n:
        for _ in range(1000):
            cand = rng.standard_normal(d) * scale
            if all(np.linalg.norm(cand - m) >= sep for m in means):
                means.append(cand)
                break
        else:
            scale *= 1.5
    return np.array(means)


def make_synthetic_corpus(spec: SyntheticCorpusSpec) -> SyntheticCorpus:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5E7]))
    means = _separated_means(spec, rng).astype(np.float32)
    utterances = []
    speaker_of = {}
    n_utt = spec.utterances_per_speaker
    for i in range(spec.n_speakers):
        spk = speaker_id(i)
        frames = means[i] + spec.sigma * rng.standard_normal((spec.frames_per_speaker, spec.D))
        frames = frames.astype(np.float32)
        for j, chunk in enumerate(np.array_split(frames, n_utt)):
            utt = f"{spk}_u{j:03d}"
            utterances.append(FeatureSequence(chunk, utt))
            speaker_of[utt] = spk
    return SyntheticCorpus(spec, means, utterances, speaker_of)


def generate_synthetic_corpus(spec: SyntheticCorpusSpec, out_dir: str | os.PathLike) -> dict:
    """Write features/, embeddings/, speakers.json and manifest.json under ``out_dir``."""
    corpus = make_synthetic_corpus(spec)
    out = Path(out_dir)
    try:
        (out / "features").mkdir(parents=True, exist_ok=True)
        (out / "embeddings").mkdir(exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    for seq in corpus.utterances:
        write_feature_file(seq, out / "features" / f"{seq.utterance_id}.npy")
    for i, spk in enumerate(corpus.speakers):
        write_embedding(Embedding(corpus.means[i], spk, spk), out / "embeddings" / f"{spk}.npy")
    write_speaker_map(corpus.speaker_of, out / "speakers.json")
    manifest = {
        "spec": {
            "n_speakers": spec.n_speakers,
            "frames_per_speaker": spec.frames_per_speaker,
            "D": spec.D,
            "cluster_separation": spec.cluster_separation,
            "seed": spec.seed,
            "utterances_per_speaker": spec.utterances_per_speaker,
            "sigma": spec.sigma,
        },
        "speakers": {
            spk: {
                "embedding": f"embeddings/{spk}.npy",
                "features": [
                    f"features/{u.utterance_id}.npy" for u in corpus.utterances_of(spk)
                ],
            }
            for spk in corpus.speakers
        },
        "speaker_map": "speakers.json",
    }
    write_json(out / "manifest.json", manifest)
    return manifest
