"""Deterministic per-utterance random streams.

Streams are keyed on ``(seed, purpose, utterance_id)`` through a cryptographic
hash so results do not depend on Python's salted ``hash`` or on the order in
which utterances are processed.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _digest(*parts: str) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        data = part.encode("utf-8")
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return h.digest()


def stream(seed: int, purpose: str, key: str) -> np.random.Generator:
    words = np.frombuffer(_digest(purpose, key), dtype="<u4").tolist()
    return np.random.default_rng(np.random.SeedSequence([int(seed) & _MASK64, *words]))


def unit_uniform(seed: int, purpose: str, key: str) -> float:
    """A single value in [0, 1) from a keyed hash; no generator state involved."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & _MASK64).to_bytes(8, "little"))
    h.update(_digest(purpose, key))
    return (int.from_bytes(h.digest(), "little") >> 11) / 2.0**53
