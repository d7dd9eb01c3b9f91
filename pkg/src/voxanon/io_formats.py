"""On-disk artifacts: NPY v1.0 matrices, trial/score/transcript text files, JSON.

Binary containers are little-endian float32 NPY version 1.0, C-order. Anything
else is rejected, never coerced. Text formats are whitespace-delimited UTF-8
lines and every reader either returns a fully parsed object or raises.
"""
from __future__ import annotations

import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from numpy.lib import format as npy_format

from .errors import DataError, FormatError, IoError, SchemaError

F32 = np.dtype("<f4")
NPY_MAGIC = b"\x93NUMPY"


@dataclass(eq=False)
class FeatureSequence:
    """T x D float32 frames for one utterance."""

    frames: np.ndarray
    utterance_id: str

    def __post_init__(self) -> None:
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise SchemaError(f"frames must be 2-D, got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise SchemaError(f"frames must have T >= 1 and D >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError(f"non-finite value in features of {self.utterance_id!r}")
        self.frames = frames

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames: np.ndarray) -> "FeatureSequence":
        return FeatureSequence(frames, self.utterance_id)


@dataclass(eq=False)
class Embedding:
    vector: np.ndarray
    utterance_id: str
    speaker_id: str | None = None

    def __post_init__(self) -> None:
        vec = np.ascontiguousarray(self.vector, dtype=np.float32)
        if vec.ndim != 1 or vec.shape[0] < 1:
            raise SchemaError(f"embedding must be a non-empty 1-D vector, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"non-finite value in embedding {self.utterance_id!r}")
        if not np.any(vec):
            raise DataError(f"embedding {self.utterance_id!r} is the zero vector")
        self.vector = vec


@dataclass(frozen=True)
class Trial:
    enroll_speaker_id: str
    test_utterance_id: str
    is_target: bool


@dataclass
class TrialList:
    entries: list[Trial] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[tuple[str, str]] = set()
        for e in self.entries:
            key = (e.enroll_speaker_id, e.test_utterance_id)
            if key in seen:
                raise DataError(f"duplicate trial {key[0]} {key[1]}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class TrialScore:
    score: float
    is_target: bool
    enroll_speaker_id: str = ""
    test_utterance_id: str = ""


@dataclass
class Transcript:
    utterance_id: str
    words: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        for w in self.words:
            if not w or any(ch.isspace() for ch in w):
                raise DataError(f"invalid word {w!r} in transcript {self.utterance_id!r}")

    @classmethod
    def from_text(cls, utterance_id: str, text: str) -> "Transcript":
        return cls(utterance_id, text.split())


# --------------------------------------------------------------------------
# atomic file plumbing


def _atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    if not path.parent.is_dir():
        raise IoError(f"directory does not exist: {path.parent}")
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_bytes(path: str | os.PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _read_lines(path: str | os.PathLike) -> list[str]:
    try:
        text = _read_bytes(path).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path} is not valid UTF-8: {exc}") from exc
    return text.splitlines()


def _write_lines(path: str | os.PathLike, lines: Iterable[str]) -> None:
    _atomic_write(path, "".join(line + "\n" for line in lines).encode("utf-8"))


# --------------------------------------------------------------------------
# NPY v1.0


def encode_npy(array: np.ndarray) -> bytes:
    """Serialize a float32 array as NPY v1.0 bytes."""
    array = np.asarray(array)
    if array.dtype != F32:
        raise SchemaError(f"only little-endian float32 is written, got {array.dtype}")
    array = np.ascontiguousarray(array)
    buf = io.BytesIO()
    npy_format.write_array_header_1_0(buf, npy_format.header_data_from_array_1_0(array))
    buf.write(array.tobytes(order="C"))
    return buf.getvalue()


def decode_npy(data: bytes, ndim: int, source: str = "<bytes>") -> np.ndarray:
    """Parse NPY v1.0 bytes holding a float32 array of rank ``ndim``."""
    if not data.startswith(NPY_MAGIC):
        raise FormatError(f"{source}: missing NPY magic")
    buf = io.BytesIO(data)
    try:
        version = npy_format.read_magic(buf)
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from exc
    if version != (1, 0):
        raise FormatError(f"{source}: NPY version {version[0]}.{version[1]} is not 1.0")
    try:
        shape, fortran_order, dtype = npy_format.read_array_header_1_0(buf)
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{source}: bad NPY header: {exc}") from exc
    if dtype != F32:
        raise SchemaError(f"{source}: dtype {dtype.str} is not <f4")
    if fortran_order:
        raise SchemaError(f"{source}: Fortran-ordered arrays are not accepted")
    if len(shape) != ndim:
        raise SchemaError(f"{source}: expected rank {ndim}, got shape {shape}")
    count = math.prod(shape)
    payload = data[buf.tell():]
    if len(payload) != count * F32.itemsize:
        raise FormatError(
            f"{source}: payload has {len(payload)} bytes, header implies {count * F32.itemsize}"
        )
    return np.frombuffer(payload, dtype=F32).reshape(shape).copy()


def read_npy(path: str | os.PathLike, ndim: int) -> np.ndarray:
    arr = decode_npy(_read_bytes(path), ndim, str(path))
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite values")
    return arr


def write_npy(path: str | os.PathLike, array: np.ndarray) -> None:
    _atomic_write(path, encode_npy(array))


def read_feature_file(path: str | os.PathLike) -> FeatureSequence:
    frames = read_npy(path, ndim=2)
    if frames.shape[0] < 1 or frames.shape[1] < 1:
        raise SchemaError(f"{path}: empty feature matrix {frames.shape}")
    return FeatureSequence(frames, Path(path).stem)


def write_feature_file(seq: FeatureSequence, path: str | os.PathLike) -> None:
    write_npy(path, seq.frames)


def list_feature_files(directory: str | os.PathLike) -> list[Path]:
    """Feature files in ``directory`` sorted by utterance id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"not a directory: {directory}")
    return sorted(directory.glob("*.npy"), key=lambda p: p.stem)


def read_embedding(path: str | os.PathLike, speakers: Mapping[str, str] | None = None) -> Embedding:
    utt = Path(path).stem
    vec = read_npy(path, ndim=1)
    return Embedding(vec, utt, (speakers or {}).get(utt))


def write_embedding(emb: Embedding, path: str | os.PathLike) -> None:
    write_npy(path, emb.vector)


def read_embedding_dir(directory: str | os.PathLike, speakers: Mapping[str, str] | None = None) -> dict[str, Embedding]:
    return {p.stem: read_embedding(p, speakers) for p in list_feature_files(directory)}


# --------------------------------------------------------------------------
# JSON


def read_json(path: str | os.PathLike) -> Any:
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def write_json(path: str | os.PathLike, obj: Any) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    _atomic_write(path, (text + "\n").encode("utf-8"))


def read_speaker_map(path: str | os.PathLike) -> dict[str, str]:
    """Sidecar manifest mapping utterance_id -> speaker_id."""
    obj = read_json(path)
    if not isinstance(obj, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in obj.items()
    ):
        raise SchemaError(f"{path}: speaker map must be an object of strings")
    return dict(obj)


def write_speaker_map(mapping: Mapping[str, str], path: str | os.PathLike) -> None:
    write_json(path, dict(mapping))


# --------------------------------------------------------------------------
# text formats

_TRIAL_LABELS = {"target": True, "nontarget": False}


def _label(is_target: bool) -> str:
    return "target" if is_target else "nontarget"


def _parse_target(token: str, where: str) -> bool:
    try:
        return _TRIAL_LABELS[token]
    except KeyError:
        raise SchemaError(f"{where}: expected target|nontarget, got {token!r}") from None


def read_trial_list(path: str | os.PathLike) -> TrialList:
    entries = []
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = line.split()
        where = f"{path}:{lineno}"
        if len(fields) != 3:
            raise FormatError(f"{where}: expected 3 fields, got {len(fields)}")
        entries.append(Trial(fields[0], fields[1], _parse_target(fields[2], where)))
    return TrialList(entries)


def write_trial_list(trials: TrialList | Sequence[Trial], path: str | os.PathLike) -> None:
    _write_lines(
        path,
        (f"{t.enroll_speaker_id} {t.test_utterance_id} {_label(t.is_target)}" for t in trials),
    )


def read_score_file(path: str | os.PathLike) -> list[TrialScore]:
    """Lines ``<enroll_speaker_id> <test_utterance_id> <score> <target|nontarget>``."""
    scores = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = line.split()
        where = f"{path}:{lineno}"
        if len(fields) != 4:
            raise FormatError(f"{where}: expected 4 fields, got {len(fields)}")
        try:
            value = float(fields[2])
        except ValueError:
            raise FormatError(f"{where}: score {fields[2]!r} is not a number") from None
        if not math.isfinite(value):
            raise DataError(f"{where}: non-finite score")
        key = (fields[0], fields[1])
        if key in seen:
            raise DataError(f"{where}: duplicate trial {fields[0]} {fields[1]}")
        seen.add(key)
        scores.append(TrialScore(value, _parse_target(fields[3], where), fields[0], fields[1]))
    return scores


def write_score_file(scores: Iterable[TrialScore], path: str | os.PathLike) -> None:
    # repr() round-trips a float exactly and never uses a locale separator
    _write_lines(
        path,
        (
            f"{s.enroll_speaker_id} {s.test_utterance_id} {float(s.score)!r} {_label(s.is_target)}"
            for s in scores
        ),
    )


def _read_keyed_lines(path: str | os.PathLike, what: str) -> list[tuple[str, str]]:
    out = []
    seen: set[str] = set()
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        key, _, rest = line.partition("\t")
        key = key.strip()
        if not key or any(ch.isspace() for ch in key):
            raise FormatError(f"{path}:{lineno}: bad utterance id in {what} line")
        if key in seen:
            raise DataError(f"{path}:{lineno}: duplicate utterance {key!r}")
        seen.add(key)
        out.append((key, rest))
    return out


def read_transcripts(path: str | os.PathLike) -> dict[str, Transcript]:
    """Lines ``<utterance_id>\\t<space-joined words>``; insertion order is file order."""
    return {key: Transcript(key, rest.split()) for key, rest in _read_keyed_lines(path, "transcript")}


def write_transcripts(transcripts: Iterable[Transcript], path: str | os.PathLike) -> None:
    _write_lines(path, (f"{t.utterance_id}\t{' '.join(t.words)}" for t in transcripts))


def read_token_file(path: str | os.PathLike) -> dict[str, list[int]]:
    """Lines ``<utterance_id>\\t<space-separated integers>``."""
    out = {}
    for key, rest in _read_keyed_lines(path, "token"):
        try:
            tokens = [int(tok) for tok in rest.split()]
        except ValueError:
            raise FormatError(f"{path}: non-integer token for {key!r}") from None
        if any(t < 0 for t in tokens):
            raise DataError(f"{path}: negative token for {key!r}")
        out[key] = tokens
    return out


def write_token_file(sequences: Mapping[str, Sequence[int]], path: str | os.PathLike) -> None:
    _write_lines(path, (f"{k}\t{' '.join(str(int(t)) for t in v)}" for k, v in sequences.items()))


def read_label_file(path: str | os.PathLike) -> dict[str, str]:
    """Lines ``<utterance_id> <label>``, used for emotion gold/predicted labels."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected 2 fields, got {len(fields)}")
        if fields[0] in out:
            raise DataError(f"{path}:{lineno}: duplicate utterance {fields[0]!r}")
        out[fields[0]] = fields[1]
    return out


def write_label_file(labels: Mapping[str, str], path: str | os.PathLike) -> None:
    _write_lines(path, (f"{k} {v}" for k, v in labels.items()))
