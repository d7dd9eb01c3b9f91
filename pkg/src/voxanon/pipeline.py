"""Corpus-level conversion: run configs, target manifests and the batch driver."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import DomainError, FormatError, IoError, SchemaError, VoxAnonError
from .io_formats import (
    list_feature_files,
    read_feature_file,
    read_json,
    write_feature_file,
    write_json,
)
from .knn_engine import (
    DEFAULT_K,
    METRICS,
    PerturbConfig,
    PooledTarget,
    anonymize_utterance,
    build_matching_set,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Conversion settings. The defaults are plain single-pass kNN-VC with k=4."""

    k: int = DEFAULT_K
    noise_bound: float = 0.0
    length_factor_range: tuple[float, float] = (1.0, 1.0)
    pool_weights: tuple[float, ...] = ()
    seed: int = 0
    worker_count: int = 1
    metric: str = "cosine"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if self.worker_count < 1:
            raise DomainError(f"worker_count must be >= 1, got {self.worker_count}")
        if self.metric not in METRICS:
            raise SchemaError(f"unknown metric {self.metric!r}")
        # validates the bound and range
        self.perturb()

    def perturb(self) -> PerturbConfig:
        return PerturbConfig(self.noise_bound, tuple(self.length_factor_range), self.seed)

    def replace(self, **overrides: Any) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["length_factor_range"] = list(self.length_factor_range)
        d["pool_weights"] = list(self.pool_weights)
        return d


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


_CONFIG_PARSERS = {
    "k": int,
    "noise_bound": float,
    "length_factor_range": _floats,
    "pool_weights": _floats,
    "seed": int,
    "worker_count": int,
    "metric": str.strip,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise FormatError(f"{source}:{lineno}: expected key=value")
        if key not in _CONFIG_PARSERS:
            raise SchemaError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](value.strip())
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    if "length_factor_range" in values and len(values["length_factor_range"]) != 2:
        raise SchemaError(f"{source}: length_factor_range needs two numbers")
    return values


def load_config(path: str | os.PathLike | None, **overrides: Any) -> RunConfig:
    """Defaults, then the config file, then non-None overrides (flags win)."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        values = parse_config_text(text, str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


# --------------------------------------------------------------------------
# target manifest


def load_target(manifest_path: str | os.PathLike, weights: tuple[float, ...] = ()) -> PooledTarget:
    """Build a pooled target from a JSON manifest.

    Format: ``{"sets": [{"source_id": str, "files": [path, ...], "weight": float}]}``.
    A set may give ``"dir"`` instead of ``"files"``. Relative paths resolve
    against the manifest's directory. Explicit ``weights`` override the
    manifest's; with neither, sets are weighted uniformly.
    """
    manifest_path = Path(manifest_path)
    obj = read_json(manifest_path)
    base = manifest_path.parent
    if not isinstance(obj, dict) or not isinstance(obj.get("sets"), list) or not obj["sets"]:
        raise SchemaError(f"{manifest_path}: expected a non-empty 'sets' list")
    sets, manifest_weights = [], []
    for i, entry in enumerate(obj["sets"]):
        if not isinstance(entry, dict):
            raise SchemaError(f"{manifest_path}: set {i} is not an object")
        source_id = str(entry.get("source_id", f"set{i}"))
        if "files" in entry:
            files = [base / f for f in entry["files"]]
        elif "dir" in entry:
            files = list_feature_files(base / entry["dir"])
        else:
            raise SchemaError(f"{manifest_path}: set {source_id!r} lists no files")
        if not files:
            raise SchemaError(f"{manifest_path}: set {source_id!r} is empty")
        sets.append(build_matching_set([read_feature_file(f) for f in files], source_id))
        manifest_weights.append(float(entry.get("weight", 1.0)))
    return PooledTarget(sets, list(weights) if weights else manifest_weights)


def write_target_manifest(path: str | os.PathLike, sets: Mapping[str, list[str]], weights: Mapping[str, float] | None = None) -> None:
    entries = []
    for source_id, files in sets.items():
        entry: dict[str, Any] = {"source_id": source_id, "files": list(files)}
        if weights is not None:
            entry["weight"] = float(weights[source_id])
        entries.append(entry)
    write_json(path, {"sets": entries})


# --------------------------------------------------------------------------
# batch conversion


def run_convert(
    config: RunConfig,
    source_dir: str | os.PathLike,
    target_manifest: str | os.PathLike,
    out_dir: str | os.PathLike,
) -> dict:
    """Anonymize every ``*.npy`` in ``source_dir`` into ``out_dir``.

    Failures are collected per utterance; successes are still written. The
    summary lands in ``out_dir/summary.json`` and has ``ok = False`` when
    anything failed. Setup errors (bad manifest, no sources) raise before
    ``out_dir`` is touched.
    """
    sources = list_feature_files(source_dir)
    if not sources:
        raise SchemaError(f"no feature files in {source_dir}")
    target = load_target(target_manifest, config.pool_weights)
    perturb = config.perturb()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc

    def convert_one(path: Path) -> dict:
        start = time.perf_counter()
        try:
            seq = read_feature_file(path)
            res = anonymize_utterance(seq, target, config.k, perturb, config.metric)
            write_feature_file(res, out / f"{seq.utterance_id}.npy")
        except VoxAnonError as exc:
            log.error("%s: %s", path.stem, exc)
            return {"utterance_id": path.stem, "ok": False, "error": str(exc)}
        return {
            "utterance_id": seq.utterance_id,
            "ok": True,
            "frames_in": seq.T,
            "frames_out": res.T,
            "seconds": time.perf_counter() - start,
        }

    if config.worker_count > 1:
        with ThreadPoolExecutor(max_workers=config.worker_count) as pool:
            records = list(pool.map(convert_one, sources))
    else:
        records = [convert_one(p) for p in sources]

    records.sort(key=lambda r: r["utterance_id"])
    failures = [r for r in records if not r["ok"]]
    summary = {
        "ok": not failures,
        "config": config.to_json(),
        "n_utterances": len(records),
        "n_failed": len(failures),
        "target_sets": [s.source_id for s in target.sets],
        "target_weights": list(target.weights),
        "utterances": records,
        "total_seconds": math.fsum(r.get("seconds", 0.0) for r in records),
    }
    write_json(out / "summary.json", summary)
    return summary
