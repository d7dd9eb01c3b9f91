"""Random admixture of anonymization backends and privacy/utility trade-off reports.

Each utterance is routed to one backend with configured probabilities. The
draw for an utterance comes from a hash of ``(seed, utterance_id)``, so a plan
does not depend on list order and adding utterances never moves others.
"""
from __future__ import annotations

import csv
import io
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import _rng
from .errors import DataError, FormatError, IoError, MissingOutputError, SchemaError
from .io_formats import _atomic_write, read_json, write_json

PROB_TOLERANCE = 1e-12
REPORT_FIELDS = ["label", "mix_fraction", "eer", "uar", "wer"]
DERIVED_FIELDS = ["eer_linear", "eer_vs_linear", "uar_linear", "uar_vs_linear"]


def _check_probabilities(p: Mapping[str, float]) -> dict[str, float]:
    if len(p) == 0:
        raise SchemaError("no backends in probability map")
    probs = {str(k): float(v) for k, v in p.items()}
    for k, v in probs.items():
        if not math.isfinite(v) or v < 0:
            raise SchemaError(f"probability for backend {k!r} must be >= 0, got {v}")
    total = math.fsum(probs.values())
    if abs(total - 1.0) > PROB_TOLERANCE:
        raise SchemaError(f"backend probabilities sum to {total!r}, not 1")
    return probs


@dataclass
class AdmixturePlan:
    assignments: dict[str, str]
    p: dict[str, float]
    seed: int

    def __post_init__(self) -> None:
        self.p = _check_probabilities(self.p)
        unknown = set(self.assignments.values()) - set(self.p)
        if unknown:
            raise SchemaError(f"assignments reference unknown backends {sorted(unknown)}")

    def counts(self) -> dict[str, int]:
        out = {b: 0 for b in sorted(self.p)}
        for b in self.assignments.values():
            out[b] += 1
        return out

    def to_json(self) -> dict:
        return {"seed": self.seed, "p": dict(sorted(self.p.items())), "assignments": dict(self.assignments)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "AdmixturePlan":
        try:
            return cls(dict(obj["assignments"]), dict(obj["p"]), int(obj["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed admixture plan: {exc}") from exc


def choose_backend(p: Mapping[str, float], u: float) -> str:
    """Inverse-CDF pick over backends in sorted-id order."""
    backends = sorted(p)
    acc = 0.0
    for b in backends:
        acc += p[b]
        if u < acc:
            return b
    # u landed in the rounding slack above the last cumulative sum
    return next(b for b in reversed(backends) if p[b] > 0)


def plan_admixture(utterance_ids: Sequence[str], p: Mapping[str, float], seed: int) -> AdmixturePlan:
    probs = _check_probabilities(p)
    if len(set(utterance_ids)) != len(utterance_ids):
        dup = next(u for u in utterance_ids if list(utterance_ids).count(u) > 1)
        raise DataError(f"duplicate utterance id {dup!r}")
    assignments = {
        utt: choose_backend(probs, _rng.unit_uniform(seed, "admixture", utt))
        for utt in sorted(utterance_ids)
    }
    return AdmixturePlan(assignments, probs, int(seed))


def read_plan(path: str | os.PathLike) -> AdmixturePlan:
    return AdmixturePlan.from_json(read_json(path))


def write_plan(plan: AdmixturePlan, path: str | os.PathLike) -> None:
    write_json(path, plan.to_json())


def _find_output(directory: Path, utt: str, suffix: str | None) -> Path | None:
    if suffix is not None:
        cand = directory / f"{utt}{suffix}"
        return cand if cand.is_file() else None
    matches = sorted(p for p in directory.glob(f"{utt}.*") if p.is_file() and p.stem == utt)
    if len(matches) > 1:
        raise DataError(f"ambiguous outputs for {utt!r} in {directory}: {[m.name for m in matches]}")
    return matches[0] if matches else None


def apply_admixture(
    plan: AdmixturePlan,
    backend_dirs: Mapping[str, str | os.PathLike],
    out_dir: str | os.PathLike,
    suffix: str | None = None,
    link: bool = False,
    workers: int = 1,
) -> dict:
    """Materialize the mixed corpus and write ``manifest.json`` last.

    Every assigned file is located before anything is copied, so a missing
    output leaves ``out_dir`` untouched.
    """
    missing_dirs = set(plan.assignments.values()) - set(backend_dirs)
    if missing_dirs:
        raise SchemaError(f"no directory given for backends {sorted(missing_dirs)}")
    sources: dict[str, Path] = {}
    for utt, backend in plan.assignments.items():
        directory = Path(backend_dirs[backend])
        found = _find_output(directory, utt, suffix)
        if found is None:
            raise MissingOutputError(utt, backend, str(directory))
        sources[utt] = found

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc

    def place(utt: str) -> None:
        src = sources[utt]
        dst = out / src.name
        if dst.exists() or dst.is_symlink():
            dst.unlink()
        if link:
            os.link(src, dst)
        else:
            shutil.copyfile(src, dst)

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(place, sorted(sources)))
        else:
            for utt in sorted(sources):
                place(utt)
    except OSError as exc:
        raise IoError(f"materializing mixed corpus failed: {exc}") from exc

    manifest = {
        "seed": plan.seed,
        "p": dict(sorted(plan.p.items())),
        "counts": plan.counts(),
        "entries": {
            utt: {
                "backend": plan.assignments[utt],
                "source": str(sources[utt]),
                "file": sources[utt].name,
            }
            for utt in sorted(sources)
        },
    }
    write_json(out / "manifest.json", manifest)
    return manifest


# --------------------------------------------------------------------------
# trade-off reporting


@dataclass(frozen=True)
class TradeoffPoint:
    """One system on the privacy/utility plane.

    Metric units are whatever the caller supplies (fractions or percent); the
    report only interpolates between endpoints.
    """

    label: str
    eer: float
    uar: float
    wer: float
    mix_fraction: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.mix_fraction <= 1.0:
            raise SchemaError(f"mix fraction {self.mix_fraction} outside [0, 1]")
        for name in ("eer", "uar", "wer"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise SchemaError(f"{name} must be finite and >= 0, got {v}")


def _lerp(a: float, b: float, lam: float) -> float:
    # exact at both ends so endpoint deviations are exactly zero
    if lam == 0.0:
        return a
    if lam == 1.0:
        return b
    return a + lam * (b - a)


def tradeoff_rows(points: Sequence[TradeoffPoint]) -> list[dict]:
    """Rows sorted by mix fraction, with linear baselines between the endpoints.

    The endpoints are the points with the lowest and highest mix fraction
    (normally the two pure systems at 0 and 1).
    """
    if not points:
        raise SchemaError("trade-off report needs at least one point")
    ordered = sorted(points, key=lambda pt: pt.mix_fraction)
    lo, hi = ordered[0], ordered[-1]
    span = hi.mix_fraction - lo.mix_fraction
    rows = []
    for pt in ordered:
        if pt is lo or span == 0:
            lam = 0.0
        elif pt is hi:
            lam = 1.0
        else:
            lam = (pt.mix_fraction - lo.mix_fraction) / span
        eer_lin = _lerp(lo.eer, hi.eer, lam)
        uar_lin = _lerp(lo.uar, hi.uar, lam)
        row = asdict(pt)
        row.update(
            eer_linear=eer_lin,
            eer_vs_linear=pt.eer - eer_lin,
            uar_linear=uar_lin,
            uar_vs_linear=pt.uar - uar_lin,
        )
        rows.append(row)
    return rows


def tradeoff_report(points: Sequence[TradeoffPoint], output: str | os.PathLike) -> list[dict]:
    """Write ``output`` as CSV and a JSON twin next to it (same stem, ``.json``)."""
    rows = tradeoff_rows(points)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_FIELDS + DERIVED_FIELDS)
    for row in rows:
        writer.writerow([row["label"]] + [repr(float(row[k])) for k in REPORT_FIELDS[1:] + DERIVED_FIELDS])
    output = Path(output)
    _atomic_write(output, buf.getvalue().encode("utf-8"))
    write_json(output.with_suffix(".json"), rows)
    return rows


def read_tradeoff_csv(path: str | os.PathLike) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not set(REPORT_FIELDS) <= set(reader.fieldnames):
        raise FormatError(f"{path}: header must contain {','.join(REPORT_FIELDS)}")
    rows = []
    for row in reader:
        try:
            parsed = {k: (row[k] if k == "label" else float(row[k])) for k in reader.fieldnames}
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad numeric field: {exc}") from exc
        rows.append(parsed)
    return rows


def read_tradeoff_points(path: str | os.PathLike) -> list[TradeoffPoint]:
    return [
        TradeoffPoint(r["label"], r["eer"], r["uar"], r["wer"], r["mix_fraction"])
        for r in read_tradeoff_csv(path)
    ]
