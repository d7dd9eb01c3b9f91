"""Command-line entry point: ``voxanon <subcommand> ...``.

Data goes to files or stdout; diagnostics go to stderr. Exit status is 0 only
when every requested item succeeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import admixture, codebook_ctc, eval_metrics, io_formats, pipeline
from .errors import IoError, SchemaError, VoxAnonError
from .knn_engine import METRICS
from .synthetic import SyntheticCorpusSpec, generate_synthetic_corpus

log = logging.getLogger("voxanon")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed (default 0)")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker threads (default 1)")
    p.add_argument("--config", default=argparse.SUPPRESS, help="flat key=value run config")
    p.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def _opt(args: argparse.Namespace, name: str, default=None):
    return getattr(args, name, default)


def _emit(args: argparse.Namespace, metric: str, value: float, components: dict) -> None:
    if _opt(args, "json", False):
        print(json.dumps({"metric": metric, "value": value, "components": components}, sort_keys=True))
    else:
        extra = " ".join(f"{k}={v}" for k, v in components.items() if not isinstance(v, (dict, list)))
        print(f"{metric} {value:.6f} {extra}".rstrip())


def _feature_paths(inputs: Sequence[str]) -> list[Path]:
    paths: list[Path] = []
    for item in inputs:
        p = Path(item)
        paths.extend(io_formats.list_feature_files(p) if p.is_dir() else [p])
    if not paths:
        raise SchemaError("no feature files given")
    return paths


def _key_values(items: Sequence[str], what: str) -> dict[str, str]:
    out = {}
    for item in items:
        for part in item.split(","):
            key, sep, value = part.partition("=")
            if not sep or not key:
                raise SchemaError(f"{what} entries must look like NAME=VALUE, got {part!r}")
            out[key.strip()] = value.strip()
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_convert(args: argparse.Namespace) -> int:
    config = pipeline.load_config(
        _opt(args, "config"),
        k=args.k,
        noise_bound=args.noise_bound,
        length_factor_range=tuple(args.length_range) if args.length_range else None,
        pool_weights=tuple(args.pool_weights) if args.pool_weights else None,
        seed=_opt(args, "seed"),
        worker_count=_opt(args, "workers"),
        metric=args.metric,
    )
    summary = pipeline.run_convert(config, args.source_dir, args.target_manifest, args.out_dir)
    log.info("converted %d utterances, %d failed", summary["n_utterances"], summary["n_failed"])
    return 0 if summary["ok"] else 1


def cmd_kmeans(args: argparse.Namespace) -> int:
    frames = np.concatenate([io_formats.read_feature_file(p).frames for p in _feature_paths(args.inputs)])
    cb = codebook_ctc.kmeans_fit(frames, args.k, args.max_iters, _opt(args, "seed", 0))
    io_formats.write_npy(args.out, cb.centroids.astype(np.float32))
    _emit(args, "inertia", cb.inertia_history[-1], {
        "K": cb.K, "iterations": len(cb.inertia_history) - 1, "n_frames": int(frames.shape[0]),
    })
    return 0


def _read_codebook(path: str) -> codebook_ctc.Codebook:
    return codebook_ctc.Codebook(io_formats.read_npy(path, ndim=2))


def cmd_discretize(args: argparse.Namespace) -> int:
    cb = _read_codebook(args.codebook)
    out = {}
    for p in _feature_paths(args.inputs):
        seq = io_formats.read_feature_file(p)
        tokens = codebook_ctc.discretize(seq.frames, cb)
        out[seq.utterance_id] = codebook_ctc.collapse_repeats(tokens) if args.collapse else tokens
    io_formats.write_token_file(out, args.out)
    return 0


def cmd_ctc_loss(args: argparse.Namespace) -> int:
    cb = _read_codebook(args.codebook)
    config = codebook_ctc.CtcConfig(args.temperature, args.blank_logit, args.distance_logits)
    targets = io_formats.read_token_file(args.tokens)
    losses, failed = {}, 0
    for p in _feature_paths(args.inputs):
        seq = io_formats.read_feature_file(p)
        if seq.utterance_id not in targets:
            log.error("%s: no target tokens", seq.utterance_id)
            failed += 1
            continue
        target = targets[seq.utterance_id]
        if not args.no_collapse:
            target = codebook_ctc.collapse_repeats(target)
        res = codebook_ctc.ctc_loss(seq.frames, target, cb, config)
        if not res.feasible:
            log.error("%s: infeasible (%d frames, %d tokens)", seq.utterance_id, seq.T, len(target))
            failed += 1
            continue
        losses[seq.utterance_id] = res.loss
        if args.grad_dir:
            io_formats.write_npy(Path(args.grad_dir) / f"{seq.utterance_id}.npy", res.grad.astype(np.float32))
    mean = float(np.mean(list(losses.values()))) if losses else float("nan")
    _emit(args, "ctc_loss", mean, {"n": len(losses), "failed": failed, "per_utterance": losses})
    return 0 if failed == 0 else 1


def cmd_score(args: argparse.Namespace) -> int:
    trials = io_formats.read_trial_list(args.trials)
    speakers = io_formats.read_speaker_map(args.enroll_speakers)
    pools: dict[str, list] = {}
    for emb in io_formats.read_embedding_dir(args.enroll_dir, speakers).values():
        if emb.speaker_id is None:
            raise SchemaError(f"enrollment utterance {emb.utterance_id!r} has no speaker in the map")
        pools.setdefault(emb.speaker_id, []).append(emb)
    tests = io_formats.read_embedding_dir(args.test_dir)
    scores = eval_metrics.score_trials(trials, pools, tests, args.pooling)
    io_formats.write_score_file(scores, args.out)
    return 0


def cmd_eer(args: argparse.Namespace) -> int:
    res = eval_metrics.compute_eer(io_formats.read_score_file(args.scores))
    _emit(args, "eer", res.eer, {
        "threshold": res.threshold, "n_target": res.n_target, "n_nontarget": res.n_nontarget,
        "method": "linear-interpolation",
    })
    return 0


def cmd_wer(args: argparse.Namespace) -> int:
    res = eval_metrics.corpus_wer(io_formats.read_transcripts(args.ref), io_formats.read_transcripts(args.hyp))
    _emit(args, "wer", res.wer, {
        "substitutions": res.substitutions, "deletions": res.deletions,
        "insertions": res.insertions, "n_ref": res.n_ref,
    })
    return 0


def cmd_uar(args: argparse.Namespace) -> int:
    gold = io_formats.read_label_file(args.gold)
    pred = io_formats.read_label_file(args.pred)
    missing = [u for u in gold if u not in pred]
    if missing:
        raise SchemaError(f"{len(missing)} utterances have no prediction, e.g. {missing[0]!r}")
    res = eval_metrics.unweighted_average_recall((gold[u], pred[u]) for u in gold)
    _emit(args, "uar", res.uar, {"per_class_recall": res.per_class_recall})
    return 0


def _read_ids(source: str) -> list[str]:
    p = Path(source)
    if p.is_dir():
        # JSON files are run summaries or manifests, not utterance outputs
        return sorted({f.stem for f in p.iterdir() if f.is_file() and f.suffix != ".json"})
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {p}: {exc}") from exc
    return [line.split()[0] for line in lines if line.strip()]


def cmd_admix_plan(args: argparse.Namespace) -> int:
    p = {k: float(v) for k, v in _key_values(args.p, "--p").items()}
    plan = admixture.plan_admixture(_read_ids(args.ids), p, _opt(args, "seed", 0))
    admixture.write_plan(plan, args.out)
    counts = plan.counts()
    _emit(args, "admix_plan", len(plan.assignments), {"counts": counts, **counts})
    return 0


def cmd_admix_apply(args: argparse.Namespace) -> int:
    plan = admixture.read_plan(args.plan)
    dirs = _key_values(args.backend, "--backend")
    manifest = admixture.apply_admixture(
        plan, dirs, args.out_dir, suffix=args.suffix, link=args.link, workers=_opt(args, "workers", 1)
    )
    log.info("mixed %d utterances: %s", len(manifest["entries"]), manifest["counts"])
    return 0


def cmd_admix_report(args: argparse.Namespace) -> int:
    rows = admixture.tradeoff_report(admixture.read_tradeoff_points(args.points), args.out)
    if _opt(args, "json", False):
        print(json.dumps(rows, sort_keys=True))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticCorpusSpec(
        n_speakers=args.n_speakers,
        frames_per_speaker=args.frames_per_speaker,
        D=args.dim,
        cluster_separation=args.separation,
        seed=_opt(args, "seed", 0),
        utterances_per_speaker=args.utterances_per_speaker,
        sigma=args.sigma,
    )
    manifest = generate_synthetic_corpus(spec, args.out_dir)
    log.info("wrote %d speakers to %s", len(manifest["speakers"]), args.out_dir)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="voxanon", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="kNN-VC anonymize a directory of feature files")
    p.add_argument("--source-dir", required=True)
    p.add_argument("--target-manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--noise-bound", type=float)
    p.add_argument("--length-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--pool-weights", type=float, nargs="+")
    p.add_argument("--metric", choices=METRICS)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("kmeans", parents=[common], help="fit a k-means codebook")
    p.add_argument("inputs", nargs="+", help="feature files or directories")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kmeans)

    p = sub.add_parser("discretize", parents=[common], help="nearest-centroid tokens per utterance")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--collapse", action="store_true", help="collapse adjacent repeats")
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("ctc-loss", parents=[common], help="cosine-logit CTC loss against token targets")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--codebook", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--blank-logit", type=float, default=0.0)
    p.add_argument("--distance-logits", action="store_true", help="use 1 - cos instead of cos")
    p.add_argument("--no-collapse", action="store_true", help="use targets as given")
    p.add_argument("--grad-dir", help="write per-utterance gradients here")
    p.set_defaults(func=cmd_ctc_loss)

    p = sub.add_parser("score", parents=[common], help="cosine-score trials against enrollment pools")
    p.add_argument("--trials", required=True)
    p.add_argument("--enroll-dir", required=True)
    p.add_argument("--enroll-speakers", required=True, help="JSON utterance_id -> speaker_id")
    p.add_argument("--test-dir", required=True)
    p.add_argument("--pooling", choices=eval_metrics.POOLING, default="embedding")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eer", parents=[common], help="equal error rate of a score file")
    p.add_argument("scores")
    p.set_defaults(func=cmd_eer)

    p = sub.add_parser("wer", parents=[common], help="corpus word error rate")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.set_defaults(func=cmd_wer)

    p = sub.add_parser("uar", parents=[common], help="unweighted average recall")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=cmd_uar)

    admix = sub.add_parser("admix", help="random admixture of backends")
    admix_sub = admix.add_subparsers(dest="admix_command", required=True)
    p = admix_sub.add_parser("plan", parents=[common])
    p.add_argument("--ids", required=True, help="id list file, or a directory of outputs (JSON files skipped)")
    p.add_argument("--p", nargs="+", required=True, metavar="BACKEND=PROB")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_admix_plan)
    p = admix_sub.add_parser("apply", parents=[common])
    p.add_argument("--plan", required=True)
    p.add_argument("--backend", nargs="+", required=True, metavar="BACKEND=DIR")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--suffix", help="output file suffix, e.g. .npy (default: any)")
    p.add_argument("--link", action="store_true", help="hard-link instead of copying")
    p.set_defaults(func=cmd_admix_apply)
    p = admix_sub.add_parser("report", parents=[common])
    p.add_argument("--points", required=True, help="CSV with label,mix_fraction,eer,uar,wer")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_admix_report)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic clustered corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-speakers", type=int, default=10)
    p.add_argument("--frames-per-speaker", type=int, default=500)
    p.add_argument("--utterances-per-speaker", type=int, default=20)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if _opt(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except VoxAnonError as exc:
        print(f"voxanon {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
