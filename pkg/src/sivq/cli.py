"""Command-line entry points.

Exit codes: 0 on success, 2 for configuration problems, 3 for a failed
pipeline stage.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as me
from .corpus import (generate_synthetic_corpus, load_corpus, load_wav,
                     save_corpus, save_wav)
from .errors import ConfigError, SivqError
from .experiment import (parse_config, report, resolve_out_dir,
                         run_experiment, _abx_eval, _unit_metrics)
from .features import ensure_features
from .model import load_checkpoint
from .perturb import PerturbConfig, perturb_waveform, sample_perturb_params
from .training import (TrainResult, codebook_utilization, corpus_code_ids,
                       processed_speech_hours, project_corpus, train)


def _cmd_gen_corpus(args) -> int:
    config = parse_config(args.config)
    if config.corpus_spec is None:
        raise ConfigError("gen-corpus needs a [corpus] section with kind='synthetic'")
    manifest = generate_synthetic_corpus(config.corpus_spec)
    path = save_corpus(manifest, args.out)
    print(f"wrote {path} ({len(manifest.utterances)} utterances, "
          f"{manifest.total_seconds:.1f} s)")
    return 0


def _cmd_perturb(args) -> int:
    config = PerturbConfig(
        formant_range=(1.0, args.formant_hi), f0_range=(1.0, args.f0_hi),
        invert_prob=args.invert_prob, n_eq_peaks=args.eq_peaks,
        eq_gain_range_db=args.eq_gain_db, seed=args.seed)
    params = sample_perturb_params(config, np.random.default_rng(args.seed))
    wave = load_wav(args.infile)
    save_wav(args.outfile, perturb_waveform(wave, params))
    if args.params_json:
        Path(args.params_json).write_text(
            json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.outfile} (formant x{params.formant_ratio:.3f}, "
          f"f0 x{params.f0_ratio:.3f})")
    return 0


def _cmd_train(args) -> int:
    config = parse_config(args.config)
    out = Path(args.out) if args.out else resolve_out_dir(config, None,
                                                          args.config)
    out.mkdir(parents=True, exist_ok=True)
    corpus = config.load_corpus()
    result, log = train(corpus, config.train, config.perturb)
    from .model import save_checkpoint
    save_checkpoint(out / "checkpoint.npz", result.encoder, result.projection,
                    result.codebook, result.step)
    log.to_csv(out / "trainlog.csv")
    ids = corpus_code_ids(corpus, result)
    summary = {
        "steps": result.step,
        "final_loss": log.records[-1].loss if log.records else None,
        "utilization": codebook_utilization(ids, config.train.k),
        "processed_speech_hours": processed_speech_hours(
            result.step, config.train.batch_seconds),
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"trained {result.step} steps -> {out}")
    return 0


def _featurize_tokens(corpus, checkpoint: str | None):
    feats, labels, speakers = corpus.all_frames()
    if checkpoint:
        enc, proj, cb, step = load_checkpoint(checkpoint)
        result = TrainResult(enc, proj, cb, step)
        z = project_corpus(corpus, result)
        return z, labels, speakers, result
    return feats, labels, speakers, None


def _cmd_eval_units(args) -> int:
    corpus = load_corpus(args.manifest)
    ensure_features(corpus)
    feats, labels, _, result = _featurize_tokens(corpus, args.checkpoint)
    n_phones = len(corpus.phones)
    if result is not None:
        ids = corpus_code_ids(corpus, result)
        out = _unit_metrics(ids, labels, n_phones, result.codebook.k)
    else:
        res = me.kmeans(feats, args.kmeans, n_runs=args.kmeans_runs,
                        seed=args.seed)
        out = _unit_metrics(res.assignments, labels, n_phones, args.kmeans)
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_eval_abx(args) -> int:
    corpus = load_corpus(args.manifest)
    ensure_features(corpus)
    feats, _, _, result = _featurize_tokens(corpus, args.checkpoint)
    offsets = np.cumsum([0] + [u.n_frames for u in corpus.utterances])

    def featurize(tok):
        lo = offsets[tok.utterance_index] + tok.start
        return feats[lo:lo + (tok.stop - tok.start)]

    out = _abx_eval(corpus, featurize, args.triples, args.seed)
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_probe(args) -> int:
    corpus = load_corpus(args.manifest)
    ensure_features(corpus)
    feats, _, speakers, result = _featurize_tokens(corpus, args.checkpoint)
    acc = me.speaker_probe(feats, speakers, split_seed=args.seed)
    out = {"accuracy": acc, "chance": 1.0 / len(corpus.speakers)}
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_run(args) -> int:
    run_dir = run_experiment(args.config, args.out)
    print(f"run complete -> {run_dir}")
    return 0


def _cmd_report(args) -> int:
    table = report(args.run_dirs, out_csv=args.out)
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sivq",
        description="Speaker-invariant codebook learning and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--config", required=True, help="TOML file with a [corpus] section")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(fn=_cmd_gen_corpus)

    p = sub.add_parser("perturb", help="speaker-perturb a WAV file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--formant-hi", type=float, default=1.4)
    p.add_argument("--f0-hi", type=float, default=2.0)
    p.add_argument("--invert-prob", type=float, default=0.5)
    p.add_argument("--eq-peaks", type=int, default=8)
    p.add_argument("--eq-gain-db", type=float, default=12.0)
    p.add_argument("--params-json", default=None,
                   help="also write the sampled transform as JSON")
    p.set_defaults(fn=_cmd_perturb)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval-units", help="discrete-unit quality metrics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--kmeans", type=int, default=64,
                   help="cluster count when no checkpoint is given")
    p.add_argument("--kmeans-runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_eval_units)

    p = sub.add_parser("eval-abx", help="ABX phone discriminability")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--triples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_eval_abx)

    p = sub.add_parser("probe", help="speaker identification probe")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_probe)

    p = sub.add_parser("run", help="full generate/train/eval pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("report", help="comparison table over run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SivqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
