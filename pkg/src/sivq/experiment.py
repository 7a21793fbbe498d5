"""Experiment orchestration: TOML run configs, pipelines, and reports.

A run directory is self-describing: the stored config plus seeds reproduce
every number in metrics.json bit for bit.  Timing lives only in the
training log CSV, never in metrics.json.
"""

from __future__ import annotations

import dataclasses
import json
import os
import shutil
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import metrics as me
from . import svgplot
from .corpus import CorpusManifest, SyntheticSpec, generate_synthetic_corpus, load_corpus
from .errors import ConfigError, SivqError, ValidationError
from .features import ensure_features, extract_features
from .model import init_params, save_checkpoint
from .perturb import (PerturbConfig, perturb_waveform, sample_perturb_params,
                      shift_voice)
from .training import (TrainConfig, TrainResult, _forward_view,
                       codebook_utilization, corpus_code_ids,
                       processed_speech_hours, project_corpus, train)

OUT_ROOT_ENV = "SIVQ_OUT_ROOT"


@dataclass(frozen=True)
class EvalConfig:
    unit_metrics: bool = True
    kmeans_baseline: bool = True
    kmeans_runs: int = 3
    abx: bool = True
    abx_triples: int = 1000
    probe: bool = True
    probe_max_frames: int = 8000
    probe_layers: bool = False
    seed: int = 0


@dataclass
class RunConfig:
    corpus_spec: SyntheticSpec | None
    manifest_path: Path | None
    perturb: PerturbConfig
    train: TrainConfig
    eval: EvalConfig
    k_sweep: list[int] | None = None
    out_dir: Path | None = None

    def load_corpus(self) -> CorpusManifest:
        if self.manifest_path is not None:
            return load_corpus(self.manifest_path)
        return generate_synthetic_corpus(self.corpus_spec)


def _take(section: dict, cls, defaults, context: str):
    """Build a dataclass from a TOML section, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{context}] unknown keys: {sorted(unknown)}")
    merged = {**defaults, **section}
    for f in dataclasses.fields(cls):
        if f.name in merged and isinstance(merged[f.name], list):
            merged[f.name] = tuple(merged[f.name])
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(f"[{context}] {exc}") from exc


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    corpus_sec = dict(doc.get("corpus", {}))
    kind = corpus_sec.pop("kind", "synthetic")
    spec = None
    manifest_path = None
    if kind == "synthetic":
        spec = _take(corpus_sec, SyntheticSpec, {}, "corpus")
        try:
            spec.validate()
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
    elif kind == "manifest":
        if "path" not in corpus_sec:
            raise ConfigError("[corpus] kind='manifest' requires a path")
        manifest_path = (path.parent / corpus_sec.pop("path")).resolve()
        if corpus_sec:
            raise ConfigError(f"[corpus] unknown keys: {sorted(corpus_sec)}")
        if not manifest_path.exists():
            raise ConfigError(f"[corpus] manifest not found: {manifest_path}")
    else:
        raise ConfigError(f"[corpus] unknown kind {kind!r}")

    perturb = _take(dict(doc.get("perturb", {})), PerturbConfig, {}, "perturb")
    try:
        perturb.validate()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc

    train_sec = dict(doc.get("train", {}))
    k_sweep = None
    if isinstance(train_sec.get("k"), list):
        k_sweep = [int(k) for k in train_sec.pop("k")]
        train_sec["k"] = k_sweep[0]
    train_cfg = _take(train_sec, TrainConfig, {}, "train")
    try:
        train_cfg.validate()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc

    eval_cfg = _take(dict(doc.get("eval", {})), EvalConfig, {}, "eval")

    out_dir = None
    if "output" in doc and "dir" in doc["output"]:
        out_dir = Path(doc["output"]["dir"])

    return RunConfig(corpus_spec=spec, manifest_path=manifest_path,
                     perturb=perturb, train=train_cfg, eval=eval_cfg,
                     k_sweep=k_sweep, out_dir=out_dir)


def resolve_out_dir(config: RunConfig, cli_out: str | None,
                    config_path: str | Path) -> Path:
    if cli_out:
        return Path(cli_out)
    if config.out_dir is not None:
        return config.out_dir
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / Path(config_path).stem


# ---------------------------------------------------------------------------
# evaluation helpers


def _unit_metrics(code_ids: np.ndarray, labels: np.ndarray, n_phones: int,
                  k: int) -> dict:
    table = me.contingency(code_ids, labels, n_phones=n_phones, n_codes=k)
    out = me.purity_metrics(table)
    out["utilization"] = codebook_utilization(code_ids, k)
    return out


def _kmeans_baseline(feats: np.ndarray, labels: np.ndarray, n_phones: int,
                     k: int, n_runs: int, seed: int) -> dict:
    """Offline-clustering baseline: metrics averaged over independent runs."""
    per_run = []
    for r in range(n_runs):
        res = me.kmeans(feats, k, n_runs=1, seed=seed + r)
        table = me.contingency(res.assignments, labels, n_phones=n_phones,
                               n_codes=k)
        per_run.append(me.purity_metrics(table))
    return {key: float(np.mean([m[key] for m in per_run]))
            for key in ("cluster_purity", "phone_purity", "pnmi")}


def _abx_eval(corpus: CorpusManifest, featurize, n_triples: int,
              seed: int) -> dict[str, float]:
    labels = [u.frame_labels for u in corpus.utterances]
    speakers = [u.speaker_id for u in corpus.utterances]
    tokens = me.phone_tokens(labels, speakers)
    task = me.build_abx_task(tokens, n_triples, seed)
    token_feats = [featurize(t) for t in tokens]
    return me.abx_error(token_feats, task)


def perturbed_view_features(corpus: CorpusManifest,
                            perturb_config: PerturbConfig,
                            seed: int) -> list[np.ndarray]:
    """One random re-voicing of every utterance, as raw feature frames.

    This is the evaluation view for ABX robustness: within-speaker triples
    drawn from it differ in effective voice, so features that have not
    disentangled content from voice show errors in both regimes.
    """
    world = corpus.synthetic
    rng = np.random.default_rng(seed)
    out = []
    for utt in corpus.utterances:
        params = sample_perturb_params(perturb_config, rng)
        if world is not None and world.spec.mode == "feature":
            voice = world.voices[utt.speaker_id]
            out.append(world.render_frames(utt.frame_labels,
                                           shift_voice(voice, params),
                                           world.spec.noise_std, rng))
        else:
            if utt.waveform is None:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r} has no waveform to perturb")
            out.append(extract_features(perturb_waveform(utt.waveform, params)))
    return out


def _subsample(n: int, limit: int, seed: int) -> np.ndarray:
    if n <= limit:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=limit,
                                                      replace=False))


def evaluate_run(corpus: CorpusManifest, result: TrainResult,
                 config: RunConfig) -> dict:
    """All configured metrics for a trained stack plus its baselines."""
    ev = config.eval
    feats, labels, speakers = corpus.all_frames()
    n_phones = len(corpus.phones)
    k = config.train.k
    out: dict = {"k": k, "seed": config.train.seed}

    code_ids = corpus_code_ids(corpus, result)
    z = project_corpus(corpus, result)

    if ev.unit_metrics:
        out["units"] = _unit_metrics(code_ids, labels, n_phones, k)
        table = me.contingency(code_ids, labels, n_phones=n_phones, n_codes=k)
        heat, phone_order, unused = me.code_phone_heatmap(table)
        out["heatmap"] = {"phone_order": [int(p) for p in phone_order],
                          "unused_codes": unused}
        out["_heatmap_matrix"] = heat
    if ev.kmeans_baseline:
        out["kmeans_baseline"] = _kmeans_baseline(
            feats, labels, n_phones, k, ev.kmeans_runs, ev.seed)

    if ev.abx:
        # both featurizers score the same perturbed view of the corpus, so
        # the comparison isolates voice robustness
        pview = perturbed_view_features(corpus, config.perturb, ev.seed + 1)
        pcat = np.concatenate(pview)
        z_pert = _forward_view(pcat, result.encoder, result.projection,
                               result.codebook)["z"]
        offsets = np.cumsum([0] + [len(f) for f in pview])

        def raw_featurize(tok):
            lo = offsets[tok.utterance_index] + tok.start
            return pcat[lo:lo + (tok.stop - tok.start)]

        def trained_featurize(tok):
            lo = offsets[tok.utterance_index] + tok.start
            return z_pert[lo:lo + (tok.stop - tok.start)]

        out["abx"] = {
            "raw": _abx_eval(corpus, raw_featurize, ev.abx_triples, ev.seed),
            "trained": _abx_eval(corpus, trained_featurize, ev.abx_triples,
                                 ev.seed),
        }

    if ev.probe:
        idx = _subsample(len(labels), ev.probe_max_frames, ev.seed)
        init_stack = TrainResult(*init_params(
            input_dim=corpus.feature_dim(), hidden_dim=config.train.hidden_dim,
            n_layers=config.train.n_layers, n_frozen=config.train.n_frozen,
            k=k, d=config.train.d, tau=config.train.tau,
            seed=config.train.seed), step=0)
        z_init = project_corpus(corpus, init_stack)
        probe = {
            "chance": 1.0 / len(corpus.speakers),
            "initial": me.speaker_probe(z_init[idx], speakers[idx], ev.seed),
            "trained": me.speaker_probe(z[idx], speakers[idx], ev.seed),
        }
        if ev.probe_layers:
            from .model import encode_with_cache
            _, acts = encode_with_cache(feats, result.encoder)
            per_layer = [me.speaker_probe(a[idx], speakers[idx], ev.seed)
                         for a in acts]
            per_layer.append(me.speaker_probe(z[idx], speakers[idx], ev.seed))
            probe["per_layer"] = per_layer
        out["probe"] = probe
    return out


# ---------------------------------------------------------------------------
# the pipeline


def _stage(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ConfigError:
                raise
            except SivqError as exc:
                raise SivqError(f"stage {name!r} failed: {exc}") from exc
        return inner
    return wrap


def _write_metrics(run_dir: Path, metrics: dict) -> None:
    clean = {key: value for key, value in metrics.items()
             if not key.startswith("_")}
    (run_dir / "metrics.json").write_text(
        json.dumps(clean, indent=2, sort_keys=True) + "\n")


def _run_single(config: RunConfig, run_dir: Path) -> dict:
    corpus = _stage("corpus")(config.load_corpus)()
    ensure_features(corpus)

    result, log = _stage("train")(train)(corpus, config.train, config.perturb)
    save_checkpoint(run_dir / "checkpoint.npz", result.encoder,
                    result.projection, result.codebook, result.step)
    log.to_csv(run_dir / "trainlog.csv")

    metrics = _stage("eval")(evaluate_run)(corpus, result, config)
    metrics["train"] = {
        "steps": result.step,
        "final_loss": log.records[-1].loss if log.records else None,
        "processed_speech_hours": processed_speech_hours(
            result.step, config.train.batch_seconds),
    }
    _write_metrics(run_dir, metrics)
    _plots(run_dir, metrics, log)
    return metrics


def _plots(run_dir: Path, metrics: dict, log) -> None:
    plots = run_dir / "plots"
    plots.mkdir(exist_ok=True)
    if log.records:
        steps = np.array([r.step for r in log.records])
        svgplot.line_plot(plots / "utilization.svg",
                          {"utilization": (steps,
                                           [r.utilization for r in log.records])},
                          "Codebook utilization over training", "step",
                          "fraction of codewords used")
        svgplot.line_plot(plots / "loss.svg",
                          {"loss": (steps, [r.loss for r in log.records])},
                          "Swapped-prediction loss", "step", "loss")
    if "_heatmap_matrix" in metrics:
        svgplot.heatmap(plots / "code_phone.svg", metrics["_heatmap_matrix"],
                        "P(phone | code), phones sorted by frequency",
                        "code", "phone (frequent at top)")
    probe = metrics.get("probe", {})
    if "per_layer" in probe:
        acc = probe["per_layer"]
        svgplot.line_plot(plots / "probe_layers.svg",
                          {"speaker probe": (np.arange(len(acc)), acc)},
                          "Speaker identification per layer", "layer",
                          "accuracy", markers=True)


def run_experiment(config_path: str | Path, out_dir: str | Path | None = None
                   ) -> Path:
    """Execute generate/load -> train -> eval, writing a run directory."""
    config = parse_config(config_path)
    run_dir = resolve_out_dir(config, str(out_dir) if out_dir else None,
                              config_path)
    run_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(config_path, run_dir / "config.toml")

    if config.k_sweep:
        sweep_rows = []
        for k in config.k_sweep:
            sub = replace(config, train=replace(config.train, k=k), k_sweep=None)
            sub_dir = run_dir / f"k{k:04d}"
            sub_dir.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(config_path, sub_dir / "config.toml")
            metrics = _run_single(sub, sub_dir)
            sweep_rows.append(metrics)
        ks = np.array([row["k"] for row in sweep_rows], dtype=float)
        pnmi = [row["units"]["pnmi"] for row in sweep_rows]
        purity = [row["units"]["phone_purity"] for row in sweep_rows]
        (run_dir / "plots").mkdir(exist_ok=True)
        svgplot.line_plot(run_dir / "plots" / "pnmi_vs_k.svg",
                          {"PNMI": (ks, pnmi), "phone purity": (ks, purity)},
                          "Unit quality vs codebook size", "K", "score",
                          markers=True)
        _write_metrics(run_dir, {"sweep": {
            "k": [int(v) for v in ks],
            "pnmi": pnmi,
            "phone_purity": purity,
        }})
    else:
        _run_single(config, run_dir)
    return run_dir


# ---------------------------------------------------------------------------
# report


_COLUMNS = ["run", "k", "cluster_purity", "phone_purity", "pnmi",
            "utilization", "abx_within", "abx_across", "probe_acc", "hours"]


def _report_row(run_dir: Path) -> dict:
    path = run_dir / "metrics.json"
    if not path.exists():
        raise SivqError(f"missing metrics file: {path}")
    doc = json.loads(path.read_text())
    units = doc.get("units", {})
    abx = doc.get("abx", {}).get("trained", {})
    return {
        "run": run_dir.name,
        "k": doc.get("k"),
        "cluster_purity": units.get("cluster_purity"),
        "phone_purity": units.get("phone_purity"),
        "pnmi": units.get("pnmi"),
        "utilization": units.get("utilization"),
        "abx_within": abx.get("within"),
        "abx_across": abx.get("across"),
        "probe_acc": doc.get("probe", {}).get("trained"),
        "hours": doc.get("train", {}).get("processed_speech_hours"),
    }


def report(run_dirs: list[str | Path], out_csv: str | Path | None = None
           ) -> str:
    """Markdown comparison table over completed runs; optional CSV copy."""
    if not run_dirs:
        raise SivqError("report needs at least one run directory")
    rows = [_report_row(Path(d)) for d in run_dirs]
    rows.sort(key=lambda r: (r["k"] if r["k"] is not None else -1, r["run"]))

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    lines = ["| " + " | ".join(_COLUMNS) + " |",
             "| " + " | ".join("---" for _ in _COLUMNS) + " |"]
    for r in rows:
        lines.append("| " + " | ".join(cell(r[c]) for c in _COLUMNS) + " |")
    table = "\n".join(lines)
    if out_csv is not None:
        csv_lines = [",".join(_COLUMNS)]
        for r in rows:
            csv_lines.append(",".join(
                "" if r[c] is None else (f"{r[c]!r}" if isinstance(r[c], float)
                                         else str(r[c])) for c in _COLUMNS))
        Path(out_csv).write_text("\n".join(csv_lines) + "\n")
    return table
