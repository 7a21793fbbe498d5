"""Swapped-prediction training with analytic gradients.

Each step builds an original/perturbed view pair, forwards both through the
shared stack, computes smoothed targets per view (constants, no gradient),
and minimizes the symmetric cross-entropy in which each view predicts the
other view's targets.  Gradients are written out by hand through softmax,
cosine scoring, L2 normalization, and the affine/tanh layers, which keeps
them checkable against central finite differences.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import (CorpusManifest, FrameBatch, FrameBatchPair, batch_frames)
from .errors import TrainingDiverged, ValidationError
from .features import DEFAULT_FEATURES, FeatureConfig, ensure_features, extract_features
from .model import (Codebook, EncoderParams, ProjectionParams,
                    code_probabilities, encode_with_cache, init_params,
                    quantize_argmax)
from .perturb import (PerturbConfig, perturb_synthetic, perturb_waveform,
                      sample_perturb_params, shift_voice)
from .sinkhorn import SinkhornConfig, smooth_targets

LOG_FLOOR = 1e-30


@dataclass(frozen=True)
class TrainConfig:
    """All training scalars, with defaults matching the reference recipe."""

    k: int = 256
    d: int = 256
    tau: float = 0.1
    epsilon: float = 0.02
    sinkhorn_iters: int = 3
    batch_seconds: float = 256.0
    total_steps: int = 5000
    warmup_steps: int = 2500
    lr_peak: float = 1e-4
    lr_final: float = 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    hidden_dim: int = 256
    n_layers: int = 3
    n_frozen: int = 1
    target_mode: str = "sinkhorn"         # "sinkhorn" | "argmax" (ablation)
    single_precision: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.warmup_steps > self.total_steps:
            raise ValidationError(
                f"warmup_steps={self.warmup_steps} exceeds total_steps="
                f"{self.total_steps}")
        if not (self.lr_peak > self.lr_final > 0):
            raise ValidationError("need lr_peak > lr_final > 0")
        if self.target_mode not in ("sinkhorn", "argmax"):
            raise ValidationError(f"unknown target_mode {self.target_mode!r}")
        if self.total_steps < 0 or self.sinkhorn_iters < 1:
            raise ValidationError("total_steps must be >= 0, sinkhorn_iters >= 1")
        if self.k < 1 or self.d < 1 or self.hidden_dim < 1:
            raise ValidationError("k, d, hidden_dim must be positive")
        if not (0 <= self.n_frozen <= self.n_layers):
            raise ValidationError("need 0 <= n_frozen <= n_layers")
        if self.tau <= 0 or self.epsilon <= 0:
            raise ValidationError("tau and epsilon must be positive")


@dataclass
class StepRecord:
    step: int
    loss: float
    lr: float
    utilization: float
    mean_prob_entropy: float
    wall_s: float


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_csv(self, path) -> None:
        lines = ["step,loss,lr,utilization,mean_prob_entropy,wall_s"]
        for r in self.records:
            lines.append(f"{r.step},{r.loss!r},{r.lr!r},{r.utilization!r},"
                         f"{r.mean_prob_entropy!r},{r.wall_s!r}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    encoder: EncoderParams
    projection: ProjectionParams
    codebook: Codebook
    step: int


# ---------------------------------------------------------------------------
# loss and gradients


def swapped_loss(p: np.ndarray, p_tilde: np.ndarray, q_star: np.ndarray,
                 q_tilde_star: np.ndarray) -> float:
    """Symmetric cross-entropy: each view predicts the other view's targets."""
    shapes = {p.shape, p_tilde.shape, q_star.shape, q_tilde_star.shape}
    if len(shapes) != 1:
        raise ValidationError(f"matrix shapes differ: {sorted(shapes)}")
    b = p.shape[0]
    log_p = np.log(np.maximum(p, LOG_FLOOR))
    log_pt = np.log(np.maximum(p_tilde, LOG_FLOOR))
    return float(-(np.sum(q_tilde_star * log_p) + np.sum(q_star * log_pt))
                 / (2.0 * b))


def _forward_view(x: np.ndarray, encoder: EncoderParams,
                  projection: ProjectionParams, codebook: Codebook) -> dict:
    h, acts = encode_with_cache(x, encoder)
    u = h @ projection.weight + projection.bias
    r = np.linalg.norm(u, axis=1)
    if np.any(r < 1e-8):
        raise ValidationError("projected row with near-zero norm; degenerate input")
    z = u / r[:, None]
    p = code_probabilities(z, codebook)
    return {"acts": acts, "h": h, "u": u, "r": r, "z": z, "p": p}


def compute_targets(z: np.ndarray, z_tilde: np.ndarray, codebook: Codebook,
                    config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-view target distributions; constants as far as gradients go."""
    if config.target_mode == "sinkhorn":
        sk = SinkhornConfig(epsilon=config.epsilon, n_iters=config.sinkhorn_iters,
                            mode="fixed")
        return smooth_targets(z, codebook, sk), smooth_targets(z_tilde, codebook, sk)
    # argmax ablation: hard one-hot assignment of each frame's best codeword
    def one_hot(zz: np.ndarray) -> np.ndarray:
        ids = np.argmax(zz @ codebook.codewords.T, axis=1)
        out = np.zeros((zz.shape[0], codebook.k))
        out[np.arange(zz.shape[0]), ids] = 1.0
        return out
    return one_hot(z), one_hot(z_tilde)


def forward_loss(pair: FrameBatchPair, encoder: EncoderParams,
                 projection: ProjectionParams, codebook: Codebook,
                 targets: tuple[np.ndarray, np.ndarray]) -> float:
    """Loss at fixed targets; the function finite-difference checks probe."""
    f1 = _forward_view(pair.original, encoder, projection, codebook)
    f2 = _forward_view(pair.perturbed, encoder, projection, codebook)
    q_star, q_tilde_star = targets
    return swapped_loss(f1["p"], f2["p"], q_star, q_tilde_star)


def _backprop_view(forward: dict, d_s: np.ndarray, encoder: EncoderParams,
                   projection: ProjectionParams, codebook: Codebook,
                   grads: dict) -> None:
    z, u, r, h, acts = (forward["z"], forward["u"], forward["r"], forward["h"],
                        forward["acts"])
    grads["codewords"] += d_s.T @ z / codebook.tau
    d_z = d_s @ codebook.codewords / codebook.tau
    d_u = (d_z - z * np.sum(z * d_z, axis=1, keepdims=True)) / r[:, None]
    grads["proj_w"] += h.T @ d_u
    grads["proj_b"] += d_u.sum(axis=0)
    d_a = d_u @ projection.weight.T
    for layer in range(encoder.n_layers - 1, encoder.n_frozen - 1, -1):
        a = acts[layer + 1]
        g = d_a * (1.0 - a * a)
        grads[f"enc_w_{layer}"] += acts[layer].T @ g
        grads[f"enc_b_{layer}"] += g.sum(axis=0)
        if layer > encoder.n_frozen:
            d_a = g @ encoder.weights[layer].T


def loss_gradients(pair: FrameBatchPair, encoder: EncoderParams,
                   projection: ProjectionParams, codebook: Codebook,
                   config: TrainConfig,
                   targets: tuple[np.ndarray, np.ndarray] | None = None,
                   ) -> tuple[float, dict, dict]:
    """Analytic gradients of the swapped loss for all trainable blocks.

    Frozen encoder blocks get exact zeros; targets never receive gradient.
    Returns (loss, gradients keyed by block name, forward aux).
    """
    f1 = _forward_view(pair.original, encoder, projection, codebook)
    f2 = _forward_view(pair.perturbed, encoder, projection, codebook)
    if targets is None:
        targets = compute_targets(f1["z"], f2["z"], codebook, config)
    q_star, q_tilde_star = targets
    loss = swapped_loss(f1["p"], f2["p"], q_star, q_tilde_star)

    grads = {f"enc_w_{i}": np.zeros_like(encoder.weights[i])
             for i in range(encoder.n_layers)}
    grads.update({f"enc_b_{i}": np.zeros_like(encoder.biases[i])
                  for i in range(encoder.n_layers)})
    grads["proj_w"] = np.zeros_like(projection.weight)
    grads["proj_b"] = np.zeros_like(projection.bias)
    grads["codewords"] = np.zeros_like(codebook.codewords)

    b = pair.n_frames
    _backprop_view(f1, (f1["p"] - q_tilde_star) / (2.0 * b), encoder,
                   projection, codebook, grads)
    _backprop_view(f2, (f2["p"] - q_star) / (2.0 * b), encoder,
                   projection, codebook, grads)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValidationError(f"non-finite gradient in block {name!r}")
    aux = {"p": f1["p"], "p_tilde": f2["p"], "z": f1["z"], "z_tilde": f2["z"],
           "targets": targets}
    return loss, grads, aux


# ---------------------------------------------------------------------------
# optimizer and schedule


class Adam:
    """Adaptive moment estimation with decoupled weight decay."""

    def __init__(self, param_refs: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = param_refs
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in param_refs.items()}
        self.v = {k: np.zeros_like(v) for k, v in param_refs.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= lr * update


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear warmup to lr_peak, then linear decay to lr_final."""
    if not (0 <= step <= config.total_steps):
        raise ValidationError(
            f"step {step} outside [0, {config.total_steps}]")
    if step <= config.warmup_steps:
        if config.warmup_steps == 0:
            return config.lr_peak
        return config.lr_peak * step / config.warmup_steps
    span = config.total_steps - config.warmup_steps
    frac = (step - config.warmup_steps) / span
    return config.lr_peak * (1.0 - frac) + config.lr_final * frac


# ---------------------------------------------------------------------------
# bookkeeping


def processed_speech_hours(steps: int, effective_batch_seconds: float) -> float:
    """Machine-independent training cost: steps times one view's seconds."""
    if steps < 0 or effective_batch_seconds < 0:
        raise ValidationError("steps and effective_batch_seconds must be >= 0")
    return steps * effective_batch_seconds / 3600.0


def codebook_utilization(code_ids: np.ndarray, k: int) -> float:
    """Fraction of codewords that are the argmax for at least one frame."""
    ids = np.asarray(code_ids)
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise ValidationError(
            f"code id out of range [0, {k}): {int(ids.min())}..{int(ids.max())}")
    return len(np.unique(ids)) / k


def _entropy(dist: np.ndarray) -> float:
    d = dist[dist > 0]
    return float(-np.sum(d * np.log(d)))


# ---------------------------------------------------------------------------
# batch pairing and the loop


def make_batch_pair(batch: FrameBatch, corpus: CorpusManifest,
                    perturb_config: PerturbConfig, rng: np.random.Generator,
                    feature_config: FeatureConfig = DEFAULT_FEATURES,
                    ) -> FrameBatchPair:
    """Build the perturbed view for a packed batch, one draw per utterance."""
    world = corpus.synthetic
    perturbed = []
    for utt in batch.utterances:
        params = sample_perturb_params(perturb_config, rng)
        if world is not None and world.spec.mode == "feature":
            voice_in = world.voices[utt.speaker_id]
            view = perturb_synthetic(utt.features, utt.frame_labels, world,
                                     voice_in, shift_voice(voice_in, params),
                                     rng)
        else:
            if utt.waveform is None:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r} has no waveform to perturb")
            view = extract_features(perturb_waveform(utt.waveform, params),
                                    feature_config)
        perturbed.append(view)
    return FrameBatchPair(original=batch.features,
                          perturbed=np.concatenate(perturbed),
                          labels=batch.labels, speakers=batch.speakers)


def _param_refs(encoder: EncoderParams, projection: ProjectionParams,
                codebook: Codebook, trainable_only: bool = True
                ) -> dict[str, np.ndarray]:
    refs = {}
    for i in range(encoder.n_layers):
        if trainable_only and i < encoder.n_frozen:
            continue
        refs[f"enc_w_{i}"] = encoder.weights[i]
        refs[f"enc_b_{i}"] = encoder.biases[i]
    refs["proj_w"] = projection.weight
    refs["proj_b"] = projection.bias
    refs["codewords"] = codebook.codewords
    return refs


def train(corpus: CorpusManifest, config: TrainConfig,
          perturb_config: PerturbConfig | None = None,
          feature_config: FeatureConfig = DEFAULT_FEATURES,
          ) -> tuple[TrainResult, TrainLog]:
    """Run the full fine-tuning loop; deterministic given config.seed."""
    config.validate()
    if perturb_config is None:
        perturb_config = PerturbConfig()
    ensure_features(corpus, feature_config)
    input_dim = corpus.feature_dim()

    encoder, projection, codebook = init_params(
        input_dim=input_dim, hidden_dim=config.hidden_dim,
        n_layers=config.n_layers, n_frozen=config.n_frozen,
        k=config.k, d=config.d, tau=config.tau, seed=config.seed)
    dtype = np.float32 if config.single_precision else np.float64
    encoder.weights = [w.astype(dtype) for w in encoder.weights]
    encoder.biases = [b.astype(dtype) for b in encoder.biases]
    projection.weight = projection.weight.astype(dtype)
    projection.bias = projection.bias.astype(dtype)
    codebook.codewords = codebook.codewords.astype(dtype)

    optimizer = Adam(_param_refs(encoder, projection, codebook),
                     beta1=config.adam_beta1, beta2=config.adam_beta2,
                     eps=config.adam_eps, weight_decay=config.weight_decay)
    rng_perturb = np.random.default_rng(
        np.random.SeedSequence(config.seed).spawn(1)[0])

    log = TrainLog()
    t0 = time.perf_counter()
    step = 0
    epoch = 0
    last = {"lr": 0.0, "entropy": float("nan"), "utilization": float("nan")}
    while step < config.total_steps:
        for batch in batch_frames(corpus, config.batch_seconds, config.seed,
                                  epoch):
            if step >= config.total_steps:
                break
            step += 1
            pair = make_batch_pair(batch, corpus, perturb_config, rng_perturb,
                                   feature_config)
            if dtype is np.float32:
                pair = FrameBatchPair(pair.original.astype(dtype),
                                      pair.perturbed.astype(dtype),
                                      pair.labels, pair.speakers)
            loss, grads, aux = loss_gradients(pair, encoder, projection,
                                              codebook, config)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {step}", step=step,
                    lr=last["lr"], mean_prob_entropy=last["entropy"],
                    utilization=last["utilization"])
            lr = lr_schedule(step, config)
            optimizer.step(grads, lr)
            codebook.renormalize()

            ids = np.concatenate([quantize_argmax(aux["p"]),
                                  quantize_argmax(aux["p_tilde"])])
            utilization = codebook_utilization(ids, config.k)
            entropy = _entropy(aux["p"].mean(axis=0))
            last = {"lr": lr, "entropy": entropy, "utilization": utilization}
            log.records.append(StepRecord(
                step=step, loss=loss, lr=lr, utilization=utilization,
                mean_prob_entropy=entropy,
                wall_s=time.perf_counter() - t0))
        epoch += 1
    return TrainResult(encoder=encoder, projection=projection,
                       codebook=codebook, step=step), log


def corpus_code_ids(corpus: CorpusManifest, result: TrainResult
                    ) -> np.ndarray:
    """Argmax code ids for every frame of a corpus under a trained stack."""
    feats, _, _ = corpus.all_frames()
    f = _forward_view(feats, result.encoder, result.projection, result.codebook)
    return quantize_argmax(f["p"])


def project_corpus(corpus: CorpusManifest, result: TrainResult) -> np.ndarray:
    """Projected, L2-normalized representations for every corpus frame."""
    feats, _, _ = corpus.all_frames()
    f = _forward_view(feats, result.encoder, result.projection, result.codebook)
    return f["z"]
