"""Encoder / projection / codebook stack with explicit numpy parameters.

The encoder is a small tanh MLP whose bottom blocks are frozen; what gets
fine-tuned are the top blocks, a linear projection whose rows are
L2-normalized, and a unit-norm codebook scored by scaled cosine similarity.
Everything is plain float arrays so gradients can be written out by hand
and checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

CHECKPOINT_VERSION = 1


@dataclass
class EncoderParams:
    weights: list[np.ndarray]      # (d_in, d_out) per layer
    biases: list[np.ndarray]
    n_frozen: int

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_trainable(self) -> int:
        return self.n_layers - self.n_frozen

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.n_frozen)


@dataclass
class ProjectionParams:
    weight: np.ndarray             # (hidden_dim, D)
    bias: np.ndarray               # (D,)

    def copy(self) -> "ProjectionParams":
        return ProjectionParams(self.weight.copy(), self.bias.copy())


@dataclass
class Codebook:
    codewords: np.ndarray          # (K, D), unit-norm rows
    tau: float

    @property
    def k(self) -> int:
        return self.codewords.shape[0]

    @property
    def d(self) -> int:
        return self.codewords.shape[1]

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValidationError(f"tau must be positive, got {self.tau:g}")
        norms = np.linalg.norm(self.codewords, axis=1)
        worst = np.abs(norms - 1.0).max()
        if worst > 1e-6:
            raise ValidationError(f"codeword norms deviate from 1 by {worst:.3g}")

    def renormalize(self) -> None:
        self.codewords /= np.linalg.norm(self.codewords, axis=1, keepdims=True)

    def copy(self) -> "Codebook":
        return Codebook(self.codewords.copy(), self.tau)


def _glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def init_params(input_dim: int, hidden_dim: int, n_layers: int, n_frozen: int,
                k: int, d: int, tau: float = 0.1, seed: int = 0,
                ) -> tuple[EncoderParams, ProjectionParams, Codebook]:
    """Variance-scaled uniform affine weights; codewords on the unit sphere."""
    for name, val in (("input_dim", input_dim), ("hidden_dim", hidden_dim),
                      ("k", k), ("d", d)):
        if val <= 0:
            raise ValidationError(f"{name} must be positive, got {val}")
    if not (0 <= n_frozen <= n_layers):
        raise ValidationError(f"n_frozen={n_frozen} outside [0, n_layers={n_layers}]")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    d_in = input_dim
    for _ in range(n_layers):
        weights.append(_glorot(rng, d_in, hidden_dim))
        biases.append(np.zeros(hidden_dim))
        d_in = hidden_dim
    encoder = EncoderParams(weights=weights, biases=biases, n_frozen=n_frozen)
    projection = ProjectionParams(weight=_glorot(rng, d_in, d),
                                  bias=np.zeros(d))
    codewords = rng.normal(size=(k, d))
    codewords /= np.linalg.norm(codewords, axis=1, keepdims=True)
    codebook = Codebook(codewords=codewords, tau=tau)
    codebook.validate()
    return encoder, projection, codebook


def encode(batch: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Run the tanh MLP; with zero layers this is the identity."""
    h = np.asarray(batch, dtype=np.float64)
    if params.n_layers and h.shape[1] != params.weights[0].shape[0]:
        raise ValidationError(
            f"input dim {h.shape[1]} does not match encoder input "
            f"{params.weights[0].shape[0]}")
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w + b)
    return h


def encode_with_cache(batch: np.ndarray, params: EncoderParams
                      ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Like encode, but also returns each layer's activation for backprop."""
    h = np.asarray(batch, dtype=np.float64)
    acts = [h]
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w + b)
        acts.append(h)
    return h, acts


def project_normalize(hidden: np.ndarray, proj: ProjectionParams) -> np.ndarray:
    """Affine projection followed by row L2 normalization."""
    pre = hidden @ proj.weight + proj.bias
    norms = np.linalg.norm(pre, axis=1)
    if np.any(norms < 1e-8):
        bad = int(np.argmin(norms))
        raise ValidationError(
            f"projected row {bad} has near-zero norm {norms[bad]:.3g}; "
            f"degenerate input")
    return pre / norms[:, None]


def code_probabilities(z: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Softmax over scaled cosine similarity to every codeword.

    Rows of z must be unit-norm, so z @ C.T is exactly the cosine matrix.
    """
    row_norms = np.linalg.norm(z, axis=1)
    if np.abs(row_norms - 1.0).max() > 1e-6:
        raise ValidationError("z rows are not unit-norm; call project_normalize")
    logits = (z @ codebook.codewords.T) / codebook.tau
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def quantize_argmax(p: np.ndarray) -> np.ndarray:
    """Per-frame code id; ties resolve to the smallest index."""
    return np.argmax(p, axis=1)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, encoder: EncoderParams,
                    projection: ProjectionParams, codebook: Codebook,
                    step: int) -> None:
    """Single-file binary checkpoint; round-trips bit-exactly."""
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "step": np.array(step, dtype=np.int64),
        "n_frozen": np.array(encoder.n_frozen, dtype=np.int64),
        "n_layers": np.array(encoder.n_layers, dtype=np.int64),
        "tau": np.array(codebook.tau, dtype=np.float64),
        "proj_weight": projection.weight,
        "proj_bias": projection.bias,
        "codewords": codebook.codewords,
    }
    for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        arrays[f"enc_weight_{i}"] = w
        arrays[f"enc_bias_{i}"] = b
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str | Path
                    ) -> tuple[EncoderParams, ProjectionParams, Codebook, int]:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        n_layers = int(data["n_layers"])
        encoder = EncoderParams(
            weights=[data[f"enc_weight_{i}"] for i in range(n_layers)],
            biases=[data[f"enc_bias_{i}"] for i in range(n_layers)],
            n_frozen=int(data["n_frozen"]))
        projection = ProjectionParams(weight=data["proj_weight"],
                                      bias=data["proj_bias"])
        codebook = Codebook(codewords=data["codewords"], tau=float(data["tau"]))
        step = int(data["step"])
    return encoder, projection, codebook, step
