"""Synthetic two-factor (content x speaker) corpora, manifest IO, and batching.

A corpus is a set of utterances with frame-aligned phone labels and speaker
ids at 50 frames per second.  Synthetic corpora come in two flavors:

* feature mode: each phone has a formant-like spectral template over an
  abstract frequency axis; each speaker is an affine voice transform
  (frequency-axis warp by a formant scale, plus a pitch-tilt offset driven
  by an F0 scale).  Frames are rendered analytically, so the exact same
  content can be re-rendered under any voice.
* audio mode: each phone is rendered as a harmonic source (speaker F0 scale
  times a base pitch) through resonators at the phone's formant frequencies
  scaled by the speaker's formant scale, at 16 kHz mono.

Ground truth for both factors is retained, so clustering and probing
metrics can be scored exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal
from scipy.io import wavfile

from .errors import ValidationError

FRAME_RATE = 50.0
SAMPLE_RATE = 16000
HOP_SAMPLES = int(SAMPLE_RATE / FRAME_RATE)  # 320 samples per frame

FEATURE_MAGIC = b"SIVF"
_FEATURE_HEADER = struct.Struct("<4sII4x")  # magic, rows, cols, pad to 16 bytes


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic two-factor corpus."""

    n_phones: int = 20
    n_speakers: int = 16
    phone_frequency_skew: float = 1.0        # Zipf exponent, 0 = uniform
    frames_per_phone: tuple[int, int] = (3, 8)
    feature_dim: int = 48
    speaker_formant_scale_range: tuple[float, float] = (0.75, 1.35)
    speaker_f0_scale_range: tuple[float, float] = (0.6, 1.7)
    noise_std: float = 0.1
    mode: str = "feature"                    # "feature" | "audio"
    seed: int = 0
    n_utterances: int = 240
    phones_per_utterance: tuple[int, int] = (4, 12)
    # Depth of the deterministic onset-to-offset template glide within each
    # phone segment.  Zero keeps every frame of a segment identical; nonzero
    # values give phones internal content structure (coarticulation-like)
    # that re-rendering preserves exactly.
    transition_depth: float = 0.0

    def validate(self) -> None:
        bad = []
        if self.n_phones < 2:
            bad.append("n_phones (must be >= 2)")
        if self.n_speakers < 2:
            bad.append("n_speakers (must be >= 2)")
        if self.phone_frequency_skew < 0:
            bad.append("phone_frequency_skew (must be >= 0)")
        if not (1 <= self.frames_per_phone[0] <= self.frames_per_phone[1]):
            bad.append("frames_per_phone (need 1 <= min <= max)")
        if self.feature_dim < 4:
            bad.append("feature_dim (must be >= 4)")
        for name in ("speaker_formant_scale_range", "speaker_f0_scale_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                bad.append(f"{name} (need 0 < lo <= hi)")
        if self.noise_std < 0:
            bad.append("noise_std (must be >= 0)")
        if self.mode not in ("feature", "audio"):
            bad.append("mode (must be 'feature' or 'audio')")
        if self.n_utterances < 1:
            bad.append("n_utterances (must be >= 1)")
        if not (1 <= self.phones_per_utterance[0] <= self.phones_per_utterance[1]):
            bad.append("phones_per_utterance (need 1 <= min <= max)")
        if self.transition_depth < 0:
            bad.append("transition_depth (must be >= 0)")
        if bad:
            raise ValidationError("invalid SyntheticSpec fields: " + ", ".join(bad))

    def phone_probs(self) -> np.ndarray:
        ranks = np.arange(1, self.n_phones + 1, dtype=np.float64)
        p = ranks ** (-self.phone_frequency_skew)
        return p / p.sum()


@dataclass(frozen=True)
class SpeakerVoice:
    """One speaker's voice transform: formant-axis warp and F0 scale."""

    formant_scale: float
    f0_scale: float


@dataclass
class Utterance:
    utterance_id: str
    speaker_id: int
    frame_labels: np.ndarray               # (T,) int phone ids
    duration_s: float
    features: np.ndarray | None = None     # (T, F) float64
    waveform: np.ndarray | None = None     # (N,) float64 mono at 16 kHz
    source: str | None = None              # on-disk origin, if loaded

    @property
    def n_frames(self) -> int:
        return len(self.frame_labels)


@dataclass
class SyntheticWorld:
    """Deterministic generator state: phone templates and speaker voices.

    Reconstructible from the spec alone, so a saved manifest only needs to
    carry the spec to stay re-renderable.
    """

    spec: SyntheticSpec
    phone_templates: np.ndarray            # (P, F) spectral envelopes
    phone_transitions: np.ndarray          # (P, F) onset-to-offset glide shapes
    pitch_axis: np.ndarray                 # (F,) unit-norm tilt direction
    phone_formants_hz: np.ndarray          # (P, 3) audio-mode resonances
    voices: list[SpeakerVoice]
    base_pitch_hz: float = 120.0

    @classmethod
    def from_spec(cls, spec: SyntheticSpec) -> "SyntheticWorld":
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
        F = spec.feature_dim
        P = spec.n_phones
        axis = np.arange(F, dtype=np.float64)

        # Three formant-like bumps per phone on the abstract frequency axis.
        centers = np.stack([
            rng.uniform(0.08 * F, 0.25 * F, size=P),
            rng.uniform(0.30 * F, 0.55 * F, size=P),
            rng.uniform(0.60 * F, 0.85 * F, size=P),
        ], axis=1)
        widths = rng.uniform(0.02 * F, 0.05 * F, size=(P, 3))
        amps = rng.uniform(0.8, 1.5, size=(P, 3))
        templates = np.zeros((P, F))
        for m in range(3):
            templates += amps[:, m:m + 1] * np.exp(
                -0.5 * ((axis[None, :] - centers[:, m:m + 1]) / widths[:, m:m + 1]) ** 2)

        # Signed two-bump glide shapes for within-segment transitions.
        t_centers = rng.uniform(0.1 * F, 0.9 * F, size=(P, 2))
        t_widths = rng.uniform(0.04 * F, 0.10 * F, size=(P, 2))
        t_amps = rng.uniform(0.5, 1.0, size=(P, 2)) * rng.choice([-1.0, 1.0],
                                                                 size=(P, 2))
        transitions = np.zeros((P, F))
        for m in range(2):
            transitions += t_amps[:, m:m + 1] * np.exp(
                -0.5 * ((axis[None, :] - t_centers[:, m:m + 1])
                        / t_widths[:, m:m + 1]) ** 2)

        # Smooth low-frequency tilt that carries the F0 factor.
        tilt = np.exp(-axis / (0.3 * F))
        tilt /= np.linalg.norm(tilt)

        formants_hz = np.stack([
            rng.uniform(300.0, 900.0, size=P),
            rng.uniform(1000.0, 2200.0, size=P),
            rng.uniform(2400.0, 3400.0, size=P),
        ], axis=1)

        flo, fhi = spec.speaker_formant_scale_range
        plo, phi = spec.speaker_f0_scale_range
        voices = [SpeakerVoice(float(f), float(p))
                  for f, p in zip(rng.uniform(flo, fhi, size=spec.n_speakers),
                                  rng.uniform(plo, phi, size=spec.n_speakers))]
        return cls(spec=spec, phone_templates=templates,
                   phone_transitions=transitions, pitch_axis=tilt,
                   phone_formants_hz=formants_hz, voices=voices)

    def render_frames(self, labels: np.ndarray, voice: SpeakerVoice,
                      noise_std: float, rng: np.random.Generator | None = None,
                      ) -> np.ndarray:
        """Render feature frames for a label sequence under one voice.

        Content per frame is the phone template plus the segment-position
        glide (deterministic in the labels), then the voice transform and
        optional fresh noise are applied on top.
        """
        labels = np.asarray(labels, dtype=np.int64)
        content = self.phone_templates[labels]
        if self.spec.transition_depth > 0:
            pos = _segment_positions(labels)
            content = content + (self.spec.transition_depth
                                 * (pos - 0.5)[:, None]
                                 * self.phone_transitions[labels])
        frames = _warp_rows(content, voice.formant_scale)
        frames = frames + math.log2(voice.f0_scale) * self.pitch_axis
        if noise_std > 0:
            if rng is None:
                raise ValidationError("noise_std > 0 requires an rng")
            frames = frames + rng.normal(0.0, noise_std, size=frames.shape)
        return frames

    def render_wave(self, labels: np.ndarray, voice: SpeakerVoice,
                    noise_std: float, rng: np.random.Generator | None = None,
                    ) -> np.ndarray:
        """Render an audio waveform for a label sequence under one voice."""
        labels = np.asarray(labels, dtype=np.int64)
        f0 = self.base_pitch_hz * voice.f0_scale
        pieces = []
        for phone, run in _label_runs(labels):
            n = run * HOP_SAMPLES
            t = np.arange(n) / SAMPLE_RATE
            harmonics = np.arange(1, int(7600.0 / f0) + 1)
            src = np.zeros(n)
            for h in harmonics:
                src += np.sin(2 * np.pi * h * f0 * t) / h
            seg = src
            for fc in self.phone_formants_hz[phone] * voice.formant_scale:
                fc = min(fc, 7600.0)
                bw = 80.0 + 0.05 * fc
                seg = _resonator(seg, fc, bw)
            fade = min(80, n // 4)
            if fade > 0:
                ramp = np.linspace(0.0, 1.0, fade)
                seg[:fade] *= ramp
                seg[-fade:] *= ramp[::-1]
            pieces.append(seg)
        wave = np.concatenate(pieces)
        peak = np.abs(wave).max()
        if peak > 0:
            wave = 0.5 * wave / peak
        if noise_std > 0:
            if rng is None:
                raise ValidationError("noise_std > 0 requires an rng")
            wave = wave + rng.normal(0.0, noise_std * 0.05, size=wave.shape)
        return wave


@dataclass
class CorpusManifest:
    """Utterance inventory with registered phone and speaker ids."""

    frame_rate: float
    phones: list[int]
    speakers: list[int]
    utterances: list[Utterance]
    synthetic: SyntheticWorld | None = None

    @property
    def n_frames(self) -> int:
        return sum(u.n_frames for u in self.utterances)

    @property
    def total_seconds(self) -> float:
        return sum(u.duration_s for u in self.utterances)

    def validate(self) -> None:
        if not self.utterances:
            raise ValidationError("empty corpus")
        phones = set(self.phones)
        speakers = set(self.speakers)
        for utt in self.utterances:
            expect = int(math.floor(utt.duration_s * self.frame_rate + 0.5))
            if utt.n_frames != expect:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r}: {utt.n_frames} frame labels, "
                    f"expected {expect} from duration {utt.duration_s:g} s")
            if utt.speaker_id not in speakers:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r}: unregistered speaker "
                    f"{utt.speaker_id}")
            unknown = set(np.unique(utt.frame_labels)) - phones
            if unknown:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r}: unregistered phone ids "
                    f"{sorted(int(p) for p in unknown)}")

    def feature_dim(self) -> int:
        for utt in self.utterances:
            if utt.features is not None:
                return utt.features.shape[1]
        raise ValidationError("corpus has no feature arrays; extract features first")

    def all_frames(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenate (features, phone labels, speaker ids) over the corpus."""
        feats = np.concatenate([u.features for u in self.utterances])
        labels = np.concatenate([u.frame_labels for u in self.utterances])
        spk = np.concatenate([np.full(u.n_frames, u.speaker_id, dtype=np.int64)
                              for u in self.utterances])
        return feats, labels, spk


@dataclass
class FrameBatch:
    """One packed batch: concatenated original-view frames plus ground truth."""

    utterances: list[Utterance]
    features: np.ndarray    # (B, F)
    labels: np.ndarray      # (B,)
    speakers: np.ndarray    # (B,)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class FrameBatchPair:
    """Original and speaker-perturbed views of the same frames."""

    original: np.ndarray    # (B, F)
    perturbed: np.ndarray   # (B, F)
    labels: np.ndarray      # (B,)
    speakers: np.ndarray    # (B,)

    def __post_init__(self) -> None:
        if self.original.shape != self.perturbed.shape:
            raise ValidationError(
                f"view shapes differ: {self.original.shape} vs {self.perturbed.shape}")
        if len(self.labels) != self.original.shape[0]:
            raise ValidationError("labels length does not match frame count")

    @property
    def n_frames(self) -> int:
        return self.original.shape[0]


# ---------------------------------------------------------------------------
# synthesis


def _label_runs(labels: np.ndarray):
    """Yield (value, run_length) for consecutive runs in labels."""
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            yield int(labels[start]), i - start
            start = i


def _segment_positions(labels: np.ndarray) -> np.ndarray:
    """Fractional position in [0, 1] of each frame within its label run."""
    pos = np.empty(len(labels))
    start = 0
    for _, run in _label_runs(labels):
        if run == 1:
            pos[start] = 0.5
        else:
            pos[start:start + run] = np.arange(run) / (run - 1)
        start += run
    return pos


def _warp_rows(rows: np.ndarray, scale: float) -> np.ndarray:
    """Evaluate each row at axis positions j / scale (linear interpolation)."""
    n = rows.shape[1]
    src = np.arange(n, dtype=np.float64) / scale
    i0 = np.clip(np.floor(src).astype(np.int64), 0, n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = np.clip(src - i0, 0.0, 1.0)
    return rows[:, i0] * (1.0 - frac) + rows[:, i1] * frac


def _resonator(x: np.ndarray, center_hz: float, bandwidth_hz: float) -> np.ndarray:
    """Second-order all-pole resonance at center_hz."""
    r = math.exp(-math.pi * bandwidth_hz / SAMPLE_RATE)
    theta = 2 * math.pi * center_hz / SAMPLE_RATE
    a = [1.0, -2 * r * math.cos(theta), r * r]
    b = [1.0 - r]
    return sp_signal.lfilter(b, a, x)


def generate_synthetic_corpus(spec: SyntheticSpec) -> CorpusManifest:
    """Build a deterministic synthetic corpus from a spec.

    The same spec (including seed) always produces the same manifest, byte
    for byte once serialized.
    """
    spec.validate()
    world = SyntheticWorld.from_spec(spec)
    ss = np.random.SeedSequence(spec.seed)
    _, text_seed, noise_seed = ss.spawn(3)
    rng_text = np.random.default_rng(text_seed)
    rng_noise = np.random.default_rng(noise_seed)

    probs = spec.phone_probs()
    reps = -(-spec.n_utterances // spec.n_speakers)
    speaker_seq = rng_text.permutation(
        np.tile(np.arange(spec.n_speakers), reps))[:spec.n_utterances]

    utterances = []
    lo_m, hi_m = spec.phones_per_utterance
    lo_f, hi_f = spec.frames_per_phone
    for i in range(spec.n_utterances):
        speaker = int(speaker_seq[i])
        m = int(rng_text.integers(lo_m, hi_m + 1))
        phones = rng_text.choice(spec.n_phones, size=m, p=probs)
        lengths = rng_text.integers(lo_f, hi_f + 1, size=m)
        labels = np.repeat(phones, lengths).astype(np.int64)
        duration = len(labels) / FRAME_RATE
        voice = world.voices[speaker]
        utt = Utterance(utterance_id=f"utt{i:05d}", speaker_id=speaker,
                        frame_labels=labels, duration_s=duration)
        if spec.mode == "feature":
            utt.features = world.render_frames(labels, voice, spec.noise_std,
                                               rng_noise)
        else:
            utt.waveform = world.render_wave(labels, voice, spec.noise_std,
                                             rng_noise)
        utterances.append(utt)

    manifest = CorpusManifest(frame_rate=FRAME_RATE,
                              phones=list(range(spec.n_phones)),
                              speakers=list(range(spec.n_speakers)),
                              utterances=utterances,
                              synthetic=world)
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# manifest and feature-dump IO


def write_feature_dump(path: str | Path, features: np.ndarray) -> None:
    """Write a float32 row-major feature matrix with a 16-byte header."""
    arr = np.ascontiguousarray(features, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def read_feature_dump(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(_FEATURE_HEADER.size)
        if len(header) < _FEATURE_HEADER.size:
            raise ValidationError(f"{path}: truncated feature dump header")
        magic, rows, cols = _FEATURE_HEADER.unpack(header)
        if magic != FEATURE_MAGIC:
            raise ValidationError(f"{path}: bad feature dump magic {magic!r}")
        data = np.frombuffer(f.read(), dtype=np.float32)
    if data.size != rows * cols:
        raise ValidationError(f"{path}: feature dump payload size mismatch")
    return data.reshape(rows, cols).astype(np.float64)


def save_corpus(manifest: CorpusManifest, out_dir: str | Path) -> Path:
    """Write manifest.json plus per-utterance data files; returns manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "data").mkdir(parents=True, exist_ok=True)
    utt_entries = []
    for utt in manifest.utterances:
        if utt.waveform is not None:
            rel = f"data/{utt.utterance_id}.wav"
            pcm = np.clip(np.round(utt.waveform * 32767.0), -32768, 32767)
            wavfile.write(out_dir / rel, SAMPLE_RATE, pcm.astype(np.int16))
        elif utt.features is not None:
            rel = f"data/{utt.utterance_id}.f32"
            write_feature_dump(out_dir / rel, utt.features)
        else:
            raise ValidationError(
                f"utterance {utt.utterance_id!r} has neither features nor waveform")
        utt_entries.append({
            "utterance_id": utt.utterance_id,
            "speaker_id": int(utt.speaker_id),
            "duration_s": utt.duration_s,
            "frame_labels": [int(x) for x in utt.frame_labels],
            "source": rel,
        })
    doc = {
        "header": {
            "frame_rate": manifest.frame_rate,
            "phones": [int(p) for p in manifest.phones],
            "speakers": [int(s) for s in manifest.speakers],
        },
        "utterances": utt_entries,
    }
    if manifest.synthetic is not None:
        doc["synthetic_spec"] = asdict(manifest.synthetic.spec)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_corpus(manifest_path: str | Path) -> CorpusManifest:
    """Load and validate a saved corpus; data files resolve next to the manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ValidationError(f"manifest file not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    try:
        header = doc["header"]
        frame_rate = float(header["frame_rate"])
        phones = [int(p) for p in header["phones"]]
        speakers = [int(s) for s in header["speakers"]]
        entries = doc["utterances"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed manifest: missing {exc}") from exc

    base = manifest_path.parent
    utterances = []
    for entry in entries:
        utt = Utterance(
            utterance_id=str(entry["utterance_id"]),
            speaker_id=int(entry["speaker_id"]),
            frame_labels=np.asarray(entry["frame_labels"], dtype=np.int64),
            duration_s=float(entry["duration_s"]),
            source=entry.get("source"),
        )
        if utt.source is not None:
            src = base / utt.source
            if not src.exists():
                raise ValidationError(
                    f"utterance {utt.utterance_id!r}: missing data file {src}")
            if src.suffix == ".f32":
                utt.features = read_feature_dump(src)
            elif src.suffix == ".wav":
                utt.waveform = load_wav(src)
            else:
                raise ValidationError(
                    f"utterance {utt.utterance_id!r}: unsupported audio format "
                    f"{src.suffix!r}")
        utterances.append(utt)

    world = None
    if "synthetic_spec" in doc:
        raw = dict(doc["synthetic_spec"])
        for key in ("frames_per_phone", "speaker_formant_scale_range",
                    "speaker_f0_scale_range", "phones_per_utterance"):
            raw[key] = tuple(raw[key])
        world = SyntheticWorld.from_spec(SyntheticSpec(**raw))

    manifest = CorpusManifest(frame_rate=frame_rate, phones=phones,
                              speakers=speakers, utterances=utterances,
                              synthetic=world)
    manifest.validate()
    return manifest


def load_wav(path: str | Path) -> np.ndarray:
    """Read a PCM-16 mono 16 kHz WAV file into float64 samples in [-1, 1]."""
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValidationError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    if data.ndim != 1:
        raise ValidationError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype != np.int16:
        raise ValidationError(f"{path}: unsupported audio format (need PCM-16)")
    return data.astype(np.float64) / 32768.0


def save_wav(path: str | Path, wave: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(wave) * 32767.0), -32768, 32767)
    wavfile.write(path, SAMPLE_RATE, pcm.astype(np.int16))


# ---------------------------------------------------------------------------
# batching


def batch_frames(corpus: CorpusManifest, batch_seconds: float, seed: int,
                 epoch: int = 0) -> list[FrameBatch]:
    """Shuffle utterances and pack them greedily into frame-capped batches.

    Deterministic per (seed, epoch); no utterance is split across batches,
    and every utterance appears exactly once.
    """
    if not corpus.utterances:
        raise ValidationError("empty corpus")
    capacity = int(round(batch_seconds * corpus.frame_rate))
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(corpus.utterances))

    batches: list[FrameBatch] = []
    current: list[Utterance] = []
    used = 0
    for idx in order:
        utt = corpus.utterances[idx]
        if utt.n_frames > capacity:
            raise ValidationError(
                f"utterance {utt.utterance_id!r} has {utt.n_frames} frames, more "
                f"than the batch capacity of {capacity}; chunk it before batching")
        if current and used + utt.n_frames > capacity:
            batches.append(_assemble(current))
            current, used = [], 0
        current.append(utt)
        used += utt.n_frames
    if current:
        batches.append(_assemble(current))
    return batches


def _assemble(utts: list[Utterance]) -> FrameBatch:
    for utt in utts:
        if utt.features is None:
            raise ValidationError(
                f"utterance {utt.utterance_id!r} has no features; run feature "
                f"extraction before batching")
    feats = np.concatenate([u.features for u in utts])
    labels = np.concatenate([u.frame_labels for u in utts])
    spk = np.concatenate([np.full(u.n_frames, u.speaker_id, dtype=np.int64)
                          for u in utts])
    return FrameBatch(utterances=list(utts), features=feats, labels=labels,
                      speakers=spk)
