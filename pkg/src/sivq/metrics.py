"""Evaluation machinery: unit quality, ABX discrimination, speaker probing.

All metrics are pure functions of their inputs plus explicit seeds, so any
reported number can be reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sp_stats

from .errors import ValidationError


# ---------------------------------------------------------------------------
# contingency and purity


@dataclass
class ContingencyTable:
    counts: np.ndarray                     # (n_phones, n_codes) nonnegative ints

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def validate(self) -> None:
        if np.any(self.counts < 0):
            raise ValidationError("contingency counts must be nonnegative")
        if self.total == 0:
            raise ValidationError("contingency table is empty")


def contingency(code_ids: np.ndarray, phone_labels: np.ndarray,
                n_phones: int | None = None,
                n_codes: int | None = None) -> ContingencyTable:
    """Joint frame counts of (phone, code)."""
    codes = np.asarray(code_ids, dtype=np.int64)
    phones = np.asarray(phone_labels, dtype=np.int64)
    if codes.shape != phones.shape:
        raise ValidationError(
            f"length mismatch: {codes.shape} code ids vs {phones.shape} labels")
    if codes.size == 0:
        raise ValidationError("no frames to count")
    if n_phones is None:
        n_phones = int(phones.max()) + 1
    if n_codes is None:
        n_codes = int(codes.max()) + 1
    counts = np.zeros((n_phones, n_codes), dtype=np.int64)
    np.add.at(counts, (phones, codes), 1)
    table = ContingencyTable(counts=counts)
    table.validate()
    return table


def purity_metrics(table: ContingencyTable) -> dict[str, float]:
    """Cluster purity, phone purity, and phone-normalized mutual information.

    With p(i,k) the joint frequency of phone i and code k:
      phone purity   = sum_k p(k) max_i p(i|k)
      cluster purity = sum_i p(i) max_k p(k|i)
      pnmi           = I(phone; code) / H(phone), entropies in nats.
    """
    table.validate()
    p = table.counts / table.total
    p_phone = p.sum(axis=1)
    p_code = p.sum(axis=0)

    phone_purity = float(p.max(axis=0).sum())
    cluster_purity = float(p.max(axis=1).sum())

    h_phone = -np.sum(p_phone[p_phone > 0] * np.log(p_phone[p_phone > 0]))
    if h_phone == 0:
        raise ValidationError("PNMI undefined: single phone class")
    nz = p > 0
    mi = float(np.sum(p[nz] * (np.log(p[nz])
                               - np.log(np.outer(p_phone, p_code)[nz]))))
    return {"cluster_purity": cluster_purity,
            "phone_purity": phone_purity,
            "pnmi": mi / float(h_phone)}


def code_phone_heatmap(table: ContingencyTable
                       ) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """P(phone | code) with phones sorted by descending frequency.

    Returns (matrix, phone order, list of unused code columns); unused codes
    keep all-zero columns.
    """
    table.validate()
    counts = table.counts.astype(np.float64)
    col_sums = counts.sum(axis=0)
    unused = [int(k) for k in np.flatnonzero(col_sums == 0)]
    safe = np.where(col_sums > 0, col_sums, 1.0)
    cond = counts / safe
    order = np.argsort(-counts.sum(axis=1), kind="stable")
    return cond[order], order, unused


# ---------------------------------------------------------------------------
# K-means


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[j] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iters: int,
           rel_tol: float) -> tuple[np.ndarray, np.ndarray, list[float]]:
    trace = []
    prev = np.inf
    assign = None
    for _ in range(max_iters):
        d2 = (np.sum(x * x, axis=1)[:, None] - 2 * x @ centers.T
              + np.sum(centers * centers, axis=1)[None, :])
        assign = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(len(x)), assign].sum())
        trace.append(inertia)
        for j in range(centers.shape[0]):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                centers[j] = x[np.argmax(d2[np.arange(len(x)), assign])]
        if prev - inertia <= rel_tol * max(prev, 1e-12):
            break
        prev = inertia
    return centers, assign, trace


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_trace: list[float] = field(default_factory=list)


def kmeans(features: np.ndarray, k: int, n_runs: int = 3, seed: int = 0,
           max_iters: int = 300, rel_tol: float = 1e-6) -> KMeansResult:
    """k-means++ plus Lloyd iterations; best of n_runs by final inertia."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < k:
        raise ValidationError(f"need at least k={k} rows, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_runs):
        centers = _kmeanspp_init(x, k, rng)
        centers, assign, trace = _lloyd(x, centers, max_iters, rel_tol)
        if best is None or trace[-1] < best.inertia:
            best = KMeansResult(centroids=centers, assignments=assign,
                                inertia=trace[-1], inertia_trace=trace)
    return best


# ---------------------------------------------------------------------------
# ABX discrimination


@dataclass
class AbxTriple:
    a: int                                 # token indices
    b: int
    x: int
    regime: str                            # "within" | "across"
    phone_pair: tuple[int, int]            # (target phone, distractor phone)


@dataclass
class AbxTask:
    triples: list[AbxTriple]
    phones: list[int] = field(default_factory=list)
    speakers: list[int] = field(default_factory=list)


@dataclass
class PhoneToken:
    phone: int
    speaker: int
    utterance_index: int
    start: int
    stop: int


def phone_tokens(labels_per_utt: list[np.ndarray],
                 speakers_per_utt: list[int],
                 min_frames: int = 2) -> list[PhoneToken]:
    """Contiguous same-phone runs, the token unit ABX compares."""
    tokens = []
    for ui, labels in enumerate(labels_per_utt):
        start = 0
        for i in range(1, len(labels) + 1):
            if i == len(labels) or labels[i] != labels[start]:
                if i - start >= min_frames:
                    tokens.append(PhoneToken(phone=int(labels[start]),
                                             speaker=int(speakers_per_utt[ui]),
                                             utterance_index=ui,
                                             start=start, stop=i))
                start = i
    return tokens


def build_abx_task(tokens: list[PhoneToken], n_triples: int, seed: int
                   ) -> AbxTask:
    """Sample within- and across-speaker triples from a token inventory.

    Within: A, B, X share a speaker; A and X share a phone, B differs.
    Across: A, B share a speaker; X matches A's phone from another speaker.
    """
    rng = np.random.default_rng(seed)
    by_speaker_phone: dict[tuple[int, int], list[int]] = {}
    by_phone: dict[int, list[int]] = {}
    for i, t in enumerate(tokens):
        by_speaker_phone.setdefault((t.speaker, t.phone), []).append(i)
        by_phone.setdefault(t.phone, []).append(i)
    speakers = sorted({t.speaker for t in tokens})
    phones = sorted({t.phone for t in tokens})

    triples: list[AbxTriple] = []
    attempts = 0
    max_attempts = 200 * n_triples + 1000
    while len(triples) < n_triples and attempts < max_attempts:
        attempts += 1
        regime = "within" if len(triples) % 2 == 0 else "across"
        spk = speakers[rng.integers(len(speakers))]
        spk_phones = [ph for ph in phones if len(
            by_speaker_phone.get((spk, ph), [])) >= (2 if regime == "within" else 1)]
        if len(spk_phones) < 2:
            continue
        pa, pb = rng.choice(len(spk_phones), size=2, replace=False)
        phone_a, phone_b = spk_phones[pa], spk_phones[pb]
        pool_a = by_speaker_phone[(spk, phone_a)]
        pool_b = by_speaker_phone[(spk, phone_b)]
        if regime == "within":
            if len(pool_a) < 2:
                continue
            ia, ix = rng.choice(len(pool_a), size=2, replace=False)
            a, x = pool_a[ia], pool_a[ix]
            b = pool_b[rng.integers(len(pool_b))]
        else:
            a = pool_a[rng.integers(len(pool_a))]
            b = pool_b[rng.integers(len(pool_b))]
            others = [i for i in by_phone[phone_a] if tokens[i].speaker != spk]
            if not others:
                continue
            x = others[rng.integers(len(others))]
        triples.append(AbxTriple(a=a, b=b, x=x, regime=regime,
                                 phone_pair=(phone_a, phone_b)))
    if not triples:
        raise ValidationError("could not sample any ABX triples from the corpus")
    return AbxTask(triples=triples, phones=phones, speakers=speakers)


def dtw_angular_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean angular distance along the optimal DTW alignment path."""
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("empty token sequence")
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    cost = np.arccos(np.clip(an @ bn.T, -1.0, 1.0)) / np.pi

    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = cost[i - 1]
        for j in range(1, m + 1):
            acc[i, j] = row[j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j],
                                         acc[i, j - 1])
    # backtrack to count path steps for the mean
    i, j = n, m
    steps = 1
    while i > 1 or j > 1:
        moves = [(acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j),
                 (acc[i, j - 1], i, j - 1)]
        _, i, j = min(moves, key=lambda t: t[0])
        steps += 1
    return float(acc[n, m] / steps)


def abx_error(features_by_token: list[np.ndarray], task: AbxTask
              ) -> dict[str, float]:
    """Macro-averaged ABX error rates per regime.

    A triple scores 1 when X is strictly closer to B than to A, 0.5 on a
    tie, else 0; scores aggregate per (phone pair, regime) and then average
    over pairs.
    """
    if not task.triples:
        raise ValidationError("empty ABX task")
    buckets: dict[tuple[str, tuple[int, int]], list[float]] = {}
    for tri in task.triples:
        d_ax = dtw_angular_distance(features_by_token[tri.a],
                                    features_by_token[tri.x])
        d_bx = dtw_angular_distance(features_by_token[tri.b],
                                    features_by_token[tri.x])
        if d_ax > d_bx:
            score = 1.0
        elif d_ax == d_bx:
            score = 0.5
        else:
            score = 0.0
        buckets.setdefault((tri.regime, tri.phone_pair), []).append(score)

    out = {}
    for regime in ("within", "across"):
        pair_means = [np.mean(v) for (reg, _), v in buckets.items()
                      if reg == regime]
        out[regime] = float(np.mean(pair_means)) if pair_means else float("nan")
    return out


# ---------------------------------------------------------------------------
# speaker probe


def speaker_probe(features: np.ndarray, speaker_labels: np.ndarray,
                  split_seed: int = 0, max_iters: int = 2000,
                  tol: float = 1e-6, lr: float = 0.1) -> float:
    """Held-out accuracy of a multinomial linear probe on frame features.

    Softmax regression trained full-batch with adaptive moments until the
    loss stops moving; 80/20 split by split_seed.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(speaker_labels, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValidationError("speaker probe needs at least two speakers")
    remap = {c: i for i, c in enumerate(classes)}
    y = np.array([remap[c] for c in y])
    n, d = x.shape
    n_train = int(round(0.8 * n))
    if n_train < len(classes) or n - n_train < 1:
        raise ValidationError("not enough frames for an 80/20 split")
    order = np.random.default_rng(split_seed).permutation(n)
    tr, te = order[:n_train], order[n_train:]

    s = len(classes)
    w = np.zeros((d, s))
    b = np.zeros(s)
    m_w = np.zeros_like(w); v_w = np.zeros_like(w)
    m_b = np.zeros_like(b); v_b = np.zeros_like(b)
    one_hot = np.zeros((len(tr), s))
    one_hot[np.arange(len(tr)), y[tr]] = 1.0
    xt = x[tr]
    prev = np.inf
    for t in range(1, max_iters + 1):
        logits = xt @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        loss = float(-np.mean(np.sum(one_hot * np.log(np.maximum(p, 1e-30)),
                                     axis=1)))
        g = (p - one_hot) / len(tr)
        g_w = xt.T @ g + 1e-4 * w
        g_b = g.sum(axis=0)
        for grad, mm, vv, param in ((g_w, m_w, v_w, w), (g_b, m_b, v_b, b)):
            mm *= 0.9; mm += 0.1 * grad
            vv *= 0.999; vv += 0.001 * grad * grad
            param -= lr * (mm / (1 - 0.9 ** t)) / (
                np.sqrt(vv / (1 - 0.999 ** t)) + 1e-8)
        if abs(prev - loss) < tol:
            break
        prev = loss
    pred = np.argmax(x[te] @ w + b, axis=1)
    return float(np.mean(pred == y[te]))


# ---------------------------------------------------------------------------
# rank correlation and t-test


def spearman(x, y) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValidationError("spearman needs two equal-length lists of >= 2 values")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValidationError("spearman undefined for constant input")
    rx = sp_stats.rankdata(x)
    ry = sp_stats.rankdata(y)
    return float(np.corrcoef(rx, ry)[0, 1])


def ttest_two_sample(a, b) -> float:
    """Welch's two-sample t-test; returns the two-sided p-value."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValidationError("each sample needs at least 2 values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    if va + vb == 0:
        raise ValidationError("t-test undefined: zero variance in both samples")
    t = (a.mean() - b.mean()) / np.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    return float(2.0 * sp_stats.t.sf(abs(t), df))
