"""The measurement toolbox on crafted inputs with known answers."""

import numpy as np

from sivq import (ContingencyTable, abx_error, build_abx_task, kmeans,
                  phone_tokens, purity_metrics, speaker_probe, spearman,
                  ttest_two_sample)
from sivq.metrics import code_phone_heatmap

rng = np.random.default_rng(0)

# --- purity and PNMI -------------------------------------------------------
perfect = ContingencyTable(counts=10 * np.eye(4, dtype=int))
print("code == phone bijection:", purity_metrics(perfect))

independent = ContingencyTable(counts=np.outer([10, 20, 30], [2, 3]))
print("independent table pnmi:", purity_metrics(independent)["pnmi"])

mixed = ContingencyTable(counts=np.array([[4, 1, 0], [0, 3, 1], [1, 0, 5]]))
print("mixed table:", {k: round(v, 4)
                       for k, v in purity_metrics(mixed).items()})

heat, phone_order, unused = code_phone_heatmap(mixed)
print("heatmap columns sum to", np.round(heat.sum(axis=0), 6),
      "| phones by frequency:", phone_order.tolist())

# --- k-means with an inertia trace -----------------------------------------
blobs = np.concatenate([c + 1.2 * rng.normal(size=(60, 2))
                        for c in [np.zeros(2), [4, 0], [0, 4]]])
res = kmeans(blobs, 3, n_runs=3, seed=1)
print("k-means inertia trace (never increases):",
      [round(v, 1) for v in res.inertia_trace])

# --- ABX on tokens with a known confusable pair -----------------------------
labels = []
speakers = []
feats = []
centers = rng.normal(size=(3, 8))
for utt in range(30):
    spk = utt % 3
    phones = rng.integers(0, 3, size=4)
    frame_labels = np.repeat(phones, 4)
    labels.append(frame_labels)
    speakers.append(spk)
    feats.append(centers[frame_labels] + 1.0 * rng.normal(
        size=(len(frame_labels), 8)) + 1.0 * spk)
tokens = phone_tokens(labels, speakers)
task = build_abx_task(tokens, 400, seed=2)
cat = np.concatenate(feats)
offsets = np.cumsum([0] + [len(f) for f in feats])
token_feats = [cat[offsets[t.utterance_index] + t.start:
                   offsets[t.utterance_index] + t.stop] for t in tokens]
print("ABX error rates:", abx_error(token_feats, task))

# --- the speaker probe ------------------------------------------------------
y = rng.integers(0, 4, size=2000)
separable = np.eye(4)[y] + 0.1 * rng.normal(size=(2000, 4))
print("probe on separable features:", speaker_probe(separable, y, 0))
print("probe on pure noise:", speaker_probe(rng.normal(size=(2000, 8)), y, 0))

# --- rank correlation and the significance utility --------------------------
print("spearman([1,2,3,4], [2,1,4,3]) =", spearman([1, 2, 3, 4], [2, 1, 4, 3]))
quality = np.linspace(0, 1, 12)
error = 1.0 - quality + 0.05 * rng.normal(size=12)
print("quality vs error rho:", round(spearman(quality, error), 3))
print("t-test p, identical samples:", ttest_two_sample([1, 2, 3], [1, 2, 3]))
print("t-test p, shifted samples:",
      f"{ttest_two_sample(rng.normal(size=20), 3 + rng.normal(size=20)):.2e}")
