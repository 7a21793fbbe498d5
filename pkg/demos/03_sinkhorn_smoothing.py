"""Why target smoothing prevents codebook collapse.

Raw per-frame softmax targets let every frame pick the single closest
codeword, so nothing stops all frames from piling onto one code.  The
balanced-assignment smoothing constrains column mass to 1/K per codeword
before rows are renormalized, which forces the whole codebook to stay in
play.  Entropy regularization strength controls how soft that assignment
is.
"""

import numpy as np

from sivq import SinkhornConfig, sinkhorn_exact, smooth_targets
from sivq.model import Codebook
from sivq.sinkhorn import marginal_violations

rng = np.random.default_rng(0)
B, K, D = 256, 8, 16

# Adversarial geometry: every frame is closest to codeword 0.
c = rng.normal(size=(K, D))
c /= np.linalg.norm(c, axis=1, keepdims=True)
z = c[0] + 0.15 * rng.normal(size=(B, D))
z /= np.linalg.norm(z, axis=1, keepdims=True)
cb = Codebook(codewords=c, tau=0.1)

naive = np.exp((z @ c.T) / cb.tau)
naive /= naive.sum(axis=1, keepdims=True)
print("naive softmax: mass share of code 0 =",
      round(float(naive.sum(axis=0)[0] / B), 3))

q = smooth_targets(z, cb, SinkhornConfig(epsilon=0.02, n_iters=3))
print("3-round smoothing: per-code mass share =",
      np.round(q.sum(axis=0) / B, 3))

plan = sinkhorn_exact(z @ c.T, epsilon=0.02, tol=1e-10)
print("converged plan column sums (x K):", np.round(K * plan.sum(axis=0), 4))
print("  -> exactly balanced at 1/K per code; the 3-round variant only",
      "approximates this per batch, but applies the pressure every step")

# Higher epsilon means softer rows.
for eps in (0.01, 0.02, 0.1, 1.0):
    q = smooth_targets(z, cb, SinkhornConfig(epsilon=eps, n_iters=3))
    ent = float(np.mean([-(r[r > 0] * np.log(r[r > 0])).sum() for r in q]))
    print(f"epsilon {eps:5.2f}: mean row entropy {ent:.3f} nats "
          f"(uniform would be {np.log(K):.3f})")

# How close is the 3-round variant to convergence?  On this adversarial
# geometry the gap is visible; on the near-uniform scores seen in training
# it is small.
row_v, col_v = marginal_violations(plan)
print(f"converged plan marginal violations: rows {row_v:.2e}, cols {col_v:.2e}")
q3 = smooth_targets(z, cb, SinkhornConfig(epsilon=0.02, n_iters=3))
q_star = plan / plan.sum(axis=1, keepdims=True)
tv = 0.5 * np.abs(q3 - q_star).sum(axis=1)
print(f"3-round approximation vs converged targets: per-row TV mean "
      f"{tv.mean():.4f}, max {tv.max():.4f} (adversarial case)")
