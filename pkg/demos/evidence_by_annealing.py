"""Model evidence by annealed importance sampling on a case with a known answer.

Prior N(0, 1), a single observation 0 with unit noise: the evidence is the
density of N(0, 2) at zero.  Twenty independent runs show that the reported
standard errors are honest.

    python3 demos/evidence_by_annealing.py
"""
import math

import numpy as np
from scipy import stats

from qbcal import AnnealingSchedule, ais_run, hdi

truth = -0.5 * math.log(4 * math.pi)
sample = lambda rng, n: rng.standard_normal((n, 1))
log_prior = lambda x: stats.norm.logpdf(np.atleast_2d(x)[:, 0])
log_target = lambda x: log_prior(x) + stats.norm.logpdf(0.0, np.atleast_2d(x)[:, 0], 1.0)

runs = [ais_run(log_target, sample, log_prior, AnnealingSchedule.default(seed=s))
        for s in range(20)]
covered = 0
for s, r in enumerate(runs):
    hit = abs(r.log_evidence - truth) <= 1.96 * r.log_evidence_se
    covered += hit
    print(f"seed {s:2d}: log Z = {r.log_evidence:+.4f} +/- {r.log_evidence_se:.4f}"
          f"{'' if hit else '   (misses)'}")
print(f"exact log Z = {truth:+.4f}; {covered}/20 nominal 95% intervals cover it")

# Pooling the weighted particles of all runs approximates the posterior N(0, 1/2).
x = np.concatenate([r.samples[:, 0] for r in runs])
w = np.concatenate([r.normalized_weights for r in runs])
lo, hi = hdi(x, 0.95, w)
print(f"pooled posterior 95% HDI: [{lo:+.3f}, {hi:+.3f}]  "
      f"(exact [{-1.96 * math.sqrt(0.5):+.3f}, {1.96 * math.sqrt(0.5):+.3f}])")
