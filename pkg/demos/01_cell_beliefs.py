"""Cell beliefs in log-odds form.

A map cell's categorical belief over K+1 classes (free plus K object
classes) is stored as log-odds against the free class. This walks through
the representation, Bayesian updates from range-category returns, clamping,
and the expected log-ratio kernel that powers every information formula.
"""

import numpy as np

from ssmi import logodds as lo
from ssmi.logodds import CellRelation, SensorParams

K = 2
params = SensorParams.default(K)

print("== representation ==")
pmf = np.array([0.1, 0.45, 0.45])  # occupied 0.9, class split uncertain
h = lo.logodds_from_pmf(pmf)
print(f"pmf {pmf} -> log-odds {np.round(h, 4)}")
print(f"round trip: {np.round(lo.softmax_pmf(h), 4)}")
print(f"entropy: {lo.entropy(h):.4f} nats (uniform would be {np.log(K + 1):.4f})")

print("\n== sensor model ==")
print(f"free update     l = {params.phi_minus}")
print(f"hit(class 2)    l = {params.hit_logodds(2)}")
print(f"hit PMF for class 2: {np.round(lo.softmax_pmf(params.hit_logodds(2)), 3)}")

print("\n== fusing observations ==")
prior = lo.uniform_prior(K)
cell = prior.copy()
for step, (rel, y) in enumerate([(CellRelation.FREE, None)] * 3 + [(CellRelation.OCCUPIED, 1)], 1):
    l = lo.inverse_observation(rel, y, prior, params)
    cell = lo.clamp(lo.posterior_update(cell, l, prior), params)
    label = "free" if rel is CellRelation.FREE else f"hit class {y}"
    print(f"after {label:12s} belief {np.round(lo.softmax_pmf(cell), 3)}")

print("\n== the f kernel ==")
print("f(phi, h) is the KL divergence between the updated and current belief:")
for name, phi in [("free", params.phi_minus), ("hit 1", params.hit_logodds(1))]:
    val = lo.f_logratio(phi - prior, h)
    print(f"  observing {name:6s} on the uncertain wall cell: {val:.4f} nats")
