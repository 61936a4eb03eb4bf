"""Likelihood ratios between two scalar models through their coefficient lift.

The lift G_N maps the coefficients of an Ornstein-Uhlenbeck path (drift 1)
to the coefficients of the same path in the Wiener basis.  Its determinant
converges to exp(1/2), and the finite-dimensional likelihood ratio turns
OU samples into Wiener expectations.

    python3 demos/change_of_measure.py
"""
import math

import numpy as np

from gmschauder import ModelPair, ProcessModel, lift_matrix, rn_derivative, sample_paths, trace_defect
from gmschauder.girsanov import determinant_convergence

pair = ModelPair(ProcessModel.ornstein_uhlenbeck(1.0, 1.0), ProcessModel.wiener())

print("determinant of the lift against its limit exp(1/2) =", f"{math.exp(0.5):.6f}")
for depth, det, err in determinant_convergence(pair, range(2, 11)):
    print(f"  N={depth:2d}: det G_N = {det:.6f}, error {err:.2e}")

lift = lift_matrix(pair, 10)
defect = trace_defect(pair, 10, lift)
print(f"\ntrace of G^T G - I at N=10: {defect.finite_trace:.5f} (limit {defect.limit_trace:.5f})")
print(f"largest diagonal entry {lift.nu_sup:.4f}, spectral norm {lift.spectral_norm:.4f}")

batch = sample_paths(lift.basis_alpha, seed=1, depth=10, n_paths=100_000)
_, weights = rn_derivative(lift, batch)
x1 = batch.values[:, -1, 0]
se = weights.std() / math.sqrt(weights.size)
print(f"\nmean likelihood ratio over 1e5 OU paths: {weights.mean():.4f} +/- {se:.4f}")
print(f"OU variance at t=1: {np.mean(x1 ** 2):.4f} (exact {(math.exp(2) - 1) / 2:.4f})")
print(f"reweighted to the Wiener model: {np.mean(weights * x1 ** 2):.4f} (exact 1)")
