"""Tour of the multi-resolution basis for a few Gauss-Markov models.

Builds the basis of the Wiener process (where the elements are the
classical triangular hats), an Ornstein-Uhlenbeck process and a
two-dimensional rotation model, then checks the identities that tie the
elements, their duals and the covariance together.

    python3 demos/basis_tour.py
"""
import numpy as np

from gmschauder import (
    ProcessModel,
    SchauderBasis,
    apply_dual,
    assemble_delta_matrix,
    assemble_psi_matrix,
    grid_covariance,
)

DEPTH = 5

models = {
    "Wiener": ProcessModel.wiener(),
    "Ornstein-Uhlenbeck (alpha=1)": ProcessModel.ornstein_uhlenbeck(1.0, 1.0),
    "rotation [[0,1],[-1,0]]": ProcessModel.rotation([[0.0, 1.0], [-1.0, 0.0]], 1.0),
}

for label, model in models.items():
    basis = SchauderBasis.for_model(model, DEPTH)
    print(f"\n== {label} ==")
    el = basis.element(2, 1)
    sup = el.support
    print(f"element (2,1) lives on [{sup.l}, {sup.r}] and peaks at {sup.m}")
    print("  psi at the split point (its Cholesky factor sigma):")
    print(np.array2string(el.psi(sup.m), precision=5, prefix="    "))
    for t in (sup.l, 0.5 * (sup.l + sup.m), sup.m, 0.5 * (sup.m + sup.r), sup.r):
        print(f"  psi({t:.4f}) = {np.array2string(el.psi(t).ravel(), precision=5)}")

    elements = basis.elements(DEPTH)
    worst = max(
        np.abs(apply_dual(a.dual, b.psi) - (np.eye(basis.d) if a.index == b.index else 0.0)).max()
        for a in elements for b in elements
    )
    print(f"  duality over {len(elements)} elements: max deviation {worst:.1e}")

    psi = assemble_psi_matrix(basis, DEPTH)
    delta = assemble_delta_matrix(basis, DEPTH)
    cov = grid_covariance(basis, DEPTH)
    print(f"  Psi Psi^T reproduces the covariance on the split points to {np.abs(psi @ psi.T - cov).max():.1e}")
    print(f"  Delta is the inverse of Psi to {np.abs(delta @ psi - np.eye(len(psi))).max():.1e}")
