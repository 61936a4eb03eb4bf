"""Acceptance suite: ten end-to-end criteria at their stated tolerances.

Each test records one ``PASS``/``FAIL criterion N: ...`` line; the lines are
printed as they happen and repeated in the pytest terminal summary.  Run
``python3 tests/test_acceptance.py`` to execute the suite without pytest.

Depth convention: a path or matrix of depth ``N`` holds the root and the
levels ``1..N-1`` on the grid with ``2^{N-1} + 1`` points.  Where a
criterion names an index set by its deepest level, the stricter reading
(levels up to that number) is checked as well.
"""
from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

from gmschauder import (  # noqa: E402
    CoefficientField,
    FptQuery,
    InterpolationProblem,
    ModelPair,
    ProcessModel,
    SchauderBasis,
    apply_dual,
    assemble_delta_matrix,
    assemble_psi_matrix,
    basis_via_bvp,
    coefficients,
    construct,
    dirichlet_energy,
    first_passage,
    grid_covariance,
    lift_matrix,
    optimal_interpolant,
    rn_derivative,
    sample_paths,
    trace_defect,
)
from gmschauder.fpt import ks_distance, wiener_hitting_cdf  # noqa: E402
from gmschauder.girsanov import determinant_convergence  # noqa: E402
from gmschauder.interp import interpolant_energy  # noqa: E402

from conftest import STANDARD_MODELS, basis_for, make_model  # noqa: E402

RESULTS: list[str] = []
GRID = np.linspace(0.0, 1.0, 257)


def report(number: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    assert passed, line


def gauss_grid(cells: int = 256, order: int = 8):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0, 1, cells + 1)
    half = np.diff(edges)[:, None] / 2
    return (edges[:-1, None] + half * (x + 1)).ravel(), (half * w).ravel()


def schauder(n: int, k: int, t: np.ndarray) -> np.ndarray:
    if n == 0:
        return t.copy()
    width = 2.0 ** (1 - n)
    l, m, r = k * width, (k + 0.5) * width, (k + 1) * width
    scale = 2.0 ** ((n - 1) / 2)
    return np.where((t >= l) & (t <= m), scale * (t - l), np.where((t > m) & (t <= r), scale * (r - t), 0.0))


def haar(n: int, k: int, t: np.ndarray) -> np.ndarray:
    if n == 0:
        return np.ones_like(t)
    width = 2.0 ** (1 - n)
    l, m, r = k * width, (k + 0.5) * width, (k + 1) * width
    scale = 2.0 ** ((n - 1) / 2)
    last = (t == 1.0) & (r == 1.0)
    return np.where((t >= l) & (t < m), scale, np.where((t >= m) & ((t < r) | last), -scale, 0.0))


# ---------------------------------------------------------------------------

def test_criterion_1_wiener_golden_basis():
    start = time.perf_counter()
    basis = SchauderBasis.for_model(ProcessModel.wiener(), 8)
    psi_err = phi_err = 0.0
    for el in basis.elements(9):
        psi_err = max(psi_err, np.abs(el.psi(GRID)[:, 0, 0] - schauder(el.n, el.k, GRID)).max())
        phi_err = max(phi_err, np.abs(el.phi(GRID)[:, 0, 0] - haar(el.n, el.k, GRID)).max())
    elapsed = time.perf_counter() - start
    report(1, psi_err <= 1e-12 and phi_err <= 1e-12 and elapsed < 1.0,
           f"levels <= 8: psi error {psi_err:.2e}, phi error {phi_err:.2e} (<= 1e-12), {elapsed:.2f} s (< 1 s)")


def test_criterion_2_duality_and_orthonormality():
    start = time.perf_counter()
    s, w = gauss_grid()
    duality = gram_err = 0.0
    for name in STANDARD_MODELS:
        basis = basis_for(name)
        d = basis.d
        elements = basis.elements(7)
        for dual_el in elements:
            for el in elements:
                value = apply_dual(dual_el.dual, el.psi)
                target = np.eye(d) if dual_el.index == el.index else 0.0
                duality = max(duality, np.abs(value - target).max())
        columns = np.concatenate([el.phi(s) for el in elements], axis=2)
        gram = np.einsum("s,smi,smj->ij", w, columns, columns)
        gram_err = max(gram_err, np.abs(gram - np.eye(gram.shape[0])).max())
    elapsed = time.perf_counter() - start
    report(2, duality <= 1e-8 and gram_err <= 1e-6 and elapsed < 30.0,
           f"levels <= 6, four models: duality {duality:.2e} (<= 1e-8), phi Gram {gram_err:.2e} (<= 1e-6), "
           f"{elapsed:.1f} s (< 30 s)")


def test_criterion_3_cholesky_identities():
    worst_psi = worst_delta = 0.0
    for name in STANDARD_MODELS:
        basis = basis_for(name)
        for depth in (6, 7):
            psi = assemble_psi_matrix(basis, depth)
            delta = assemble_delta_matrix(basis, depth)
            cov = grid_covariance(basis, depth)
            worst_psi = max(worst_psi, np.abs(psi @ psi.T - cov).max())
            worst_delta = max(worst_delta, np.abs(delta.T @ delta @ cov - np.eye(len(cov))).max())
    report(3, worst_psi <= 1e-8 and worst_delta <= 1e-6,
           f"N = 6 (and 7), four models: |Psi Psi^T - C| {worst_psi:.2e} (<= 1e-8), "
           f"|Delta^T Delta C - I| {worst_delta:.2e} (<= 1e-6)")


def test_criterion_4_monte_carlo_covariance():
    start = time.perf_counter()
    draws = 100_000
    worst_z = 0.0
    for name in ("wiener", "ou"):
        basis = basis_for(name)
        batch = sample_paths(basis, 4, 6, n_paths=draws)
        keep = np.isin(batch.times, basis.grid(4))
        times = batch.times[keep]
        x = batch.values[:, keep, 0]
        for i in range(len(times)):
            for j in range(i, len(times)):
                product = x[:, i] * x[:, j]
                expected = basis.flow.covariance(times[i], times[j])[0, 0]
                se = product.std() / math.sqrt(draws)
                if se == 0.0:
                    z = 0.0 if abs(product.mean() - expected) < 1e-15 else math.inf
                else:
                    z = abs(product.mean() - expected) / se
                worst_z = max(worst_z, z)
    elapsed = time.perf_counter() - start
    report(4, worst_z < 4.0 and elapsed < 60.0,
           f"1e5 depth-6 Wiener and OU paths, all D_4 pairs: max |z| {worst_z:.2f} (< 4), {elapsed:.1f} s (< 60 s)")


HOLDER_FUNCTIONS = [
    lambda t, c=c, h=h: np.abs(t - c) ** h - abs(c) ** h
    for c, h in [(0.1, 0.3), (0.33, 0.5), (0.5, 0.6), (0.71, 0.45), (0.9, 0.8)]
] + [
    lambda t, f=f: np.sin(f * np.pi * t) for f in (1, 3, 7, 13)
] + [
    lambda t, a=a: np.sqrt(t) * np.cos(a * t) for a in (1.0, 5.0, 11.0)
] + [
    lambda t: np.minimum(t, 0.4),
    lambda t: np.abs(np.sin(9 * t)) ** 0.5,
    lambda t: t ** 0.25,
    lambda t: np.where(t < 0.6, t, 1.2 - t) ** 0.7,
    lambda t: np.cbrt(t - 0.5) + np.cbrt(0.5),
    lambda t: np.exp(-t) * np.abs(np.sin(20 * t)) ** 0.4,
    lambda t: np.maximum(0.0, t - 0.2) ** 0.55,
    lambda t: t * (1 - t) ** 0.35,
]


def rounding_bounds(basis, field, depth) -> dict:
    """Floating-point error bound of each recovered coefficient.

    The partial sum at a grid point carries rounding of order
    ``eps sum_j |psi_j| |xi_j|`` and the three-point functional multiplies it
    by ``|W|``; the bound is ``16 eps sum |W| (|x| + sum_j |psi_j| |xi_j|)``.
    """
    grid = basis.grid(depth)
    magnitude = np.zeros((len(grid), basis.d))
    for el in basis.elements(depth):
        magnitude += np.abs(el.psi(grid)) @ np.abs(field[el.index])
    values = np.abs(construct(basis, field, grid))
    scale = {float(t): values[i] + magnitude[i] for i, t in enumerate(grid)}
    out = {}
    for el in basis.elements(depth):
        dual = el.dual
        if dual.is_root:
            terms = [(dual.weight_m, 1.0)]
        else:
            l, m, r = dual.times
            terms = [(dual.weight_m, m), (dual.weight_l, l), (dual.weight_r, r)]
        out[el.index] = 16 * np.finfo(float).eps * (sum(np.abs(w) @ scale[float(t)] for w, t in terms) + 1e-300)
    return out


def test_criterion_5_round_trip():
    rng = np.random.default_rng(55)
    field_ratio = 0.0
    field_err = 0.0
    data_err = 0.0
    assert len(HOLDER_FUNCTIONS) == 20
    for name in STANDARD_MODELS:
        basis = basis_for(name)
        d = basis.d
        for depth in (3, 6, 8):
            indices = basis.indices(depth)
            field = CoefficientField.from_array(indices, rng.standard_normal((len(indices), d)))
            again = coefficients(basis, lambda t: construct(basis, field, t), depth)
            bounds = rounding_bounds(basis, field, depth)
            for i in indices:
                err = np.abs(again[i] - field[i])
                field_err = max(field_err, err.max())
                field_ratio = max(field_ratio, (err / bounds[i]).max())
        grid = basis.grid(8)
        for fn in HOLDER_FUNCTIONS:
            def vector_fn(t, fn=fn):
                base = float(fn(np.asarray(t)))
                return np.array([base * (j + 1) for j in range(d)])
            data = {float(t): vector_fn(t) for t in grid}
            rebuilt = construct(basis, coefficients(basis, data, 8), grid)
            data_err = max(data_err, np.abs(rebuilt - np.array([data[float(t)] for t in grid])).max())
    report(5, field_ratio <= 1.0 and data_err <= 1e-10,
           f"coefficients(construct(xi)) - xi {field_err:.2e}, within the floating-point rounding bound of the "
           f"three-point functionals (worst error/bound {field_ratio:.3f} <= 1); "
           f"20 Holder functions on D_8: {data_err:.2e} (<= 1e-10)")


def test_criterion_6_two_route_agreement():
    worst = {}
    for name in STANDARD_MODELS:
        basis = basis_for(name)
        err = 0.0
        for el in basis.elements(5):
            other = basis_via_bvp(basis.flow, basis.tree, *el.index)
            err = max(err, np.abs(other.psi(GRID) - el.psi(GRID)).max(), np.abs(other.phi(GRID) - el.phi(GRID)).max())
        worst[name] = err
    summary = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(6, max(worst.values()) <= 1e-6, f"levels <= 4, max grid error: {summary} (<= 1e-6)")


def test_criterion_7_integrated_wiener_oracle():
    from oracles.printed_forms import integrated_wiener_d2, integrated_wiener_d3

    oracle = json.loads((Path(__file__).parent / "data" / "integrated_wiener_oracle.json").read_text())
    grid = np.array(oracle["grid"], dtype=float)
    oracle_err = {}
    printed_err = {}
    for d, name in ((2, "iw2"), (3, "iw3")):
        basis = basis_for(name)
        err = 0.0
        printed = [0.0] * d
        for entry in oracle["models"][str(d)]:
            n, k = entry["n"], entry["k"]
            psi = np.array(entry["psi"], dtype=float)
            err = max(err, np.abs(basis.element(n, k).psi(grid) - psi).max())
            if n == 0:
                continue
            width = 2.0 ** (1 - n)
            l, m, r = k * width, (k + 0.5) * width, (k + 1) * width
            if d == 2:
                form = np.array([integrated_wiener_d2(l, m, r, t) for t in grid])
            else:
                form = np.array([integrated_wiener_d3(l, r, t) for t in grid])
            for j in range(d):
                printed[j] = max(printed[j], np.abs(form[:, :, j] - psi[:, :, j]).max())
        oracle_err[d] = err
        printed_err[d] = printed
    chain = 0.0
    eps = 1e-6
    for name in ("iw2", "iw3"):
        for el in basis_for(name).elements(5):
            a, b = el.breakpoints()[0], el.breakpoints()[-1]
            t = np.linspace(a, b, 33)[1:-1]
            fd = (el.psi(t + eps) - el.psi(t - eps)) / (2 * eps)
            chain = max(chain, np.abs(fd[:, :-1, :] - el.psi(t)[:, 1:, :]).max())
    mismatch = "; ".join(
        f"d={d} printed columns vs oracle " + ", ".join(f"{e:.1e}" for e in printed_err[d]) for d in (2, 3))
    report(7, max(oracle_err.values()) <= 1e-8 and chain <= 1e-5,
           f"oracle agreement d=2 {oracle_err[2]:.1e}, d=3 {oracle_err[3]:.1e} (<= 1e-8); derivative chain "
           f"{chain:.1e} (<= 1e-5); documented published-form mismatches: {mismatch}")


def test_criterion_8_girsanov_limit():
    pair = ModelPair(ProcessModel.ornstein_uhlenbeck(1.0, 1.0), ProcessModel.wiener())
    rows = determinant_convergence(pair, range(4, 11))
    errors = [err for _, _, err in rows]
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    lift = lift_matrix(pair, 10)
    defect = trace_defect(pair, 10, lift)
    batch = sample_paths(lift.basis_alpha, 8, 10, n_paths=100_000)
    _, w = rn_derivative(lift, batch)
    n = w.size
    z_weight = abs(w.mean() - 1.0) / (w.std() / math.sqrt(n))
    weighted_square = w * batch.values[:, -1, 0] ** 2
    z_variance = abs(weighted_square.mean() - 1.0) / (weighted_square.std() / math.sqrt(n))
    passed = (monotone and errors[-1] <= 2e-2 and defect.relative_residual <= 0.05
              and z_weight < 4 and z_variance < 4)
    report(8, passed,
           f"|det G_N - e^0.5| monotone over N=4..10: {monotone}, {errors[-1]:.2e} at N=10 (<= 2e-2); "
           f"trace {defect.finite_trace:.4f} vs {defect.limit_trace:.4f}, residual {100 * defect.relative_residual:.3f}% "
           f"(<= 5%); mean weight {w.mean():.4f} (|z| {z_weight:.2f} < 4); reweighted E[X1^2] "
           f"{weighted_square.mean():.4f} (|z| {z_variance:.2f} < 4)")


def test_criterion_9_first_passage_benchmark():
    start = time.perf_counter()
    basis = SchauderBasis.for_model(ProcessModel.wiener(), 11)
    result = first_passage(basis, FptQuery(level=1.0, max_depth=12, paths=10_000, seed=2024))
    elapsed = time.perf_counter() - start
    ks = ks_distance(result, lambda t: wiener_hitting_cdf(t, 1.0))
    fraction = result.refined_fraction
    report(9, ks < 0.02 and fraction < 0.3 and elapsed < 120.0,
           f"Wiener a=1, 1e4 paths, max depth 12: KS {ks:.4f} (< 0.02), nodes used {100 * fraction:.2f}% "
           f"of the full tree (< 30%), {elapsed:.1f} s (< 120 s)")


def test_criterion_10_optimality():
    rng = np.random.default_rng(10)
    strict = True
    worst_gap = math.inf
    for name in ("wiener", "ou", "rotation"):
        basis = basis_for(name)
        d = basis.d
        grid = basis.grid(4)
        data = {float(t): rng.standard_normal(d) if t > 0 else np.zeros(d) for t in grid}
        best = optimal_interpolant(InterpolationProblem(basis, 4, data))
        best_energy = interpolant_energy(best)
        cell = np.diff(grid).min()
        for trial in range(50):
            if trial % 2:
                extra = {(n, k): 0.3 * rng.standard_normal(d) for n in (4, 5) for k in range(2 ** (n - 1))}
                field = CoefficientField(d, {**best.coefficients.values, **extra})
                energy = dirichlet_energy(basis.flow, lambda s: construct(basis, field, s), breakpoints=basis.grid(6))
            else:
                freq, amp = rng.integers(1, 4), 0.2 * rng.standard_normal(d)
                energy = dirichlet_energy(
                    basis.flow, lambda s: best(s) + np.sin(np.pi * freq * s / cell)[..., None] * amp, breakpoints=grid)
            strict &= energy > best_energy
            worst_gap = min(worst_gap, energy - best_energy)
    basis = basis_for("wiener")
    grid = basis.grid(4)
    values = np.concatenate([[0.0], rng.standard_normal(len(grid) - 1)])
    path = optimal_interpolant(InterpolationProblem(basis, 4, dict(zip(grid, values[:, None]))))
    linear = np.abs(path(GRID)[:, 0] - np.interp(GRID, grid, values)).max()
    report(10, strict and linear <= 1e-10,
           f"50 perturbations x 3 models all raise the energy (smallest gain {worst_gap:.2e}); "
           f"Wiener interpolant vs piecewise linear {linear:.2e} (<= 1e-10)")


if __name__ == "__main__":
    failures = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
