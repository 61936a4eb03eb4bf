"""Integrated Wiener elements against an exact Gaussian-conditioning oracle.

The oracle values in ``data/integrated_wiener_oracle.json`` come from
``oracles/conditioning_oracle.py`` (exact rational covariances, 50-digit
conditioning); they are frozen here.  The published closed forms are
compared against the same oracle, and the known disagreements are asserted
explicitly so that they stay documented.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from oracles.printed_forms import integrated_wiener_d2, integrated_wiener_d3

from conftest import basis_for

ORACLE = json.loads((Path(__file__).parent / "data" / "integrated_wiener_oracle.json").read_text())
GRID = np.array(ORACLE["grid"], dtype=float)


def oracle_nodes(d: int):
    for entry in ORACLE["models"][str(d)]:
        yield entry["n"], entry["k"], np.array(entry["Sigma"], dtype=float), np.array(entry["psi"], dtype=float)


def support(n: int, k: int) -> tuple[float, float, float]:
    width = 2.0 ** (1 - n)
    return k * width, (k + 0.5) * width, (k + 1) * width


@pytest.mark.parametrize("d, name", [(2, "iw2"), (3, "iw3")])
def test_library_matches_oracle(d, name):
    basis = basis_for(name)
    count = 0
    for n, k, sigma, psi in oracle_nodes(d):
        el = basis.element(n, k)
        scale = max(1.0, np.abs(psi).max())
        assert np.abs(el.psi(GRID) - psi).max() <= 1e-8 * scale
        if n > 0:
            assert np.abs(el.Sigma - sigma).max() <= 1e-8 * max(np.abs(sigma).max(), 1e-300) + 1e-15
        count += 1
    assert count == 1 + 1 + 2 + 4 + 8


def test_published_quadratic_variance_constants_are_off():
    """The printed normalisations 1/196 and 1/32 disagree with the oracle; 1/192 and 1/16 agree."""
    for n, k, sigma, psi in oracle_nodes(2):
        if n == 0:
            continue
        l, m, r = support(n, k)
        width = r - l
        assert sigma[0, 0] == pytest.approx(width**3 / 192, rel=1e-12)
        assert sigma[1, 1] == pytest.approx(width / 16, rel=1e-12)
        assert abs(sigma[0, 1]) < 1e-15
        corrected = np.array([integrated_wiener_d2(l, m, r, t, 1 / 192, 1 / 16) for t in GRID])
        printed = np.array([integrated_wiener_d2(l, m, r, t) for t in GRID])
        assert np.abs(corrected - psi).max() <= 1e-12
        if n == 1:
            assert np.abs(printed - psi).max() > 1e-3


def test_published_cubic_form_only_middle_column_holds():
    """Only the middle column of the printed doubly integrated element matches the oracle.

    Columns 0 and 2 are not even combinations of the true element's columns
    (least-squares residual well above rounding), so they are not a
    different square-root convention but misprints.
    """
    for n, k, sigma, psi in oracle_nodes(3):
        if n == 0:
            continue
        l, _, r = support(n, k)
        printed = np.array([integrated_wiener_d3(l, r, t) for t in GRID])
        assert np.abs(printed[:, :, 1] - psi[:, :, 1]).max() <= 1e-12
        true_span = psi.reshape(-1, 3)
        for j in (0, 2):
            target = printed[:, :, j].reshape(-1)
            coef, *_ = np.linalg.lstsq(true_span, target, rcond=None)
            residual = np.abs(true_span @ coef - target).max()
            assert residual > 1e-4 * np.abs(target).max()
        # the true covariance is not diagonal, unlike the printed construction suggests
        assert abs(sigma[0, 2]) > 1e-3 * (r - l) ** 3


@pytest.mark.parametrize("name", ["iw2", "iw3"])
def test_components_are_successive_derivatives(name):
    basis = basis_for(name)
    eps = 1e-6
    for el in basis.elements(5):
        a, b = el.breakpoints()[0], el.breakpoints()[-1]
        t = np.linspace(a, b, 33)[1:-1]
        fd = (el.psi(t + eps) - el.psi(t - eps)) / (2 * eps)
        assert np.abs(fd[:, :-1, :] - el.psi(t)[:, 1:, :]).max() <= 1e-5
