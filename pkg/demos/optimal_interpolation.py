"""Minimal-energy interpolation of data on a dyadic grid.

The partial sum of a basis with the data's coefficients is the interpolant
that minimises the model's Dirichlet energy.  For the Wiener process this
is piecewise-linear interpolation; for the integrated Wiener process, whose
state carries position and velocity, it is the cubic Hermite spline.

    python3 demos/optimal_interpolation.py
"""
import numpy as np
from scipy.interpolate import CubicHermiteSpline

from gmschauder import InterpolationProblem, ProcessModel, SchauderBasis, optimal_interpolant
from gmschauder.interp import interpolant_energy

rng = np.random.default_rng(0)
fine = np.linspace(0.0, 1.0, 257)

wiener = SchauderBasis.for_model(ProcessModel.wiener(), 4)
grid = wiener.grid(4)
values = np.concatenate([[0.0], rng.standard_normal(len(grid) - 1)])
path = optimal_interpolant(InterpolationProblem(wiener, 4, dict(zip(grid, values[:, None]))))
print("Wiener model, data on D_4")
print(f"  difference from piecewise-linear interpolation: {np.abs(path(fine)[:, 0] - np.interp(fine, grid, values)).max():.1e}")
print(f"  energy of the interpolant: {interpolant_energy(path):.6f}")
print(f"  sum of squared slopes:     {np.sum(np.diff(values) ** 2 / np.diff(grid)):.6f}")

iw = SchauderBasis.for_model(ProcessModel.integrated_wiener(1), 4)
grid = iw.grid(4)
data = np.vstack([[0.0, 0.0], rng.standard_normal((len(grid) - 1, 2))])
path = optimal_interpolant(InterpolationProblem(iw, 4, dict(zip(grid, data))))
spline = CubicHermiteSpline(grid, data[:, 0], data[:, 1])
print("\nintegrated Wiener model, positions and velocities on D_4")
print(f"  position vs cubic Hermite spline: {np.abs(path(fine)[:, 0] - spline(fine)).max():.1e}")
print(f"  velocity vs spline derivative:    {np.abs(path(fine)[:, 1] - spline.derivative()(fine)).max():.1e}")
