"""Change of measure between two one-dimensional Gauss-Markov models with a common diffusion.

For drifts ``alpha`` and ``beta`` sharing ``gamma_root`` the coefficient lift
``G = Delta_beta o Psi_alpha`` sends the coefficients of a path under the
alpha-basis to its coefficients under the beta-basis.  Truncated to depth N
it is lower triangular in recursive dyadic order with diagonal

    nu_{n,k} = (g_alpha(m) / g_beta(m)) * (M_beta / M_alpha),

its determinant ``J_N`` tends to ``exp(0.5 * int (alpha - beta))`` and the
finite-dimensional likelihood ratio of the beta-law against the alpha-law,
written in the alpha-coefficients ``xi``, is

    J_N * exp(-0.5 * xi^T (G^T G - I) xi).

Models whose diffusions differ by a C^1 factor are first brought to a common
diffusion with :func:`reduce_common_diffusion`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .basis import SchauderBasis
from .errors import InputError, PairingError
from .model import FlowCache, ProcessModel
from .partition import SupportTree
from .transforms import CoefficientField, PathBatch, SamplePath, assemble_delta_matrix, assemble_psi_matrix

PROBE_POINTS = 65
DIFFUSION_TOLERANCE = 1e-12
GAMMA_STEP = 1e-6
TRACE_SEGMENTS = 256


def _probe() -> np.ndarray:
    return np.linspace(0.0, 1.0, PROBE_POINTS)


@dataclass(frozen=True)
class DiffusionReduction:
    """Record of the rescaling ``Z = gamma_factor(t) Y`` applied to the beta model."""

    original_beta: ProcessModel
    gamma_factor: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelPair:
    """Two scalar models with the same ``gamma_root`` (after optional reduction)."""

    model_alpha: ProcessModel
    model_beta: ProcessModel
    reduction: DiffusionReduction | None = None

    def __post_init__(self) -> None:
        for which, model in (("alpha", self.model_alpha), ("beta", self.model_beta)):
            if model.d != 1 or model.m != 1:
                raise PairingError(f"the {which} model must be one-dimensional (d = m = 1)")
        t = _probe()
        a = self.model_alpha.gamma_root_at(t)
        b = self.model_beta.gamma_root_at(t)
        if np.max(np.abs(a - b)) > DIFFUSION_TOLERANCE * max(1.0, float(np.max(np.abs(a)))):
            raise PairingError("models have different diffusion coefficients; apply reduce_common_diffusion first")
        if np.min(np.abs(a)) == 0.0:
            raise PairingError("the common diffusion coefficient must not vanish")

    def drift_gap(self, t: np.ndarray | float) -> np.ndarray:
        """``alpha(t) - beta(t)`` as an array of scalars."""
        t = np.asarray(t, dtype=float)
        return self.model_alpha.alpha_at(t)[..., 0, 0] - self.model_beta.alpha_at(t)[..., 0, 0]

    def swapped(self) -> "ModelPair":
        return ModelPair(self.model_beta, self.model_alpha)


def reduce_common_diffusion(model_x: ProcessModel, model_y: ProcessModel) -> ModelPair:
    """Pair ``X`` with ``Z = gamma(t) Y`` where ``gamma = gamma_root_X / gamma_root_Y``.

    ``Z`` has drift ``gamma'/gamma + alpha_Y`` and the diffusion of ``X``;
    ``gamma'`` is a central difference (one-sided at the ends of [0, 1]).
    """
    for model in (model_x, model_y):
        if model.d != 1 or model.m != 1:
            raise PairingError("diffusion reduction is defined for one-dimensional models")
    if np.min(np.abs(model_y.gamma_root_at(_probe()))) == 0.0:
        raise PairingError("the diffusion of the second model vanishes")

    def factor(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return model_x.gamma_root_at(t)[..., 0, 0] / model_y.gamma_root_at(t)[..., 0, 0]

    def factor_rate(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        up = np.minimum(t + GAMMA_STEP, 1.0)
        down = np.maximum(t - GAMMA_STEP, 0.0)
        return (factor(up) - factor(down)) / (up - down)

    def drift(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        value = factor_rate(t) / factor(t) + model_y.alpha_at(t)[..., 0, 0]
        return value[..., None, None]

    reduced = ProcessModel.generic(drift, model_x.gamma_root, 1, 1, vectorized=True,
                                   name=f"reduced({model_y.name})")
    return ModelPair(model_x, reduced, DiffusionReduction(model_y, factor))


@dataclass
class LiftMatrices:
    """Truncated lifts at one depth together with their spectral summaries."""

    depth: int
    G: np.ndarray
    H: np.ndarray
    nu: np.ndarray
    nu_formula: np.ndarray
    log_determinant: float
    spectral_norm: float
    basis_alpha: SchauderBasis = field(repr=False)
    basis_beta: SchauderBasis = field(repr=False)

    @property
    def determinant(self) -> float:
        return math.exp(self.log_determinant)

    @property
    def nu_sup(self) -> float:
        return float(np.max(self.nu))

    @property
    def S(self) -> np.ndarray:
        return self.G.T @ self.G

    @property
    def size(self) -> int:
        return self.G.shape[0]


def _bases(pair: ModelPair, depth: int, **flow_options) -> tuple[SchauderBasis, SchauderBasis]:
    tree = SupportTree.build(max(depth - 1, 1))
    return (SchauderBasis(FlowCache(pair.model_alpha, **flow_options), tree),
            SchauderBasis(FlowCache(pair.model_beta, **flow_options), tree))


def eigenvalue_formula(basis_alpha: SchauderBasis, basis_beta: SchauderBasis, depth: int) -> np.ndarray:
    """``(g_alpha(m) / g_beta(m)) (M_beta / M_alpha)`` for every node of the depth."""
    out = []
    for idx in basis_alpha.indices(depth):
        ea, eb = basis_alpha.element(*idx), basis_beta.element(*idx)
        m = ea.support.m
        ratio = basis_alpha.flow.g(m)[0, 0] / basis_beta.flow.g(m)[0, 0]
        out.append(ratio * eb.M[0, 0] / ea.M[0, 0])
    return np.array(out)


def lift_matrix(pair: ModelPair, depth: int, bases: tuple[SchauderBasis, SchauderBasis] | None = None,
                **flow_options) -> LiftMatrices:
    """``G_N = Delta_beta Psi_alpha`` and ``H_N = Delta_alpha Psi_beta`` on ``2^{depth-1}`` nodes."""
    if depth < 1:
        raise InputError("depth must be at least 1")
    basis_alpha, basis_beta = bases if bases is not None else _bases(pair, depth, **flow_options)
    psi_alpha = assemble_psi_matrix(basis_alpha, depth)
    psi_beta = assemble_psi_matrix(basis_beta, depth)
    G = assemble_delta_matrix(basis_beta, depth) @ psi_alpha
    H = assemble_delta_matrix(basis_alpha, depth) @ psi_beta
    nu = np.diag(G).copy()
    if np.any(nu <= 0):
        raise PairingError("lift matrix has a non-positive diagonal entry")
    return LiftMatrices(
        depth=depth,
        G=G,
        H=H,
        nu=nu,
        nu_formula=eigenvalue_formula(basis_alpha, basis_beta, depth),
        log_determinant=float(np.sum(np.log(nu))),
        spectral_norm=float(np.linalg.norm(G, 2)),
        basis_alpha=basis_alpha,
        basis_beta=basis_beta,
    )


def _gauss(segments: int, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    cuts = np.linspace(0.0, 1.0, segments + 1)
    half = 0.5 * np.diff(cuts)
    mid = 0.5 * (cuts[1:] + cuts[:-1])
    return (mid[:, None] + half[:, None] * nodes).ravel(), (half[:, None] * weights).ravel()


def determinant_limit(pair: ModelPair, segments: int = TRACE_SEGMENTS) -> float:
    """``exp(0.5 * int_0^1 (alpha - beta) dt)``."""
    s, w = _gauss(segments)
    return math.exp(0.5 * float(np.sum(w * pair.drift_gap(s))))


def determinant_convergence(pair: ModelPair, depths=range(2, 11), **flow_options) -> list[tuple[int, float, float]]:
    """``(N, J_N, |J_N - J|)`` for each depth, built on one shared pair of bases."""
    depths = list(depths)
    limit = determinant_limit(pair)
    bases = _bases(pair, max(depths), **flow_options)
    out = []
    for depth in depths:
        det = lift_matrix(pair, depth, bases).determinant
        out.append((depth, det, abs(det - limit)))
    return out


def spectral_bound(pair: ModelPair, points: int = 1025) -> float:
    """``(sup g_alpha / inf g_beta) (sup f_alpha^2 / inf f_beta^2)`` on a uniform grid."""
    t = np.linspace(0.0, 1.0, points)
    fa, fb = FlowCache(pair.model_alpha), FlowCache(pair.model_beta)
    g_alpha, g_beta = np.abs(fa.g(t)[:, 0, 0]), np.abs(fb.g(t)[:, 0, 0])
    f_alpha, f_beta = fa.f(t)[:, 0, 0] ** 2, fb.f(t)[:, 0, 0] ** 2
    return float(g_alpha.max() / g_beta.min() * f_alpha.max() / f_beta.min())


def _coefficient_matrix(lift: LiftMatrices, xi) -> np.ndarray:
    if isinstance(xi, SamplePath):
        xi = xi.coefficients
    if isinstance(xi, PathBatch):
        xi = xi.xi
    if isinstance(xi, CoefficientField):
        xi = xi.as_array(lift.basis_alpha.indices(lift.depth))[:, 0]
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 3:
        xi = xi[..., 0]
    if xi.ndim == 1:
        xi = xi[None, :]
    if xi.shape[-1] != lift.size:
        raise InputError(f"expected {lift.size} coefficients per path, got {xi.shape[-1]}")
    return xi


def rn_derivative(lift: LiftMatrices, xi) -> tuple[np.ndarray, np.ndarray]:
    """Log-weight and weight ``dP_beta^N / dP_alpha^N`` for paths given by alpha-coefficients.

    ``xi`` may be a :class:`SamplePath`, a :class:`PathBatch`, a
    :class:`CoefficientField` or an array of shape ``(K,)`` / ``(P, K)``.
    The exponent is formed as ``|G xi|^2 - |xi|^2`` in log space; the weight
    is ``exp(log_weight)`` and may underflow to zero for extreme paths.
    """
    coeffs = _coefficient_matrix(lift, xi)
    lifted = coeffs @ lift.G.T
    quad = np.sum(lifted * lifted, axis=1) - np.sum(coeffs * coeffs, axis=1)
    log_weight = lift.log_determinant - 0.5 * quad
    return log_weight, np.exp(log_weight)


def limit_trace(pair: ModelPair, segments: int = TRACE_SEGMENTS, **flow_options) -> float:
    """``int (alpha - beta) dt + int (h_alpha / f_alpha^2) (alpha - beta)^2 dt`` with ``h_alpha = h_0(0, t)``."""
    s, w = _gauss(segments)
    flow = FlowCache(pair.model_alpha, **flow_options)
    gap = pair.drift_gap(s)
    ratio = flow.h(np.zeros_like(s), s)[:, 0, 0] / flow.f(s)[:, 0, 0] ** 2
    return float(np.sum(w * gap) + np.sum(w * ratio * gap**2))


@dataclass(frozen=True)
class TraceDefect:
    finite_trace: float
    limit_trace: float

    @property
    def residual(self) -> float:
        return abs(self.finite_trace - self.limit_trace)

    @property
    def relative_residual(self) -> float:
        return self.residual / abs(self.limit_trace) if self.limit_trace else self.residual


def trace_defect(pair: ModelPair, depth: int, lift: LiftMatrices | None = None, **flow_options) -> TraceDefect:
    """``Tr(S_N - I)`` against its limit; ``Tr(G^T G) = |G|_F^2``."""
    lift = lift if lift is not None else lift_matrix(pair, depth, **flow_options)
    finite = float(np.sum(lift.G**2) - lift.size)
    return TraceDefect(finite, limit_trace(pair, **flow_options))


def kernel_matrix(pair: ModelPair, depth: int, segments: int = TRACE_SEGMENTS,
                  basis_alpha: SchauderBasis | None = None) -> np.ndarray:
    """``S`` restricted to the nodes of one depth, by quadrature of its integral kernel.

    Entry ``(p, q)`` is ``int u_p u_q dt`` with
    ``u = phi_alpha + ((alpha - beta) / gamma_root) psi_alpha``, i.e. the
    L2 Gram matrix of the beta-whitened alpha-elements.  This is the full
    (untruncated) operator, so it agrees with ``G_M^T G_M`` restricted to the
    first ``2^{depth-1}`` nodes only as the lift depth ``M`` grows.
    """
    if basis_alpha is None:
        basis_alpha = SchauderBasis(FlowCache(pair.model_alpha), SupportTree.build(max(depth - 1, 1)))
    s, w = _gauss(segments)
    scale = pair.drift_gap(s) / pair.model_alpha.gamma_root_at(s)[:, 0, 0]
    columns = []
    for el in basis_alpha.elements(depth):
        columns.append(el.phi(s)[:, 0, 0] + scale * el.psi(s)[:, 0, 0])
    u = np.array(columns)
    return (u * w) @ u.T
