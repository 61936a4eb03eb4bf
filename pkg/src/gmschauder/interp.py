"""Dirichlet energy, optimal interpolation on ``D_N`` and the boundary-value route to the basis.

The energy of a path ``x`` is ``int_0^1 |D[x](t)|^2 dt`` with
``D[x] = gamma_root^{-1} (x' - alpha x)``.  Among paths through given values
on ``D_N`` the minimiser is the partial sum whose coefficients are the dual
functionals of the data.

The split-point profile ``mu(t)`` of a node (``mu(l) = 0``, ``mu(m) = I``,
``mu(r) = 0``) solves the Euler-Lagrange equation of the energy on each half
support.  Two formulations are available:

``"first_order"`` (default)
    ``u' = alpha u + Gamma lam``, ``lam' = -alpha^T lam``.  No derivatives of
    the coefficients and no inverse of ``Gamma`` are needed, so it also covers
    degenerate noise such as integrated Wiener processes.
``"second_order"``
    with ``w = u' - alpha u`` the equation ``w' = (Gamma' - Gamma alpha^T) Gamma^{-1} w``,
    i.e. ``u'' = (alpha + K) u' + (alpha' - K alpha) u`` with
    ``K = (Gamma' - Gamma alpha^T) Gamma^{-1}``.  Needs an invertible ``Gamma``
    and the derivatives ``alpha'`` and ``Gamma'`` (elementwise).

Both are solved by shooting with RK4 on the companion ``2d``-dimensional
linear system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from ._linalg import DEFAULT_COND_BOUND, check_condition
from .basis import SchauderBasis
from .errors import DegeneracyError, InputError, UnsupportedModelError
from .model import FlowCache
from .partition import Index, Support, SupportTree
from .transforms import SamplePath, coefficients, construct

ENERGY_SEGMENTS = 64
FD_STEP = 1e-6


def _t(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2)


# ---------------------------------------------------------------------------
# Dirichlet energy
# ---------------------------------------------------------------------------

def _quadrature_grid(cuts: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    lo, hi = cuts[:-1], cuts[1:]
    half = 0.5 * (hi - lo)
    s = (0.5 * (hi + lo))[:, None] + half[:, None] * nodes
    w = half[:, None] * weights
    gap = np.minimum(s - lo[:, None], hi[:, None] - s)
    return s.ravel(), w.ravel(), gap.ravel(), half


def dirichlet_energy(
    flow: FlowCache,
    x: Callable[[np.ndarray], np.ndarray],
    dx: Callable[[np.ndarray], np.ndarray] | None = None,
    breakpoints: Iterable[float] = (),
    segments: int = ENERGY_SEGMENTS,
) -> float:
    """``int_0^1 |gamma_root^{-1} (x' - alpha x)|^2 dt`` by composite Gauss-Legendre.

    ``x`` maps an array of times to ``(..., d)`` values (or ``(..., d, c)``
    whose column energies are summed).  The integration grid is split at
    ``breakpoints`` (kinks of ``x``) and on a uniform grid of ``segments``
    cells.  Without ``dx`` the derivative is a central difference whose step
    never crosses a cell boundary.
    """
    if flow.m != flow.d:
        raise UnsupportedModelError("the Dirichlet energy needs a square diffusion matrix (m = d)")
    cuts = np.unique(np.concatenate([np.linspace(0.0, 1.0, segments + 1),
                                     [b for b in breakpoints if 0.0 <= b <= 1.0]]))
    s, w, gap, _ = _quadrature_grid(cuts, flow.quadrature_order)
    root = flow.model.gamma_root_at(s)
    cond = np.linalg.cond(root)
    if np.any(~np.isfinite(cond)) or np.max(cond) > flow.cond_bound:
        raise UnsupportedModelError("the Dirichlet energy needs an invertible diffusion matrix")
    val = np.asarray(x(s), dtype=float)
    vector = val.ndim == 2
    if vector:
        val = val[..., None]
    if dx is not None:
        dval = np.asarray(dx(s), dtype=float)
        if vector:
            dval = dval[..., None]
    else:
        step = np.minimum(FD_STEP, 0.5 * gap)
        up = np.asarray(x(s + step), dtype=float)
        down = np.asarray(x(s - step), dtype=float)
        if vector:
            up, down = up[..., None], down[..., None]
        dval = (up - down) / (2.0 * step)[:, None, None]
    rate = np.linalg.solve(root, dval - flow.model.alpha_at(s) @ val)
    return float(np.sum(w[:, None, None] * rate**2))


# ---------------------------------------------------------------------------
# optimal interpolation
# ---------------------------------------------------------------------------

@dataclass
class InterpolationProblem:
    """Values prescribed on every point of ``D_depth`` (value 0 at ``t = 0``)."""

    basis: SchauderBasis
    depth: int
    data: Mapping[float, np.ndarray]

    def __post_init__(self) -> None:
        grid = self.basis.grid(self.depth)
        d = self.basis.d
        clean: dict[float, np.ndarray] = {}
        for t, v in self.data.items():
            clean[float(t)] = np.asarray(v, dtype=float).reshape(d)
        missing = [t for t in grid[1:] if float(t) not in clean]
        if missing:
            raise InputError(f"interpolation data missing at {len(missing)} grid points, first t={missing[0]}")
        zero = clean.setdefault(0.0, np.zeros(d))
        if np.any(zero != 0.0):
            raise InputError("interpolation data must vanish at t = 0")
        self.data = clean

    @classmethod
    def from_function(cls, basis: SchauderBasis, depth: int, fn: Callable[[float], Any]) -> "InterpolationProblem":
        grid = basis.grid(depth)
        return cls(basis, depth, {float(t): np.asarray(fn(t), dtype=float) for t in grid})


def optimal_interpolant(problem: InterpolationProblem) -> SamplePath:
    """Minimal-energy path through the data: the partial sum of the data's coefficients."""
    xi = coefficients(problem.basis, problem.data, problem.depth)
    return SamplePath(problem.basis, xi, dict(problem.data))


def interpolant_energy(path: SamplePath) -> float:
    return dirichlet_energy(path.basis.flow, path, path.derivative, path.breakpoints())


# ---------------------------------------------------------------------------
# boundary-value problem for the split-point profile
# ---------------------------------------------------------------------------

class _LinearSolution:
    """Fundamental matrix of ``z' = A(t) z`` from ``start`` on a uniform RK4 grid with dense output."""

    def __init__(self, generator: Callable[[np.ndarray], np.ndarray], start: float, stop: float, steps: int) -> None:
        self.generator = generator
        self.start = start
        self.stop = stop
        self.steps = steps
        self.nodes = np.linspace(start, stop, steps + 1)
        size = generator(np.array(start)).shape[-1]
        states = np.empty((steps + 1, size, size))
        states[0] = np.eye(size)
        for i in range(steps):
            states[i + 1] = self._step(np.array(self.nodes[i]), states[i], np.array(self.nodes[i + 1] - self.nodes[i]))
        if not np.all(np.isfinite(states)):
            raise DegeneracyError("boundary-value propagator overflowed")
        self.states = states

    def _step(self, t: np.ndarray, y: np.ndarray, h: np.ndarray) -> np.ndarray:
        hh = h[..., None, None]
        a0 = self.generator(t)
        a1 = self.generator(t + 0.5 * h)
        a2 = self.generator(t + h)
        k1 = a0 @ y
        k2 = a1 @ (y + 0.5 * hh * k1)
        k3 = a1 @ (y + 0.5 * hh * k2)
        k4 = a2 @ (y + hh * k3)
        return y + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        width = (self.stop - self.start) / self.steps
        idx = np.clip(np.floor((t - self.start) / width).astype(int), 0, self.steps - 1)
        base = self.nodes[idx]
        return self._step(base, self.states[idx], t - base)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _equilibrated_solve(a: np.ndarray, b: np.ndarray, what: str, bound: float) -> np.ndarray:
    rows = np.max(np.abs(a), axis=1)
    if np.any(rows == 0):
        raise DegeneracyError(f"{what}: singular shooting matrix")
    scaled = a / rows[:, None]
    cols = np.max(np.abs(scaled), axis=0)
    if np.any(cols == 0):
        raise DegeneracyError(f"{what}: singular shooting matrix")
    scaled = scaled / cols[None, :]
    check_condition(scaled, what, bound)
    return np.linalg.solve(scaled, b / rows[:, None]) / cols[:, None]


@dataclass
class ProfilePiece:
    """Solution of the profile equation on one half support.

    ``value(t)`` is the d x d profile, ``rate(t)`` its image ``D``-like
    transform ``gamma_root^T lam`` (an m x d matrix) so that
    ``value' = alpha value + gamma_root rate``.
    """

    start: float
    stop: float
    propagator: _LinearSolution
    initial: np.ndarray
    d: int
    flow: FlowCache
    form: str

    def state(self, t: np.ndarray) -> np.ndarray:
        return self.propagator(t) @ self.initial

    def value(self, t: np.ndarray | float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.state(t)[..., : self.d, :]

    def rate(self, t: np.ndarray | float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        z = self.state(t)
        model = self.flow.model
        if self.form == "first_order":
            return _t(model.gamma_root_at(t)) @ z[..., self.d:, :]
        slope = z[..., self.d:, :] - model.alpha_at(t) @ z[..., : self.d, :]
        return np.linalg.solve(model.gamma_root_at(t), slope)

    def costate(self, t: np.ndarray | float) -> np.ndarray:
        """Multiplier ``lam`` with ``value' - alpha value = Gamma lam`` (first-order form only)."""
        if self.form != "first_order":
            raise UnsupportedModelError("the multiplier is only tracked by the first-order form")
        return self.state(np.asarray(t, dtype=float))[..., self.d:, :]


@dataclass
class SplitProfile:
    """``mu`` on ``[l, r]``: ``left`` rises from 0 to I on ``[l, m]``, ``right`` falls from I to 0 on ``[m, r]``."""

    l: float
    m: float
    r: float
    left: ProfilePiece
    right: ProfilePiece | None

    def mu_l(self, t: np.ndarray | float) -> np.ndarray:
        return self.left.value(t)

    def mu_r(self, t: np.ndarray | float) -> np.ndarray:
        if self.right is None:
            raise InputError("the root profile has no right piece")
        return self.right.value(t)


def _generator(flow: FlowCache, form: str) -> Callable[[np.ndarray], np.ndarray]:
    model = flow.model
    d = flow.d
    if form == "first_order":

        def gen(t: np.ndarray) -> np.ndarray:
            t = np.asarray(t, dtype=float)
            a = model.alpha_at(t)
            out = np.zeros(t.shape + (2 * d, 2 * d))
            out[..., :d, :d] = a
            out[..., :d, d:] = model.gamma_at(t)
            out[..., d:, d:] = -_t(a)
            return out

        return gen
    if form == "second_order":
        if flow.m != d:
            raise UnsupportedModelError("the second-order form needs an invertible diffusion matrix (m = d)")

        def gen(t: np.ndarray) -> np.ndarray:
            t = np.asarray(t, dtype=float)
            a = model.alpha_at(t)
            gam = model.gamma_at(t)
            check_condition(gam, "Gamma", flow.cond_bound)
            k = _t(np.linalg.solve(gam, _t(model.gamma_prime_at(t) - gam @ _t(a))))
            out = np.zeros(t.shape + (2 * d, 2 * d))
            out[..., :d, d:] = np.eye(d)
            out[..., d:, :d] = model.alpha_prime_at(t) - k @ a
            out[..., d:, d:] = a + k
            return out

        # fail early on models without derivatives
        gen(np.array([0.5]))
        return gen
    raise InputError(f"unknown boundary-value form {form!r}")


def _steps(flow: FlowCache, width: float) -> int:
    return max(64, int(math.ceil(flow.flow_steps * width)))


def _left_piece(flow: FlowCache, gen, start: float, stop: float, form: str, bound: float) -> ProfilePiece:
    d = flow.d
    prop = _LinearSolution(gen, start, stop, _steps(flow, stop - start))
    shoot = prop.final[:d, d:]
    slope = _equilibrated_solve(shoot, np.eye(d), "left shooting matrix", bound)
    init = np.vstack([np.zeros((d, d)), slope])
    return ProfilePiece(start, stop, prop, init, d, flow, form)


def _right_piece(flow: FlowCache, gen, start: float, stop: float, form: str, bound: float) -> ProfilePiece:
    d = flow.d
    prop = _LinearSolution(gen, start, stop, _steps(flow, stop - start))
    shoot = prop.final[:d, d:]
    slope = _equilibrated_solve(shoot, -prop.final[:d, :d], "right shooting matrix", bound)
    init = np.vstack([np.eye(d), slope])
    return ProfilePiece(start, stop, prop, init, d, flow, form)


def solve_mu_bvp(flow: FlowCache, l: float, m: float, r: float | None, form: str = "first_order") -> SplitProfile:
    """Profiles with ``mu(l) = 0``, ``mu(m) = I`` and (unless ``r`` is None, the root case) ``mu(r) = 0``."""
    if not (l < m and (r is None or m < r)):
        raise InputError("boundary points must satisfy l < m < r")
    gen = _generator(flow, form)
    bound = flow.cond_bound if flow.cond_bound else DEFAULT_COND_BOUND
    left = _left_piece(flow, gen, l, m, form, bound)
    right = None if r is None else _right_piece(flow, gen, m, r, form, bound)
    return SplitProfile(l, m, r if r is not None else m, left, right)


# ---------------------------------------------------------------------------
# basis through the boundary-value program
# ---------------------------------------------------------------------------

def _gauss_nodes(a: float, b: float, pieces: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    cuts = np.linspace(a, b, pieces + 1)
    s, w, _, _ = _quadrature_grid(cuts, order)
    return s, w


def lower_orthonormalizer(gram: np.ndarray, passes: int = 2) -> np.ndarray:
    """Lower-triangular ``T`` with positive diagonal and ``T^T gram T = I``.

    Modified Gram-Schmidt under the inner product ``<a, b> = a^T gram b``,
    taking the coordinate vectors from last to first and repeating the
    projection step ``passes`` times (re-orthogonalisation).
    """
    d = gram.shape[0]
    out = np.zeros((d, d))
    done: list[np.ndarray] = []
    for j in range(d - 1, -1, -1):
        v = np.zeros(d)
        v[j] = 1.0
        for _ in range(passes):
            for q in done:
                v = v - (q @ gram @ v) * q
        norm2 = float(v @ gram @ v)
        if not norm2 > 0:
            raise DegeneracyError("Gram matrix of the profile columns is singular")
        v = v / math.sqrt(norm2)
        if v[j] < 0:
            v = -v
        out[:, j] = v
        done.append(v)
    return out


@dataclass(eq=False)
class BvpBasisElement:
    """Basis element produced by the boundary-value program."""

    index: Index
    support: Support
    profile: SplitProfile
    sigma_root: np.ndarray
    L: np.ndarray
    R: np.ndarray
    M: np.ndarray
    gram: np.ndarray
    flow: FlowCache

    @property
    def Sigma(self) -> np.ndarray:
        return self.sigma_root @ self.sigma_root.T

    @property
    def is_root(self) -> bool:
        return self.index == (0, 0)

    def _pieces(self, t: np.ndarray, closed_right: bool):
        sup = self.support
        p = self.profile
        if self.is_root:
            yield (t >= 0.0) & (t <= 1.0), p.left
            return
        yield (t >= sup.l) & (t < sup.m), p.left
        if closed_right:
            yield (t >= sup.m) & (t <= sup.r), p.right
        else:
            yield (t >= sup.m) & ((t < sup.r) | ((t == 1.0) & (sup.r == 1.0))), p.right

    def psi(self, t: np.ndarray | float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.flow.d, self.flow.d))
        for mask, piece in self._pieces(t, True):
            if np.any(mask):
                out[mask] = piece.value(t[mask]) @ self.sigma_root
        return out

    def phi(self, t: np.ndarray | float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.flow.m, self.flow.d))
        for mask, piece in self._pieces(t, False):
            if np.any(mask):
                out[mask] = piece.rate(t[mask]) @ self.sigma_root
        return out


def basis_via_bvp(
    flow: FlowCache,
    tree: SupportTree,
    n: int,
    k: int,
    form: str = "first_order",
    quadrature_pieces: int = 8,
) -> BvpBasisElement:
    """Basis element from the boundary-value program.

    1. solve for the split-point profile ``mu``;
    2. map it to the noise side: ``rate = gamma_root^T lam`` (or
       ``gamma_root^{-1}(mu' - alpha mu)`` in the second-order form);
    3. orthonormalise the d column functions of ``rate`` under the L2
       quadrature inner product with a lower-triangular factor ``T``;
    4. integrate back, which amounts to ``psi = mu T`` and ``phi = rate T``.
    """
    support = tree.node(n, k)
    root = support.is_root
    profile = solve_mu_bvp(flow, support.l, support.m, None if root else support.r, form)
    order = flow.quadrature_order
    s, w = _gauss_nodes(support.l, support.m, quadrature_pieces, order)
    rate = profile.left.rate(s)
    gram = np.einsum("q,qij,qik->jk", w, rate, rate)
    if not root:
        s2, w2 = _gauss_nodes(support.m, support.r, quadrature_pieces, order)
        rate2 = profile.right.rate(s2)
        gram = gram + np.einsum("q,qij,qik->jk", w2, rate2, rate2)
    gram = 0.5 * (gram + gram.T)
    sigma = lower_orthonormalizer(gram)
    g_m = flow.g(support.m)
    zero = np.zeros_like(sigma)
    if form == "first_order":
        L = g_m.T @ profile.left.costate(support.m) @ sigma
        R = zero if root else -g_m.T @ profile.right.costate(support.m) @ sigma
    else:
        # phi = f^T L on the left half, so L = g(m)^T gamma_root(m)^{-T} rate(m)
        root_m = flow.model.gamma_root_at(support.m)
        L = g_m.T @ np.linalg.solve(root_m.T, profile.left.rate(support.m) @ sigma)
        R = zero if root else -g_m.T @ np.linalg.solve(root_m.T, profile.right.rate(support.m) @ sigma)
    return BvpBasisElement(support.index, support, profile, sigma, L, R, L + R, gram, flow)
