"""Bridge moments, Schauder elements ``psi``, orthonormal elements ``phi`` and dual functionals.

All per-node quantities are computed in the frame of the node's split point
``m``: with ``A = h_m(l, m)`` and ``B = h_m(m, r)``

* ``Sigma = A (A + B)^{-1} B`` and ``sigma`` is its lower Cholesky factor,
* ``psi(t) = F(m, t) h_m(l, t) A^{-1} sigma`` on ``[l, m]`` and
  ``F(m, t) h_m(t, r) B^{-1} sigma`` on ``[m, r]``,
* ``phi(t) = gamma_root(t)^T F(t, m)^T A^{-1} sigma`` on ``[l, m)`` and
  ``-gamma_root(t)^T F(t, m)^T B^{-1} sigma`` on ``[m, r)``.

These are algebraically identical to the global forms ``g(t) h(l, t) L``
(with ``L = g(m)^T A^{-1} sigma``, ``R = g(m)^T B^{-1} sigma`` and
``M = g(m)^T sigma^{-T}``) but never multiply large ``g`` factors against
small kernel differences.  ``phi`` carries a minus sign on the right half so
that ``psi' = alpha psi + gamma_root phi`` holds on both halves.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from ._linalg import right_spd_solve, spd_cholesky, spd_solve, symmetrize
from .errors import InputError, RangeError
from .model import FlowCache
from .partition import Index, Support, SupportTree, ordered_indices


def _t(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2)


@dataclass(frozen=True)
class BridgeMoments:
    """Law of ``X(t)`` given ``X(t_x) = x`` and ``X(t_z) = z``:
    mean ``mu_l x + mu_r z`` and covariance ``sigma``."""

    sigma: np.ndarray
    mu_l: np.ndarray
    mu_r: np.ndarray


def bridge_moments(flow: FlowCache, t: np.ndarray | float, t_x: float, t_z: float) -> BridgeMoments:
    """Conditional covariance and mean weights of the bridge pinned at ``t_x`` and ``t_z``."""
    if not t_x < t_z:
        raise InputError("bridge endpoints must satisfy t_x < t_z")
    t = np.asarray(t, dtype=float)
    if np.any((t < t_x) | (t > t_z)):
        raise InputError("bridge time outside [t_x, t_z]")
    tx = np.full(t.shape, float(t_x))
    tz = np.full(t.shape, float(t_z))
    h_t_left = flow.h_kernel(t, tx, t)
    h_t_right = flow.h_kernel(t, t, tz)
    sigma = symmetrize(h_t_left @ spd_solve(h_t_left + h_t_right, h_t_right, "bridge h-kernel", flow.cond_bound))
    h_x_full = flow.h_kernel(tx, tx, tz)
    mu_l = right_spd_solve(flow.flow(tx, t) @ flow.h_kernel(tx, t, tz), h_x_full, "bridge h-kernel", flow.cond_bound)
    h_z_full = flow.h_kernel(tz, tx, tz)
    mu_r = right_spd_solve(flow.flow(tz, t) @ flow.h_kernel(tz, tx, t), h_z_full, "bridge h-kernel", flow.cond_bound)
    return BridgeMoments(sigma, mu_l, mu_r)


@dataclass(frozen=True, eq=False)
class DualFunctional:
    """Three-point functional ``x -> W_m x(m) + W_l x(l) + W_r x(r)``.

    The weights already contain the ``g^{-1}`` factors and signs, i.e.
    ``W_m = M^T g(m)^{-1}``, ``W_l = -L^T g(l)^{-1}``, ``W_r = -R^T g(r)^{-1}``.
    The root functional only weighs ``x(1)``.
    """

    index: Index
    times: tuple[float, float, float]
    weight_l: np.ndarray
    weight_m: np.ndarray
    weight_r: np.ndarray

    @property
    def is_root(self) -> bool:
        return self.index == (0, 0)


@dataclass(frozen=True, eq=False)
class BasisElement:
    index: Index
    support: Support
    L: np.ndarray
    R: np.ndarray
    M: np.ndarray
    Sigma: np.ndarray
    sigma_root: np.ndarray
    left_gain: np.ndarray
    right_gain: np.ndarray
    mean_l: np.ndarray
    mean_r: np.ndarray
    dual: DualFunctional
    flow: FlowCache

    @property
    def n(self) -> int:
        return self.index[0]

    @property
    def k(self) -> int:
        return self.index[1]

    @property
    def is_root(self) -> bool:
        return self.index == (0, 0)

    def psi(self, t: np.ndarray | float) -> np.ndarray:
        """Schauder element at times ``t``; shape ``t.shape + (d, d)``."""
        t = np.asarray(t, dtype=float)
        flow = self.flow
        d = flow.d
        out = np.zeros(t.shape + (d, d))
        sup = self.support
        if self.is_root:
            inside = (t >= 0.0) & (t <= 1.0)
            ti = t[inside]
            one = np.ones_like(ti)
            out[inside] = flow.flow(one, ti) @ flow.h_kernel(one, np.zeros_like(ti), ti) @ self.left_gain
            out[t == 1.0] = self.sigma_root
            return out
        left = (t >= sup.l) & (t < sup.m)
        right = (t > sup.m) & (t <= sup.r)
        if np.any(left):
            ti = t[left]
            mid = np.full(ti.shape, sup.m)
            out[left] = flow.flow(mid, ti) @ flow.h_kernel(mid, np.full(ti.shape, sup.l), ti) @ self.left_gain
        if np.any(right):
            ti = t[right]
            mid = np.full(ti.shape, sup.m)
            out[right] = flow.flow(mid, ti) @ flow.h_kernel(mid, ti, np.full(ti.shape, sup.r)) @ self.right_gain
        out[t == sup.m] = self.sigma_root
        return out

    def phi(self, t: np.ndarray | float) -> np.ndarray:
        """Orthonormal element at times ``t``; shape ``t.shape + (m, d)``.

        Half-open halves ``[l, m)`` and ``[m, r)``; a support ending at 1 also
        covers ``t = 1``.
        """
        t = np.asarray(t, dtype=float)
        flow = self.flow
        out = np.zeros(t.shape + (flow.m, flow.d))
        sup = self.support
        model = flow.model
        if self.is_root:
            inside = (t >= 0.0) & (t <= 1.0)
            ti = t[inside]
            out[inside] = _t(model.gamma_root_at(ti)) @ _t(flow.flow(ti, np.ones_like(ti))) @ self.left_gain
            return out
        left = (t >= sup.l) & (t < sup.m)
        right = (t >= sup.m) & ((t < sup.r) | ((t == 1.0) & (sup.r == 1.0)))
        for mask, gain, sign in ((left, self.left_gain, 1.0), (right, self.right_gain, -1.0)):
            if np.any(mask):
                ti = t[mask]
                mid = np.full(ti.shape, sup.m)
                out[mask] = sign * _t(model.gamma_root_at(ti)) @ _t(flow.flow(ti, mid)) @ gain
        return out

    def psi_derivative(self, t: np.ndarray | float) -> np.ndarray:
        """Piecewise derivative ``alpha psi + gamma_root phi`` (right derivative at kinks)."""
        t = np.asarray(t, dtype=float)
        model = self.flow.model
        return model.alpha_at(t) @ self.psi(t) + model.gamma_root_at(t) @ self.phi(t)

    def breakpoints(self) -> tuple[float, ...]:
        sup = self.support
        return (0.0, 1.0) if self.is_root else (sup.l, sup.m, sup.r)


def eval_psi(el: BasisElement, t: np.ndarray | float) -> np.ndarray:
    return el.psi(t)


def eval_phi(el: BasisElement, t: np.ndarray | float) -> np.ndarray:
    return el.phi(t)


def _values_at(x: Any, times: tuple[float, ...]) -> list[np.ndarray]:
    if callable(x):
        return [np.asarray(x(t), dtype=float) for t in times]
    if isinstance(x, Mapping):
        try:
            return [np.asarray(x[t], dtype=float) for t in times]
        except KeyError as exc:
            raise InputError(f"path value missing at t={exc.args[0]}") from None
    values = list(x)
    if len(values) != len(times):
        raise InputError(f"expected {len(times)} path values, got {len(values)}")
    return [np.asarray(v, dtype=float) for v in values]


def apply_dual(fun: DualFunctional, x: Any) -> np.ndarray:
    """Apply a dual functional to path values.

    ``x`` is a callable of time, a mapping time -> value, or the sequence of
    values at ``(l, m, r)`` (only ``x(1)`` for the root).  Values may be
    vectors or matrices whose columns are paths.
    """
    if fun.is_root:
        (x1,) = _values_at(x, (1.0,))
        return fun.weight_m @ x1
    xl, xm, xr = _values_at(x, fun.times)
    return fun.weight_m @ xm + fun.weight_l @ xl + fun.weight_r @ xr


def _build_nodes(flow: FlowCache, nodes: list[Support]) -> list[BasisElement]:
    """Vectorised construction of the elements of non-root nodes."""
    l = np.array([s.l for s in nodes])
    m = np.array([s.m for s in nodes])
    r = np.array([s.r for s in nodes])
    bound = flow.cond_bound
    left_h = flow.h_kernel(m, l, m)
    right_h = flow.h_kernel(m, m, r)
    Sigma = symmetrize(left_h @ spd_solve(left_h + right_h, right_h, "support h-kernel", bound))
    sigma = spd_cholesky(Sigma, "bridge covariance", bound)
    left_gain = spd_solve(left_h, sigma, "support h-kernel", bound)
    right_gain = spd_solve(right_h, sigma, "support h-kernel", bound)
    g_m = flow.g(m)
    sigma_inv = np.linalg.inv(sigma)
    L = _t(g_m) @ left_gain
    R = _t(g_m) @ right_gain
    M = _t(g_m) @ _t(sigma_inv)
    w_l = -_t(left_gain) @ flow.flow(l, m)
    w_r = -_t(right_gain) @ flow.flow(r, m)
    # bridge mean of X(m) given X(l), X(r) in the frames of l and r
    full_l = flow.h_kernel(l, l, r)
    mean_l = right_spd_solve(flow.flow(l, m) @ flow.h_kernel(l, m, r), full_l, "support h-kernel", bound)
    full_r = flow.h_kernel(r, l, r)
    mean_r = right_spd_solve(flow.flow(r, m) @ flow.h_kernel(r, l, m), full_r, "support h-kernel", bound)
    out = []
    for i, s in enumerate(nodes):
        dual = DualFunctional(s.index, (s.l, s.m, s.r), w_l[i], sigma_inv[i], w_r[i])
        out.append(BasisElement(s.index, s, L[i], R[i], M[i], Sigma[i], sigma[i], left_gain[i],
                                right_gain[i], mean_l[i], mean_r[i], dual, flow))
    return out


def _build_root(flow: FlowCache, root: Support) -> BasisElement:
    d = flow.d
    full = flow.h_kernel(1.0, 0.0, 1.0)
    sigma = spd_cholesky(full, "covariance at t=1", flow.cond_bound)
    left_gain = spd_solve(full, sigma, "covariance at t=1", flow.cond_bound)
    g1 = flow.g(1.0)
    L = g1.T @ left_gain
    sigma_inv = np.linalg.inv(sigma)
    zero = np.zeros((d, d))
    dual = DualFunctional((0, 0), (0.0, 1.0, 1.0), zero, sigma_inv, zero)
    return BasisElement((0, 0), root, L, zero, L.copy(), symmetrize(full), sigma, left_gain, zero,
                        zero, zero, dual, flow)


def build_element(flow: FlowCache, tree: SupportTree, n: int, k: int) -> BasisElement:
    """Assemble the basis element of node ``(n, k)``; ``(0, 0)`` gives the root."""
    support = tree.node(n, k)
    if support.is_root:
        return _build_root(flow, support)
    return _build_nodes(flow, [support])[0]


class SchauderBasis:
    """All elements of a support tree for one model, built level by level."""

    def __init__(self, flow: FlowCache, tree: SupportTree) -> None:
        self.flow = flow
        self.tree = tree
        self.d = flow.d
        elements: dict[Index, BasisElement] = {(0, 0): _build_root(flow, tree.node(0, 0))}
        for n in range(1, tree.depth + 1):
            for el in _build_nodes(flow, tree.level(n)):
                elements[el.index] = el
        self._elements = elements

    @classmethod
    def for_model(cls, model, depth: int, **flow_options) -> "SchauderBasis":
        return cls(FlowCache(model, **flow_options), SupportTree.build(depth))

    @property
    def model(self):
        return self.flow.model

    @property
    def max_depth(self) -> int:
        """Largest path depth (grid ``D_N``) that the built levels support."""
        return self.tree.depth + 1

    def element(self, n: int, k: int) -> BasisElement:
        try:
            return self._elements[(n, k)]
        except KeyError:
            raise RangeError(f"basis element ({n}, {k}) has not been built") from None

    def __getitem__(self, index: Index) -> BasisElement:
        return self.element(*index)

    def check_depth(self, depth: int) -> None:
        if depth < 1 or depth > self.max_depth:
            raise RangeError(f"depth {depth} outside 1..{self.max_depth} supported by this basis")

    def indices(self, depth: int) -> list[Index]:
        self.check_depth(depth)
        return ordered_indices(depth)

    def points(self, depth: int) -> np.ndarray:
        self.check_depth(depth)
        return np.array([self._elements[i].support.m for i in ordered_indices(depth)])

    def grid(self, depth: int) -> np.ndarray:
        """Sorted ``D_depth`` including 0."""
        return np.concatenate([[0.0], np.sort(self.points(depth))])

    def elements(self, depth: int) -> list[BasisElement]:
        return [self._elements[i] for i in self.indices(depth)]

    def ancestors(self, t: float, depth: int) -> list[BasisElement]:
        """Root and, for each level below ``depth``, the element whose support contains ``t``."""
        out = [self._elements[(0, 0)]]
        for n in range(1, depth):
            k = int(self.tree.locate(t, n))
            out.append(self._elements[(n, k)])
        return out
