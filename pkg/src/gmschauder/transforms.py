"""Coefficient fields, sample paths and the maps between them.

* :func:`construct` sums ``psi_{n,k}(t) xi_{n,k}`` over the nodes whose
  supports contain ``t`` (one per level), so a grid value costs O(N).
* :func:`coefficients` applies the dual three-point functionals.
* :func:`assemble_psi_matrix` / :func:`assemble_delta_matrix` give the
  block lower-triangular finite-dimensional versions in recursive dyadic
  order.
* :func:`sample`, :func:`sample_paths` and :func:`refine` draw coefficients
  from a counter-based generator keyed by ``(seed, n, k)`` so that a draw
  does not depend on the order in which nodes are visited.
* :func:`apply_K` / :func:`apply_D` are the integral operator
  ``u -> g(t) int_0^t f u`` and its left inverse ``u -> f^{-1} (g^{-1} u)'``.

A path or field of depth ``N`` holds the root and levels ``1..N-1``; its
values are determined on the grid ``D_N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse
import scipy.special

from .basis import BasisElement, SchauderBasis
from .errors import InputError, RangeError, UnsupportedModelError
from .model import FlowCache
from .partition import Index

FD_STEP = 1e-6
_TWO_POW_53 = float(2**53)


# ---------------------------------------------------------------------------
# counter-based Gaussian draws
# ---------------------------------------------------------------------------

def _philox_key(seed: int, n: int, k: int) -> np.ndarray:
    return np.array([int(seed) % 2**64, (int(n) << 40) | int(k)], dtype=np.uint64)


def _to_normal(raw: np.ndarray) -> np.ndarray:
    uniform = ((raw >> np.uint64(11)).astype(float) + 0.5) / _TWO_POW_53
    return scipy.special.ndtri(uniform)


def coefficient_normals(seed: int, n: int, k: int, d: int, path_ids: Sequence[int] | int) -> np.ndarray:
    """Standard normal draws of node ``(n, k)`` for the requested path ids.

    A Philox stream is keyed by ``(seed, n, k)``; path ``p`` reads the counter
    blocks ``p * B .. p * B + B - 1`` with ``B = ceil(d / 4)``, so the draw of
    any ``(seed, n, k, p)`` is addressable directly.  ``path_ids`` may be an
    integer count meaning ``range(count)``.  Returns shape ``(len(ids), d)``.
    """
    blocks = -(-d // 4)
    key = _philox_key(seed, n, k)
    if isinstance(path_ids, (int, np.integer)):
        raw = np.random.Philox(key=key).random_raw(4 * blocks * int(path_ids))
        return _to_normal(raw.reshape(int(path_ids), 4 * blocks)[:, :d])
    ids = np.asarray(path_ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros((0, d))
    top = int(ids.max()) + 1
    if top <= 64 * ids.size:
        raw = np.random.Philox(key=key).random_raw(4 * blocks * top).reshape(top, 4 * blocks)
        return _to_normal(raw[ids, :d])
    out = np.empty((ids.size, d))
    for i, p in enumerate(ids):
        gen = np.random.Philox(key=key, counter=[int(p) * blocks, 0, 0, 0])
        out[i] = _to_normal(gen.random_raw(4 * blocks)[:d])
    return out


# ---------------------------------------------------------------------------
# coefficient fields and paths
# ---------------------------------------------------------------------------

@dataclass
class CoefficientField:
    """Map from node index to a coefficient vector in ``R^d``."""

    d: int
    values: dict[Index, np.ndarray] = field(default_factory=dict)

    @property
    def depth(self) -> int:
        """One more than the deepest level present (root only: 1)."""
        return 1 + max((n for n, _ in self.values), default=0)

    def __getitem__(self, index: Index) -> np.ndarray:
        return self.values[index]

    def __contains__(self, index: Index) -> bool:
        return index in self.values

    def is_complete(self) -> bool:
        return all(
            (n, k) in self.values for n in range(self.depth) for k in range(max(1, 2 ** (n - 1)))
        )

    def as_array(self, indices: Sequence[Index]) -> np.ndarray:
        return np.array([self.values.get(i, np.zeros(self.d)) for i in indices])

    @classmethod
    def from_array(cls, indices: Sequence[Index], array: np.ndarray) -> "CoefficientField":
        array = np.asarray(array, dtype=float)
        array = array.reshape(len(indices), -1)
        return cls(array.shape[1], {idx: array[i].copy() for i, idx in enumerate(indices)})

    @classmethod
    def zeros(cls, d: int, depth: int) -> "CoefficientField":
        from .partition import ordered_indices

        return cls(d, {i: np.zeros(d) for i in ordered_indices(depth)})

    def admissibility(self, start_level: int = 1) -> float:
        """Smallest ``delta >= 0`` with ``|xi_{n,k}| <= 2^{n delta / 2}`` for all levels ``n >= start_level``.

        Uses the sup norm over components; a finite proxy for membership of
        the set of coefficient sequences that yield continuous paths
        (``delta < 1``).
        """
        worst = 0.0
        for (n, _), v in self.values.items():
            if n >= max(start_level, 1):
                size = float(np.max(np.abs(v)))
                if size > 0:
                    worst = max(worst, 2.0 * math.log2(size) / n)
        return worst


def construct(basis: SchauderBasis, xi: CoefficientField, t: np.ndarray | float) -> np.ndarray:
    """Partial sum ``sum psi_{n,k}(t) xi_{n,k}`` at times ``t``; shape ``t.shape + (d,)``."""
    depth = xi.depth
    if depth > basis.max_depth:
        raise RangeError(f"coefficient field of depth {depth} exceeds the basis depth {basis.max_depth}")
    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1)
    out = np.zeros((flat.size, basis.d))
    if (0, 0) in xi:
        out += basis.element(0, 0).psi(flat) @ xi[(0, 0)]
    for n in range(1, depth):
        ks = basis.tree.locate(flat, n)
        for k in np.unique(ks):
            coef = xi.values.get((n, int(k)))
            if coef is None:
                continue
            el = basis.element(n, int(k))
            # a point on the shared boundary of two supports belongs to both; psi vanishes there
            mask = (flat >= el.support.l) & (flat <= el.support.r)
            out[mask] += el.psi(flat[mask]) @ coef
    return out.reshape(t.shape + (basis.d,))


def construct_derivative(basis: SchauderBasis, xi: CoefficientField, t: np.ndarray | float) -> np.ndarray:
    """Right derivative of the partial sum, ``alpha x + gamma_root sum phi xi``."""
    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1)
    flow = basis.flow
    noise = np.zeros((flat.size, flow.m))
    if (0, 0) in xi:
        noise += basis.element(0, 0).phi(flat) @ xi[(0, 0)]
    for n in range(1, xi.depth):
        ks = basis.tree.locate(flat, n)
        for k in np.unique(ks):
            coef = xi.values.get((n, int(k)))
            if coef is None:
                continue
            el = basis.element(n, int(k))
            mask = (flat >= el.support.l) & (flat <= el.support.r)
            noise[mask] += el.phi(flat[mask]) @ coef
    model = flow.model
    x = construct(basis, xi, flat)
    dx = (model.alpha_at(flat) @ x[..., None])[..., 0] + (model.gamma_root_at(flat) @ noise[..., None])[..., 0]
    return dx.reshape(t.shape + (basis.d,))


def _as_lookup(x: Any, times: np.ndarray, d: int) -> Callable[[float], np.ndarray]:
    if callable(x):
        return lambda t: np.asarray(x(t), dtype=float).reshape(-1)
    if isinstance(x, Mapping):
        table = {float(k): np.asarray(v, dtype=float).reshape(-1) for k, v in x.items()}

        def lookup(t: float) -> np.ndarray:
            try:
                return table[float(t)]
            except KeyError:
                if t == 0.0:
                    return np.zeros(d)
                raise InputError(f"grid value missing at t={t!r}") from None

        return lookup
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == len(times) - 1:
        arr = np.vstack([np.zeros((1, arr.shape[1])), arr])
    if arr.shape != (len(times), d):
        raise InputError(f"expected grid values of shape {(len(times), d)}, got {arr.shape}")
    table = {float(tt): arr[i] for i, tt in enumerate(times)}
    return lambda t: table[float(t)]


def coefficients(basis: SchauderBasis, x: Any, depth: int) -> CoefficientField:
    """Coefficients of levels ``< depth`` from path values on ``D_depth``.

    ``x`` is a callable, a mapping time -> value or an array of values on the
    sorted grid (with or without the point 0).
    """
    basis.check_depth(depth)
    times = basis.grid(depth)
    lookup = _as_lookup(x, times, basis.d)
    cache: dict[float, np.ndarray] = {}

    def value(t: float) -> np.ndarray:
        if t not in cache:
            v = lookup(t)
            if v.shape != (basis.d,):
                raise InputError(f"path value at t={t} has shape {v.shape}, expected ({basis.d},)")
            cache[t] = v
        return cache[t]

    out: dict[Index, np.ndarray] = {}
    for el in basis.elements(depth):
        dual = el.dual
        if el.is_root:
            out[el.index] = dual.weight_m @ value(1.0)
        else:
            l, m, r = dual.times
            out[el.index] = dual.weight_m @ value(m) + dual.weight_l @ value(l) + dual.weight_r @ value(r)
    return CoefficientField(basis.d, out)


# ---------------------------------------------------------------------------
# finite-dimensional matrices
# ---------------------------------------------------------------------------

def assemble_psi_matrix(basis: SchauderBasis, depth: int, sparse: bool = False):
    """Block matrix ``[psi_{n,k}(m_{i,j})]``; rows follow the pinning points of
    :meth:`SchauderBasis.indices`, columns the elements, both in recursive dyadic order."""
    indices = basis.indices(depth)
    points = basis.points(depth)
    d = basis.d
    size = len(indices) * d
    rows, cols, vals = [], [], []
    order = np.argsort(points, kind="stable")
    sorted_points = points[order]
    for j, idx in enumerate(indices):
        el = basis.element(*idx)
        lo = np.searchsorted(sorted_points, el.support.l, side="right")
        hi = np.searchsorted(sorted_points, el.support.r, side="right")
        sel = order[lo:hi]
        if sel.size == 0:
            continue
        blocks = el.psi(points[sel])
        for i, block in zip(sel, blocks):
            rr, cc = np.nonzero(block)
            rows.extend(i * d + rr)
            cols.extend(j * d + cc)
            vals.extend(block[rr, cc])
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    return mat if sparse else mat.toarray()


def assemble_delta_matrix(basis: SchauderBasis, depth: int, sparse: bool = False):
    """Block matrix of the dual functionals acting on values at the pinning points.

    Values at ``t = 0`` are fixed to zero and therefore carry no column.
    """
    indices = basis.indices(depth)
    points = basis.points(depth)
    d = basis.d
    column = {float(p): i for i, p in enumerate(points)}
    size = len(indices) * d
    rows, cols, vals = [], [], []

    def put(i: int, t: float, w: np.ndarray) -> None:
        if t == 0.0:
            return
        j = column[float(t)]
        rr, cc = np.nonzero(w)
        rows.extend(i * d + rr)
        cols.extend(j * d + cc)
        vals.extend(w[rr, cc])

    for i, idx in enumerate(indices):
        dual = basis.element(*idx).dual
        if dual.is_root:
            put(i, 1.0, dual.weight_m)
            continue
        l, m, r = dual.times
        put(i, m, dual.weight_m)
        put(i, l, dual.weight_l)
        put(i, r, dual.weight_r)
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    return mat if sparse else mat.toarray()


def grid_covariance(basis: SchauderBasis, depth: int) -> np.ndarray:
    """``[C(m_{i,j}, m_{k,l})]`` in the row order of :func:`assemble_psi_matrix`."""
    points = basis.points(depth)
    d = basis.d
    cov = basis.flow.covariance(points[:, None], points[None, :])
    return cov.transpose(0, 2, 1, 3).reshape(len(points) * d, len(points) * d)


# ---------------------------------------------------------------------------
# sampling and refinement
# ---------------------------------------------------------------------------

@dataclass
class SamplePath:
    """Coefficients (source of truth) plus the grid values they determine."""

    basis: SchauderBasis
    coefficients: CoefficientField
    values: dict[float, np.ndarray]
    path_id: int = 0

    @property
    def depth(self) -> int:
        return self.coefficients.depth

    def __call__(self, t: np.ndarray | float) -> np.ndarray:
        return construct(self.basis, self.coefficients, t)

    def derivative(self, t: np.ndarray | float) -> np.ndarray:
        return construct_derivative(self.basis, self.coefficients, t)

    def times(self) -> np.ndarray:
        return np.array(sorted(self.values))

    def grid_values(self) -> tuple[np.ndarray, np.ndarray]:
        times = self.times()
        return times, np.array([self.values[t] for t in times])

    def breakpoints(self) -> np.ndarray:
        return self.times()


@dataclass
class PathBatch:
    """Many complete paths of one depth stored as arrays.

    ``values`` has shape ``(paths, len(times), d)`` with ``times`` the sorted
    grid including 0; ``xi`` has shape ``(paths, len(indices), d)``.
    """

    basis: SchauderBasis
    depth: int
    times: np.ndarray
    values: np.ndarray
    indices: list[Index]
    xi: np.ndarray
    path_ids: np.ndarray

    def path(self, i: int) -> SamplePath:
        field_ = CoefficientField.from_array(self.indices, self.xi[i])
        vals = {float(t): self.values[i, j].copy() for j, t in enumerate(self.times)}
        return SamplePath(self.basis, field_, vals, int(self.path_ids[i]))


def _grid_from_points(points: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(points)
    times = np.concatenate([[0.0], points[order]])
    vals = values[:, order, :]
    zero = np.zeros((vals.shape[0], 1, vals.shape[2]))
    return times, np.concatenate([zero, vals], axis=1)


def sample_paths(
    basis: SchauderBasis,
    seed: int,
    depth: int,
    n_paths: int | None = None,
    path_ids: Sequence[int] | None = None,
) -> PathBatch:
    """Draw complete depth-``depth`` paths; path ``p`` uses stream position ``p``."""
    indices = basis.indices(depth)
    d = basis.d
    if path_ids is None:
        if n_paths is None:
            raise InputError("give n_paths or path_ids")
        ids: np.ndarray | int = int(n_paths)
        id_array = np.arange(int(n_paths))
    else:
        id_array = np.asarray(path_ids, dtype=np.int64)
        ids = id_array
    xi = np.stack([coefficient_normals(seed, n, k, d, ids) for n, k in indices], axis=1)
    psi = assemble_psi_matrix(basis, depth, sparse=True)
    flat = xi.reshape(xi.shape[0], -1)
    grid = (psi @ flat.T).T.reshape(xi.shape)
    times, values = _grid_from_points(basis.points(depth), grid)
    return PathBatch(basis, depth, times, values, indices, xi, id_array)


def sample(basis: SchauderBasis, seed: int, depth: int, path_id: int = 0) -> SamplePath:
    """One sample path of the given depth, deterministic in ``(seed, path_id)``."""
    indices = basis.indices(depth)
    d = basis.d
    xi = CoefficientField(d, {(n, k): coefficient_normals(seed, n, k, d, [path_id])[0] for n, k in indices})
    points = basis.points(depth)
    vals = construct(basis, xi, points)
    values = {0.0: np.zeros(d)}
    values.update({float(p): vals[i] for i, p in enumerate(points)})
    return SamplePath(basis, xi, values, path_id)


def refine(path: SamplePath, targets: Iterable[Index], seed: int) -> SamplePath:
    """Add the listed nodes to a path: each new split-point value is the current
    interpolant plus ``sigma_{n,k} xi`` with a fresh draw; existing values stay fixed."""
    basis = path.basis
    coeffs = dict(path.coefficients.values)
    values = dict(path.values)
    targets = list(dict.fromkeys(tuple(int(v) for v in t) for t in targets))
    for n, k in sorted(targets):
        if n < 1 or n > basis.tree.depth or not 0 <= k < 2 ** (n - 1):
            raise RangeError(f"refinement target ({n}, {k}) is not a node of the basis tree")
        if (n, k) in coeffs:
            raise RangeError(f"node ({n}, {k}) is already part of the path")
        parent = (0, 0) if n == 1 else (n - 1, k // 2)
        if parent not in coeffs:
            raise RangeError(f"node ({n}, {k}) cannot be refined before its parent {parent}")
    new = dict(coeffs)
    for n, k in sorted(targets):
        xi = coefficient_normals(seed, n, k, basis.d, [path.path_id])[0]
        new[(n, k)] = xi
    result = CoefficientField(basis.d, new)
    base = CoefficientField(basis.d, coeffs)
    for n, k in sorted(targets):
        el = basis.element(n, k)
        interp = construct(basis, base, el.support.m)
        values[float(el.support.m)] = interp + el.sigma_root @ new[(n, k)]
    return SamplePath(basis, result, values, path.path_id)


def refine_midpoint(el: BasisElement, x_l: np.ndarray, x_r: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Split-point value from neighbouring grid values: bridge mean plus ``sigma xi``.

    Arrays carry a leading batch axis and a trailing state axis.
    """
    return x_l @ el.mean_l.T + x_r @ el.mean_r.T + xi @ el.sigma_root.T


# ---------------------------------------------------------------------------
# operators K and D
# ---------------------------------------------------------------------------

def _as_matrix_values(u: Callable, s: np.ndarray) -> tuple[np.ndarray, bool]:
    val = np.asarray(u(s), dtype=float)
    vector = val.ndim == s.ndim + 1
    if vector:
        val = val[..., None]
    return val, vector


def apply_K(flow: FlowCache, u: Callable, t: np.ndarray | float, breakpoints: Iterable[float] = ()) -> np.ndarray:
    """``K[u](t) = g(t) int_0^t f(s) u(s) ds`` by composite Gauss-Legendre quadrature.

    ``u`` maps an array of times to values of shape ``(..., m)`` or
    ``(..., m, c)``; integration intervals are split at ``breakpoints`` and at
    every requested time.
    """
    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1)
    if np.any((flat < 0) | (flat > 1)):
        raise InputError("apply_K evaluates on [0, 1] only")
    cuts = np.unique(np.concatenate([[0.0], flat, [b for b in breakpoints if 0.0 < b <= 1.0]]))
    lo, hi = cuts[:-1], cuts[1:]
    nodes, weights = np.polynomial.legendre.leggauss(flow.quadrature_order)
    half = 0.5 * (hi - lo)
    s = (0.5 * (hi + lo))[:, None] + half[:, None] * nodes
    w = half[:, None] * weights
    vals, vector = _as_matrix_values(u, s)
    integrand = flow.f(s) @ vals
    seg = np.einsum("sq,sq...->s...", w, integrand)
    cum = np.concatenate([np.zeros((1,) + seg.shape[1:]), np.cumsum(seg, axis=0)])
    pos = np.searchsorted(cuts, flat)
    out = flow.g(flat) @ cum[pos]
    if vector:
        out = out[..., 0]
    return out.reshape(t.shape + out.shape[1:])


def _require_square_invertible(flow: FlowCache, t: np.ndarray) -> np.ndarray:
    if flow.m != flow.d:
        raise UnsupportedModelError("D requires a square diffusion matrix (m = d)")
    root = flow.model.gamma_root_at(t)
    cond = np.linalg.cond(root)
    if np.any(~np.isfinite(cond)) or np.max(cond) > flow.cond_bound:
        raise UnsupportedModelError("D requires an invertible diffusion matrix")
    return root


def apply_D(flow: FlowCache, u: Callable, t: np.ndarray | float, du: Callable | None = None) -> np.ndarray:
    """``D[u](t) = f(t)^{-1} d/dt (g(t)^{-1} u(t)) = gamma_root^{-1} (u' - alpha u)``.

    ``du`` gives the derivative analytically; otherwise central differences
    with step ``1e-6`` (one-sided at the ends of [0, 1]) are used.
    """
    t = np.asarray(t, dtype=float)
    root = _require_square_invertible(flow, t)
    vals, vector = _as_matrix_values(u, t)
    if du is not None:
        dvals, _ = _as_matrix_values(du, t)
    else:
        lo = np.clip(t - FD_STEP, 0.0, 1.0)
        hi = np.clip(t + FD_STEP, 0.0, 1.0)
        up, _ = _as_matrix_values(u, hi)
        down, _ = _as_matrix_values(u, lo)
        dvals = (up - down) / (hi - lo)[..., None, None]
    rate = dvals - flow.model.alpha_at(t) @ vals
    out = np.linalg.solve(root, rate)
    return out[..., 0] if vector else out


# ---------------------------------------------------------------------------
# discrete integration by parts
# ---------------------------------------------------------------------------

def integration_by_parts_defect(batch_x: PathBatch, batch_y: PathBatch) -> np.ndarray:
    """``X_1 Y_1`` minus the grid Stratonovich decomposition of two 1-D paths.

    The decomposition is the trapezoidal drift integral of
    ``(alpha_X + alpha_Y) X Y`` plus the two midpoint sums
    ``sum g_X(t_i) (Y_i + Y_{i+1}) / 2 * (X_{i+1}/g_X(t_{i+1}) - X_i/g_X(t_i))``
    and its mirror image.  Returns one defect per path.
    """
    if batch_x.basis.d != 1 or batch_y.basis.d != 1:
        raise UnsupportedModelError("the integration-by-parts check is one-dimensional")
    if not np.array_equal(batch_x.times, batch_y.times):
        raise InputError("both batches must share the grid")
    t = batch_x.times
    x = batch_x.values[..., 0]
    y = batch_y.values[..., 0]
    fx, fy = batch_x.basis.flow, batch_y.basis.flow
    gx = fx.g(t)[:, 0, 0]
    gy = fy.g(t)[:, 0, 0]
    ax = fx.model.alpha_at(t)[:, 0, 0]
    ay = fy.model.alpha_at(t)[:, 0, 0]
    drift = (ax + ay) * x * y
    dt = np.diff(t)
    drift_sum = np.sum(0.5 * dt * (drift[:, :-1] + drift[:, 1:]), axis=1)
    sx = np.sum(gx[:-1] * 0.5 * (y[:, :-1] + y[:, 1:]) * np.diff(x / gx, axis=1), axis=1)
    sy = np.sum(gy[:-1] * 0.5 * (x[:, :-1] + x[:, 1:]) * np.diff(y / gy, axis=1), axis=1)
    return x[:, -1] * y[:, -1] - (drift_sum + sx + sy)
