"""Dichotomic search for first hitting times of a level (or half-space).

Paths start at a coarse depth.  Each interval of the current grid gets the
probability that the path crosses the boundary inside it given its end
values.  Intervals whose probability is below ``p_low`` are discarded,
intervals after the earliest one whose right end is already past the
boundary (a "straddle") are irrelevant, and every other interval is split by
adding its node with the same random stream :func:`transforms.refine` uses.
At ``max_depth`` the first interval that straddles the boundary, or whose
crossing probability is at least ``p_high``, or which is declared crossed by
an independent uniform draw against its crossing probability, brackets the
hitting time.

Crossing probability of a one-dimensional model: ``X(t) / g(t)`` is a
Brownian motion run with clock ``eta(t) = h_0(0, t)``, so freezing the
boundary ``a(t) / g(t)`` at the interval ends gives the Brownian-bridge
formula

    p = exp(-2 (a_l - y_l)(a_r - y_r) / (eta_r - eta_l)),  y = x / g,  a = level / g,

exact for the Wiener process with a constant level.  In several dimensions
the projection ``v . X`` is treated as a Brownian bridge whose midpoint
variance equals the exact conditional variance ``v^T Sigma v`` of the bridge
at the interval midpoint (an approximation: the projection is not Markov).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .basis import SchauderBasis, bridge_moments
from .errors import DegeneracyError, InputError, RangeError
from .transforms import coefficient_normals, sample_paths

DEFAULT_P_LOW = 1e-4
DEFAULT_P_HIGH = 1.0 - 1e-4
UNIFORM_TAG = 1 << 62


def bridge_crossing_probability(
    flow,
    x_l: np.ndarray | float,
    x_r: np.ndarray | float,
    l: np.ndarray | float,
    r: np.ndarray | float,
    level: float | Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    """Probability that a scalar model path pinned at ``(l, x_l)`` and ``(r, x_r)`` reaches ``level``.

    Returns 1 where an end value already lies at or above the level.
    """
    x_l, x_r, l, r = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x_l, x_r, l, r)))
    if flow.d != 1:
        raise InputError("bridge_crossing_probability works on scalar models; project first")
    a_l = _level_at(level, l)
    a_r = _level_at(level, r)
    g_l, g_r = flow.g(l)[..., 0, 0], flow.g(r)[..., 0, 0]
    eta_l = flow.h(np.zeros_like(l), l)[..., 0, 0]
    eta_r = flow.h(np.zeros_like(r), r)[..., 0, 0]
    return _crossing(x_l / g_l, x_r / g_r, a_l / g_l, a_r / g_r, eta_r - eta_l)


def _level_at(level, t: np.ndarray) -> np.ndarray:
    if callable(level):
        return np.broadcast_to(np.asarray(level(t), dtype=float), t.shape)
    return np.full(t.shape, float(level))


def _crossing(y_l, y_r, a_l, a_r, spread) -> np.ndarray:
    y_l, y_r, a_l, a_r, spread = np.broadcast_arrays(y_l, y_r, a_l, a_r, spread)
    crossed = (y_l >= a_l) | (y_r >= a_r)
    if np.any(~crossed & ~(spread > 0)):
        raise DegeneracyError("crossing probability on an interval with no variance")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        expo = -2.0 * (a_l - y_l) * (a_r - y_r) / spread
        p = np.exp(np.where(np.isfinite(expo), expo, -np.inf))
    return np.where(crossed, 1.0, p)


@dataclass
class FptQuery:
    """Boundary, search depths and thresholds of a first-passage run.

    ``level`` is a number or a callable ``a(t)``; for ``d > 1`` models a
    ``direction`` vector turns it into the half-space ``direction . x >= level``.
    """

    level: float | Callable[[np.ndarray], np.ndarray]
    max_depth: int
    paths: int
    seed: int
    p_low: float = DEFAULT_P_LOW
    p_high: float = DEFAULT_P_HIGH
    start_depth: int = 3
    direction: Sequence[float] | None = None
    path_ids: Sequence[int] | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.p_low < self.p_high < 1.0:
            raise InputError("thresholds must satisfy 0 < p_low < p_high < 1")
        if self.start_depth < 1 or self.start_depth > self.max_depth:
            raise InputError("start_depth must lie in 1..max_depth")
        if self.path_ids is None and self.paths < 0:
            raise InputError("path count must be non-negative")

    def ids(self) -> np.ndarray:
        if self.path_ids is not None:
            return np.asarray(self.path_ids, dtype=np.int64)
        return np.arange(self.paths, dtype=np.int64)


@dataclass
class FptResult:
    """Per-path outcome plus work counters.

    ``kind`` is 0 for no crossing, 1 when the bracket's right end is at or
    past the boundary, 2 when the crossing inside the bracket was decided by
    its bridge crossing probability.
    """

    path_ids: np.ndarray
    crossed: np.ndarray
    tau_lo: np.ndarray
    tau_hi: np.ndarray
    kind: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    coarse_nodes: int
    refined_nodes: int
    full_tree_nodes: int
    refined_per_level: dict[int, int] = field(default_factory=dict)

    @property
    def refined_fraction(self) -> float:
        """Nodes used (coarse plus refined) relative to simulating every path at full depth."""
        return (self.coarse_nodes + self.refined_nodes) / self.full_tree_nodes if self.full_tree_nodes else 0.0

    @property
    def tau(self) -> np.ndarray:
        """Bracket midpoints; NaN for paths that never cross."""
        return np.where(self.crossed, 0.5 * (self.tau_lo + self.tau_hi), np.nan)


class _Boundary:
    """Projection and crossing probability for one query on one basis."""

    def __init__(self, basis: SchauderBasis, query: FptQuery) -> None:
        self.basis = basis
        self.flow = basis.flow
        self.level = query.level
        d = basis.d
        if d == 1:
            self.direction = None if query.direction is None else np.asarray(query.direction, dtype=float).reshape(1)
        else:
            if query.direction is None:
                raise InputError("models with d > 1 need a half-space direction")
            self.direction = np.asarray(query.direction, dtype=float).reshape(d)
        if self.direction is not None and not np.any(self.direction):
            raise InputError("direction must be non-zero")
        self._spread_cache: dict[tuple[float, float], float] = {}

    def project(self, x: np.ndarray) -> np.ndarray:
        if self.direction is None:
            return x[..., 0]
        return x @ self.direction

    def level_at(self, t: np.ndarray) -> np.ndarray:
        return _level_at(self.level, t)

    def probability(self, x_l: np.ndarray, x_r: np.ndarray, l: np.ndarray, r: np.ndarray) -> np.ndarray:
        y_l, y_r = self.project(x_l), self.project(x_r)
        a_l, a_r = self.level_at(l), self.level_at(r)
        if self.basis.d == 1:
            scale = 1.0 if self.direction is None else float(self.direction[0])
            g_l, g_r = self.flow.g(l)[..., 0, 0], self.flow.g(r)[..., 0, 0]
            eta_l = self.flow.h(np.zeros_like(l), l)[..., 0, 0] * scale * scale
            eta_r = self.flow.h(np.zeros_like(r), r)[..., 0, 0] * scale * scale
            return _crossing(y_l / g_l, y_r / g_r, a_l / g_l, a_r / g_r, eta_r - eta_l)
        spread = np.array([self._spread(float(a), float(b)) for a, b in zip(l, r)])
        return _crossing(y_l, y_r, a_l, a_r, spread)

    def _spread(self, l: float, r: float) -> float:
        key = (l, r)
        if key not in self._spread_cache:
            mid = 0.5 * (l + r)
            sigma = bridge_moments(self.flow, np.array([mid]), l, r).sigma[0]
            self._spread_cache[key] = 4.0 * float(self.direction @ sigma @ self.direction)
        return self._spread_cache[key]


def _uniforms(seed: int, n: int, k: np.ndarray, path_ids: np.ndarray) -> np.ndarray:
    """Decision uniforms for final-level intervals, from a stream disjoint from the coefficients."""
    out = np.empty(len(path_ids))
    for kk in np.unique(k):
        sel = k == kk
        out[sel] = ndtr(coefficient_normals(seed, n, int(kk) | UNIFORM_TAG, 1, path_ids[sel])[:, 0])
    return out


def _run(basis: SchauderBasis, query: FptQuery, ids: np.ndarray) -> FptResult:
    tree = basis.tree
    d = basis.d
    boundary = _Boundary(basis, query)
    count = len(ids)
    crossed = np.zeros(count, dtype=bool)
    tau_lo = np.full(count, np.nan)
    tau_hi = np.full(count, np.nan)
    kind = np.zeros(count, dtype=np.int8)
    x_lo = np.full((count, d), np.nan)
    x_hi = np.full((count, d), np.nan)
    start = query.start_depth
    full = count * 2 ** (query.max_depth - 1)
    coarse = count * 2 ** (start - 1)
    per_level: dict[int, int] = {}

    if float(boundary.level_at(np.array([0.0]))[0]) <= 0.0:
        crossed[:] = True
        tau_lo[:] = tau_hi[:] = 0.0
        kind[:] = 1
        x_lo[:] = x_hi[:] = 0.0
        return FptResult(ids, crossed, tau_lo, tau_hi, kind, x_lo, x_hi, coarse, 0, full, per_level)

    batch = sample_paths(basis, query.seed, start, path_ids=ids)
    intervals = 2 ** (start - 1)
    path_idx = np.repeat(np.arange(count), intervals)
    node = np.tile(np.arange(intervals), count)
    values = batch.values
    x_l = values[:, :-1, :].reshape(-1, d)
    x_r = values[:, 1:, :].reshape(-1, d)

    level = start
    while True:
        supports = [tree.node(level, int(k)) for k in range(2 ** (level - 1))] if level <= tree.depth else None
        lefts = _level_lefts(basis, level, supports)
        l = lefts[0][node]
        r = lefts[1][node]
        prob = boundary.probability(x_l, x_r, l, r)
        straddle = boundary.project(x_r) >= boundary.level_at(r)
        first = np.full(count, np.iinfo(np.int64).max)
        np.minimum.at(first, path_idx[straddle], node[straddle])
        relevant = (node <= first[path_idx]) & (prob > query.p_low)

        if level == query.max_depth:
            decisive = straddle | (prob >= query.p_high)
            undecided = relevant & ~decisive
            if np.any(undecided):
                draws = _uniforms(query.seed, level, node[undecided], ids[path_idx[undecided]])
                hit = np.zeros_like(decisive)
                hit[np.flatnonzero(undecided)[draws < prob[undecided]]] = True
                decisive = decisive | hit
            decisive &= relevant
            order = np.lexsort((node, path_idx))
            chosen = order[decisive[order]]
            uniq, first_pos = np.unique(path_idx[chosen], return_index=True)
            pick = chosen[first_pos]
            crossed[uniq] = True
            tau_lo[uniq] = l[pick]
            tau_hi[uniq] = r[pick]
            kind[uniq] = np.where(straddle[pick], 1, 2)
            x_lo[uniq] = x_l[pick]
            x_hi[uniq] = x_r[pick]
            break

        keep = np.flatnonzero(relevant)
        path_idx, node, x_l, x_r = path_idx[keep], node[keep], x_l[keep], x_r[keep]
        per_level[level] = len(keep)
        x_m = np.empty_like(x_l)
        for k in np.unique(node):
            sel = node == k
            el = basis.element(level, int(k))
            xi = coefficient_normals(query.seed, level, int(k), d, ids[path_idx[sel]])
            x_m[sel] = x_l[sel] @ el.mean_l.T + x_r[sel] @ el.mean_r.T + xi @ el.sigma_root.T
        path_idx = np.repeat(path_idx, 2)
        node = np.stack([2 * node, 2 * node + 1], axis=1).ravel()
        x_l, x_r = np.stack([x_l, x_m], axis=1).reshape(-1, d), np.stack([x_m, x_r], axis=1).reshape(-1, d)
        level += 1

    refined = sum(per_level.values())
    return FptResult(ids, crossed, tau_lo, tau_hi, kind, x_lo, x_hi, coarse, refined, full, per_level)


def _level_lefts(basis: SchauderBasis, level: int, supports) -> tuple[np.ndarray, np.ndarray]:
    """Interval ends of the grid of path depth ``level``."""
    if supports is not None:
        return np.array([s.l for s in supports]), np.array([s.r for s in supports])
    grid = basis.grid(level)
    return grid[:-1], grid[1:]


def first_passage(basis: SchauderBasis, query: FptQuery, threads: int = 1) -> FptResult:
    """Bracket the first time each path reaches the boundary on ``[0, 1]``.

    Paths are processed in independent chunks when ``threads > 1``; each path
    reads only its own random streams, so results do not depend on the
    number of threads.
    """
    if query.max_depth > basis.max_depth:
        raise RangeError(f"max_depth {query.max_depth} exceeds the basis depth {basis.max_depth}")
    ids = query.ids()
    if threads <= 1 or len(ids) < 2 * threads:
        return _run(basis, query, ids)
    chunks = np.array_split(ids, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: _run(basis, query, c), chunks))
    per_level: dict[int, int] = {}
    for part in parts:
        for key, value in part.refined_per_level.items():
            per_level[key] = per_level.get(key, 0) + value
    return FptResult(
        ids,
        np.concatenate([p.crossed for p in parts]),
        np.concatenate([p.tau_lo for p in parts]),
        np.concatenate([p.tau_hi for p in parts]),
        np.concatenate([p.kind for p in parts]),
        np.concatenate([p.x_lo for p in parts]),
        np.concatenate([p.x_hi for p in parts]),
        sum(p.coarse_nodes for p in parts),
        sum(p.refined_nodes for p in parts),
        sum(p.full_tree_nodes for p in parts),
        per_level,
    )


def wiener_hitting_cdf(t: np.ndarray, level: float) -> np.ndarray:
    """``P(tau <= t) = 2 (1 - Phi(level / sqrt(t)))`` for a standard Wiener process."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(t > 0, 2.0 * ndtr(-level / np.sqrt(np.where(t > 0, t, 1.0))), 0.0)


def ks_distance(result: FptResult, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Kolmogorov-Smirnov distance between the empirical (defective) law of the
    bracket midpoints on ``[0, 1]`` and ``cdf``; non-crossing paths carry mass beyond 1."""
    total = len(result.crossed)
    if total == 0:
        return 0.0
    taus = np.sort(result.tau[result.crossed])
    if taus.size == 0:
        return float(cdf(np.array([1.0]))[0])
    model = cdf(taus)
    upper = np.arange(1, taus.size + 1) / total
    lower = np.arange(0, taus.size) / total
    return float(max(np.max(np.abs(upper - model)), np.max(np.abs(lower - model)),
                     abs(taus.size / total - float(cdf(np.array([1.0]))[0]))))
