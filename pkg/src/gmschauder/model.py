"""Gauss-Markov process models and their flow / h-kernel evaluators.

A model is the linear SDE ``dX = alpha(t) X dt + gamma_root(t) dW`` on ``[0, 1]``
started at zero, with state dimension ``d`` and noise dimension ``m``.
:class:`FlowCache` provides the resolvent ``F(s, t)``, the functions
``g(t) = F(0, t)`` and ``f(t) = g(t)^{-1} gamma_root(t)``, the conjugated noise
integral ``h_u(s, t)`` and the covariance ``C(t, s) = g(t) h(t ^ s) g(s)^T``.

Every evaluator is vectorised: time arguments broadcast against each other and
matrix results carry the broadcast shape in front of the trailing matrix axes.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy.linalg

from ._linalg import DEFAULT_COND_BOUND, check_condition, guarded_inverse, symmetrize
from .errors import (
    ArgumentOrderError,
    InputError,
    ModelEvaluationError,
    NotDifferentiableError,
)

MatrixFunction = Callable[[np.ndarray], np.ndarray]

DERIVATIVE_STEP = 1e-6


class Specialization(str, enum.Enum):
    GENERIC = "generic"
    WIENER_1D = "wiener_1d"
    OU_CONSTANT_1D = "ou_constant_1d"
    ROTATION = "rotation"
    INTEGRATED_WIENER = "integrated_wiener"


def _vectorize_matrix_function(fn: Callable[[float], Any], rows: int, cols: int) -> MatrixFunction:
    """Wrap a scalar-time callable so that it accepts arrays of times."""

    def wrapped(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        out = np.empty((flat.size, rows, cols))
        for i, ti in enumerate(flat):
            out[i] = np.asarray(fn(float(ti)), dtype=float).reshape(rows, cols)
        return out.reshape(t.shape + (rows, cols))

    return wrapped


def _constant(matrix: np.ndarray) -> MatrixFunction:
    matrix = np.array(matrix, dtype=float)

    def fn(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(matrix, t.shape + matrix.shape).copy()

    return fn


def _piecewise_linear(times: np.ndarray, samples: np.ndarray) -> MatrixFunction:
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    flat = samples.reshape(len(times), -1)

    def fn(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, times, flat[:, j]) for j in range(flat.shape[1])]
        return np.stack(cols, axis=-1).reshape(t.shape + samples.shape[1:])

    return fn


@dataclass(frozen=True)
class ProcessModel:
    """Drift ``alpha`` (d x d) and diffusion root ``gamma_root`` (d x m) on [0, 1].

    ``alpha`` and ``gamma_root`` take an array of times and return the stacked
    matrices.  ``specialization`` selects closed-form evaluators in
    :class:`FlowCache`; ``params`` holds the closed-form parameters.
    ``breakpoints`` lists times where the coefficients are only continuous
    (tabulated models); quadratures split there.
    """

    d: int
    m: int
    alpha: MatrixFunction
    gamma_root: MatrixFunction
    specialization: Specialization = Specialization.GENERIC
    params: Mapping[str, Any] = field(default_factory=dict)
    breakpoints: tuple[float, ...] = ()
    alpha_derivative: MatrixFunction | None = None
    gamma_root_derivative: MatrixFunction | None = None
    differentiable: bool = True
    name: str = ""

    def __post_init__(self) -> None:
        if self.d < 1 or self.m < 1:
            raise InputError("state and noise dimensions must be at least 1")

    # -- constructors -----------------------------------------------------
    @classmethod
    def wiener(cls) -> "ProcessModel":
        zero, one = np.zeros((1, 1)), np.ones((1, 1))
        return cls(1, 1, _constant(zero), _constant(one), Specialization.WIENER_1D, {},
                   alpha_derivative=_constant(zero), gamma_root_derivative=_constant(zero), name="wiener")

    @classmethod
    def ornstein_uhlenbeck(cls, alpha: float, gamma: float) -> "ProcessModel":
        """Constant-coefficient 1-D model ``dX = alpha X dt + sqrt(gamma) dW``."""
        if gamma <= 0:
            raise InputError("the noise variance rate gamma must be positive")
        zero = np.zeros((1, 1))
        return cls(1, 1, _constant([[alpha]]), _constant([[math.sqrt(gamma)]]),
                   Specialization.OU_CONSTANT_1D, {"alpha": float(alpha), "gamma": float(gamma)},
                   alpha_derivative=_constant(zero), gamma_root_derivative=_constant(zero),
                   name=f"ou(alpha={alpha:g}, gamma={gamma:g})")

    @classmethod
    def rotation(cls, generator: Sequence[Sequence[float]], sigma2: float) -> "ProcessModel":
        """Constant antisymmetric drift with isotropic noise ``gamma_root = sigma I``."""
        generator = np.array(generator, dtype=float)
        d = generator.shape[0]
        if generator.shape != (d, d) or not np.allclose(generator, -generator.T, atol=1e-14):
            raise InputError("rotation generator must be a square antisymmetric matrix")
        if sigma2 <= 0:
            raise InputError("sigma2 must be positive")
        zero = np.zeros((d, d))
        return cls(d, d, _constant(generator), _constant(math.sqrt(sigma2) * np.eye(d)),
                   Specialization.ROTATION, {"generator": generator.tolist(), "sigma2": float(sigma2)},
                   alpha_derivative=_constant(zero), gamma_root_derivative=_constant(zero),
                   name="rotation")

    @classmethod
    def integrated_wiener(cls, order: int) -> "ProcessModel":
        """State ``(X, X', ..., X^{(order)})`` whose last component is a Wiener process."""
        if order < 1:
            raise InputError("integration order must be at least 1")
        d = order + 1
        shift = np.diag(np.ones(d - 1), k=1)
        root = np.zeros((d, 1))
        root[-1, 0] = 1.0
        return cls(d, 1, _constant(shift), _constant(root), Specialization.INTEGRATED_WIENER,
                   {"order": order}, alpha_derivative=_constant(np.zeros((d, d))),
                   gamma_root_derivative=_constant(np.zeros((d, 1))), name=f"integrated_wiener({order})")

    @classmethod
    def generic(
        cls,
        alpha: Callable[[float], Any],
        gamma_root: Callable[[float], Any],
        d: int,
        m: int,
        *,
        vectorized: bool = False,
        alpha_derivative: Callable[[float], Any] | None = None,
        gamma_root_derivative: Callable[[float], Any] | None = None,
        name: str = "generic",
    ) -> "ProcessModel":
        """Model from arbitrary continuous coefficient callables.

        With ``vectorized=False`` the callables receive one float and return a
        matrix; they are looped over internally.
        """
        wrap = (lambda fn, r, c: fn) if vectorized else _vectorize_matrix_function
        da = wrap(alpha_derivative, d, d) if alpha_derivative is not None else None
        dg = wrap(gamma_root_derivative, d, m) if gamma_root_derivative is not None else None
        return cls(d, m, wrap(alpha, d, d), wrap(gamma_root, d, m), Specialization.GENERIC, {},
                   alpha_derivative=da, gamma_root_derivative=dg, name=name)

    @classmethod
    def constant(cls, alpha: Sequence, gamma_root: Sequence, name: str = "constant") -> "ProcessModel":
        alpha = np.atleast_2d(np.array(alpha, dtype=float))
        gamma_root = np.array(gamma_root, dtype=float).reshape(alpha.shape[0], -1)
        return cls(alpha.shape[0], gamma_root.shape[1], _constant(alpha), _constant(gamma_root),
                   Specialization.GENERIC, {"alpha": alpha.tolist(), "gamma_root": gamma_root.tolist()},
                   alpha_derivative=_constant(np.zeros_like(alpha)),
                   gamma_root_derivative=_constant(np.zeros_like(gamma_root)), name=name)

    @classmethod
    def tabulated(cls, times: Sequence[float], alpha: Sequence, gamma_root: Sequence,
                  name: str = "tabulated") -> "ProcessModel":
        """Coefficients sampled at ``times`` and joined by linear interpolation."""
        times = np.asarray(times, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        gamma_root = np.asarray(gamma_root, dtype=float)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
            raise InputError("tabulation times must be strictly increasing with at least two entries")
        if times[0] > 0.0 or times[-1] < 1.0:
            raise InputError("tabulation must cover [0, 1]")
        if alpha.ndim == 1:
            alpha = alpha[:, None, None]
        if gamma_root.ndim == 1:
            gamma_root = gamma_root[:, None, None]
        if len(alpha) != len(times) or len(gamma_root) != len(times):
            raise InputError("one alpha and one gamma_root sample are needed per tabulation time")
        d, m = gamma_root.shape[1], gamma_root.shape[2]
        if alpha.shape[1:] != (d, d):
            raise InputError("alpha samples must be d x d")
        knots = tuple(float(t) for t in times if 0.0 < t < 1.0)
        return cls(d, m, _piecewise_linear(times, alpha), _piecewise_linear(times, gamma_root),
                   Specialization.GENERIC,
                   {"times": times.tolist(), "alpha": alpha.tolist(), "gamma_root": gamma_root.tolist()},
                   breakpoints=knots, differentiable=False, name=name)

    # -- evaluation ---------------------------------------------------------
    def alpha_at(self, t: np.ndarray | float) -> np.ndarray:
        value = np.asarray(self.alpha(np.asarray(t, dtype=float)), dtype=float)
        if not np.all(np.isfinite(value)):
            raise ModelEvaluationError(f"non-finite drift value in model {self.name!r}")
        return value

    def gamma_root_at(self, t: np.ndarray | float) -> np.ndarray:
        value = np.asarray(self.gamma_root(np.asarray(t, dtype=float)), dtype=float)
        if not np.all(np.isfinite(value)):
            raise ModelEvaluationError(f"non-finite diffusion value in model {self.name!r}")
        return value

    def gamma_at(self, t: np.ndarray | float) -> np.ndarray:
        root = self.gamma_root_at(t)
        return root @ np.swapaxes(root, -1, -2)

    def _derivative(self, fn: MatrixFunction, exact: MatrixFunction | None, t: np.ndarray, what: str) -> np.ndarray:
        if exact is not None:
            return np.asarray(exact(t), dtype=float)
        if not self.differentiable:
            raise NotDifferentiableError(f"model {self.name!r} provides no derivative of {what}")
        h = DERIVATIVE_STEP
        lo = np.clip(t - h, 0.0, 1.0)
        hi = np.clip(t + h, 0.0, 1.0)
        return (fn(hi) - fn(lo)) / (hi - lo)[..., None, None]

    def alpha_prime_at(self, t: np.ndarray | float) -> np.ndarray:
        return self._derivative(self.alpha_at, self.alpha_derivative, np.asarray(t, dtype=float), "alpha")

    def gamma_prime_at(self, t: np.ndarray | float) -> np.ndarray:
        """Elementwise time derivative of ``Gamma = gamma_root gamma_root^T``."""
        t = np.asarray(t, dtype=float)
        root = self.gamma_root_at(t)
        droot = self._derivative(self.gamma_root_at, self.gamma_root_derivative, t, "gamma_root")
        prod = droot @ np.swapaxes(root, -1, -2)
        return prod + np.swapaxes(prod, -1, -2)

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        spec = self.specialization
        out: dict[str, Any] = {"d": self.d, "m": self.m, "specialization": spec.value}
        if spec is Specialization.GENERIC:
            if "times" in self.params:
                out.update(self.params)
                out["interpolation"] = "piecewise_linear"
            elif "alpha" in self.params:
                out.update(self.params)
            else:
                raise InputError("models built from Python callables cannot be serialised")
        else:
            out.update(self.params)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProcessModel":
        try:
            spec = Specialization(data.get("specialization", "generic"))
        except ValueError as exc:
            raise InputError(f"unknown specialization {data.get('specialization')!r}") from exc
        if spec is Specialization.WIENER_1D:
            model = cls.wiener()
        elif spec is Specialization.OU_CONSTANT_1D:
            model = cls.ornstein_uhlenbeck(float(data["alpha"]), float(data.get("gamma", 1.0)))
        elif spec is Specialization.ROTATION:
            model = cls.rotation(data["generator"], float(data.get("sigma2", 1.0)))
        elif spec is Specialization.INTEGRATED_WIENER:
            order = int(data.get("order", int(data.get("d", 2)) - 1))
            model = cls.integrated_wiener(order)
        elif "times" in data:
            rule = data.get("interpolation", "piecewise_linear")
            if rule != "piecewise_linear":
                raise InputError(f"unsupported interpolation rule {rule!r}")
            model = cls.tabulated(data["times"], data["alpha"], data["gamma_root"])
        elif "alpha" in data and "gamma_root" in data:
            model = cls.constant(data["alpha"], data["gamma_root"])
        else:
            raise InputError("generic models need either tabulated samples or constant matrices")
        for key in ("d", "m"):
            if key in data and int(data[key]) != getattr(model, key):
                raise InputError(f"declared {key}={data[key]} disagrees with the coefficients ({getattr(model, key)})")
        return model

    @classmethod
    def from_json(cls, path: str | Path) -> "ProcessModel":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read model file {path}: {exc}") from exc
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Flow, g, f, h
# ---------------------------------------------------------------------------

def _rk4_step(model: ProcessModel, t: np.ndarray, y: np.ndarray, step: np.ndarray) -> np.ndarray:
    """One classical RK4 step of ``Y' = alpha(t) Y`` with per-entry step sizes."""
    hstep = step[..., None, None]
    a0 = model.alpha_at(t)
    a1 = model.alpha_at(t + 0.5 * step)
    a2 = model.alpha_at(t + step)
    k1 = a0 @ y
    k2 = a1 @ (y + 0.5 * hstep * k1)
    k3 = a1 @ (y + 0.5 * hstep * k2)
    k4 = a2 @ (y + hstep * k3)
    return y + hstep / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


class FlowCache:
    """Evaluators for ``F``, ``g``, ``f``, ``h_u`` and the covariance of a model.

    ``flow_steps`` is the number of RK4 sub-steps per unit time used for
    generic drifts; ``quadrature_order`` the number of Gauss-Legendre nodes per
    integration interval.  With ``closed_form=False`` the generic numerical
    route is used even for specialised models (used to cross-check the closed
    forms).  The object is immutable after construction.
    """

    def __init__(
        self,
        model: ProcessModel,
        flow_steps: int = 256,
        quadrature_order: int = 16,
        cond_bound: float = DEFAULT_COND_BOUND,
        closed_form: bool = True,
    ) -> None:
        if flow_steps < 1 or quadrature_order < 1:
            raise InputError("flow_steps and quadrature_order must be positive")
        self.model = model
        self.d = model.d
        self.m = model.m
        self.flow_steps = int(flow_steps)
        self.quadrature_order = int(quadrature_order)
        self.cond_bound = float(cond_bound)
        self.kind = model.specialization if closed_form else Specialization.GENERIC
        self._gl_nodes, self._gl_weights = _gauss_legendre(self.quadrature_order)
        if self.kind is Specialization.ROTATION:
            generator = np.array(model.params["generator"], dtype=float)
            schur, unitary = scipy.linalg.schur(generator.astype(complex), output="complex")
            self._rot_eigs = np.diag(schur)
            self._rot_vectors = unitary
            self._sigma2 = float(model.params["sigma2"])
        if self.kind is Specialization.GENERIC:
            self._build_table()

    # -- tables for the numerical route ---------------------------------------
    def _build_table(self) -> None:
        steps = self.flow_steps
        self._grid = np.arange(steps + 1) / steps
        table = np.empty((steps + 1, self.d, self.d))
        table[0] = np.eye(self.d)
        y = table[0]
        step = np.array(1.0 / steps)
        for i in range(steps):
            y = _rk4_step(self.model, np.array(self._grid[i]), y, step)
            table[i + 1] = y
        if not np.all(np.isfinite(table)):
            raise ModelEvaluationError("flow integration produced non-finite values")
        self._g_table = table

    # -- g and its inverse ------------------------------------------------------
    def g(self, t: np.ndarray | float) -> np.ndarray:
        """``g(t) = F(0, t)``."""
        return self.flow(0.0, t)

    def g_inv(self, t: np.ndarray | float) -> np.ndarray:
        """``g(t)^{-1} = F(t, 0)``."""
        return self.flow(t, 0.0)

    def _g_numeric(self, t: np.ndarray) -> np.ndarray:
        steps = self.flow_steps
        idx = np.clip(np.floor(t * steps).astype(int), 0, steps - 1)
        base = self._grid[idx]
        rem = t - base
        return _rk4_step(self.model, base, self._g_table[idx], rem)

    def f(self, t: np.ndarray | float) -> np.ndarray:
        """``f(t) = g(t)^{-1} gamma_root(t)`` (d x m)."""
        t = np.asarray(t, dtype=float)
        return self.g_inv(t) @ self.model.gamma_root_at(t)

    # -- the flow -----------------------------------------------------------------
    def flow(self, s: np.ndarray | float, t: np.ndarray | float) -> np.ndarray:
        """Resolvent ``F(s, t)`` mapping the state at time ``s`` to time ``t``."""
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        if np.any((s < 0.0) | (s > 1.0) | (t < 0.0) | (t > 1.0)):
            raise InputError("times must lie in [0, 1]")
        tau = t - s
        d = self.d
        kind = self.kind
        if kind is Specialization.WIENER_1D:
            return np.ones(tau.shape + (1, 1))
        if kind is Specialization.OU_CONSTANT_1D:
            return np.exp(self.model.params["alpha"] * tau)[..., None, None]
        if kind is Specialization.ROTATION:
            phase = np.exp(tau[..., None] * self._rot_eigs)
            v = self._rot_vectors
            full = (v * phase[..., None, :]) @ v.conj().T
            return full.real
        if kind is Specialization.INTEGRATED_WIENER:
            out = np.zeros(tau.shape + (d, d))
            for j in range(d):
                coef = tau**j / math.factorial(j)
                for i in range(d - j):
                    out[..., i, i + j] = coef
            return out
        # numerical route: F(s, t) = g(t) g(s)^{-1}
        gt = self._g_numeric(t)
        gs = self._g_numeric(s)
        same = s == t
        inv = guarded_inverse(gs, "flow g(s)", self.cond_bound)
        out = gt @ inv
        out[same] = np.eye(d)
        return out

    # -- h kernel -------------------------------------------------------------------
    def h_kernel(self, u: np.ndarray | float, s: np.ndarray | float, t: np.ndarray | float) -> np.ndarray:
        """``h_u(s, t) = int_s^t F(w, u) Gamma(w) F(w, u)^T dw`` for ``s <= t``."""
        u, s, t = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (u, s, t)))
        if np.any(s > t):
            raise ArgumentOrderError("h_kernel requires s <= t")
        kind = self.kind
        if kind is Specialization.WIENER_1D:
            return (t - s)[..., None, None]
        if kind is Specialization.OU_CONSTANT_1D:
            a = self.model.params["alpha"]
            gam = self.model.params["gamma"]
            if a == 0.0:
                val = gam * (t - s)
            else:
                val = gam * np.exp(2.0 * a * (u - s)) * (-np.expm1(-2.0 * a * (t - s))) / (2.0 * a)
            return val[..., None, None]
        if kind is Specialization.ROTATION:
            return (self._sigma2 * (t - s))[..., None, None] * np.eye(self.d)
        if kind is Specialization.INTEGRATED_WIENER:
            d = self.d
            out = np.empty(u.shape + (d, d))
            for i in range(d):
                for j in range(d):
                    p = 2 * d - 1 - (i + j)
                    den = p * math.factorial(d - 1 - i) * math.factorial(d - 1 - j)
                    out[..., i, j] = (-1) ** (i + j) * ((t - u) ** p - (s - u) ** p) / den
            return out
        return self._h_numeric(u, s, t)

    def _h_numeric(self, u: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        knots = self.model.breakpoints
        if not knots:
            return symmetrize(self._h_gauss(u, s, t))
        out = np.zeros(u.shape + (self.d, self.d))
        for idx in np.ndindex(u.shape):
            cuts = [s[idx]] + [k for k in knots if s[idx] < k < t[idx]] + [t[idx]]
            lo = np.array(cuts[:-1])
            hi = np.array(cuts[1:])
            out[idx] = self._h_gauss(np.full(lo.shape, u[idx]), lo, hi).sum(axis=0)
        return symmetrize(out)

    def _h_gauss(self, u: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        half = 0.5 * (t - s)
        w = (0.5 * (t + s))[..., None] + half[..., None] * self._gl_nodes
        weights = half[..., None] * self._gl_weights
        fw = self.flow(w, np.broadcast_to(u[..., None], w.shape))
        root = self.model.gamma_root_at(w)
        a = fw @ root
        integrand = a @ np.swapaxes(a, -1, -2)
        return np.einsum("...q,...qij->...ij", weights, integrand)

    def h(self, s: np.ndarray | float, t: np.ndarray | float) -> np.ndarray:
        """``h(s, t) = h_0(s, t)``."""
        return self.h_kernel(0.0, s, t)

    def covariance(self, t: np.ndarray | float, s: np.ndarray | float) -> np.ndarray:
        """``C(t, s) = g(t) h(0, min(t, s)) g(s)^T``."""
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        low = np.minimum(t, s)
        return self.g(t) @ self.h(np.zeros_like(low), low) @ np.swapaxes(self.g(s), -1, -2)

    def check_nondegenerate(self, s: float, t: float, u: float | None = None) -> None:
        """Raise :class:`DegeneracyError` when ``h_u(s, t)`` is numerically singular."""
        hk = self.h_kernel(s if u is None else u, s, t)
        diag = np.sqrt(np.abs(np.diagonal(hk)))
        if np.any(diag == 0):
            check_condition(np.zeros_like(hk), "h-kernel", self.cond_bound)
        check_condition(hk / np.outer(diag, diag), "h-kernel", self.cond_bound)
