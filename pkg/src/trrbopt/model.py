"""Parameter space and parameter-separable forms.

Every form in the problem is a sum ``sum_i theta_i(mu) * component_i`` with
mu-independent assembled components; components are referenced by index into
an :class:`~trrbopt.assembly.AssembledStore` so this module stays free of mesh
detail.  Theta coefficients carry analytic first and second derivatives
supplied at construction; the benchmark only needs affine coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionMismatch

EPS_ACTIVE_DEFAULT = 1e-8


@dataclass(frozen=True)
class ParameterBox:
    """Bilateral box constraints ``lower <= mu <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if lo.shape != up.shape or lo.ndim != 1 or lo.size < 1:
            raise DimensionMismatch("box bounds must be 1-d vectors of equal length >= 1")
        if np.any(lo > up):
            raise ConfigError("box has lower[i] > upper[i]")

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, mu: np.ndarray, tol: float = 0.0) -> bool:
        mu = np.asarray(mu, dtype=float)
        return bool(np.all(mu >= self.lower - tol) and np.all(mu <= self.upper + tol))


def project_onto_box(mu: np.ndarray, box: ParameterBox) -> np.ndarray:
    """Component-wise clamp onto the box; idempotent and 1-Lipschitz."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (box.dim,):
        raise DimensionMismatch(f"parameter has length {mu.shape}, box has dimension {box.dim}")
    return np.clip(mu, box.lower, box.upper)


def eps_active_set(mu: np.ndarray, box: ParameterBox, eps: float = EPS_ACTIVE_DEFAULT) -> np.ndarray:
    """Indices within ``eps`` of either bound: ``{i : up_i - mu_i <= eps or mu_i - lo_i <= eps}``."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (box.dim,):
        raise DimensionMismatch(f"parameter has length {mu.shape}, box has dimension {box.dim}")
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    mask = (box.upper - mu <= eps) | (mu - box.lower <= eps)
    return np.nonzero(mask)[0]


@dataclass(frozen=True)
class ThetaCoefficient:
    """Scalar parameter functional with analytic gradient and hessian."""

    eval: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    def __call__(self, mu: np.ndarray) -> float:
        return float(self.eval(np.asarray(mu, dtype=float)))

    def d(self, mu: np.ndarray, i: int) -> float:
        return float(self.grad(np.asarray(mu, dtype=float))[i])

    def d2(self, mu: np.ndarray, i: int, l: int) -> float:
        return float(self.hess(np.asarray(mu, dtype=float))[i, l])


def constant_theta(value: float, dim: int) -> ThetaCoefficient:
    g = np.zeros(dim)
    h = np.zeros((dim, dim))
    return ThetaCoefficient(eval=lambda mu, v=float(value): v,
                            grad=lambda mu, g=g: g,
                            hess=lambda mu, h=h: h)


def affine_theta(intercept: float, slopes: dict[int, float], dim: int) -> ThetaCoefficient:
    """``theta(mu) = intercept + sum_k slopes[k] * mu[k]``; hess == 0."""
    g = np.zeros(dim)
    for k, s in slopes.items():
        if not 0 <= k < dim:
            raise ConfigError(f"slope index {k} outside parameter dimension {dim}")
        g[k] = float(s)
    h = np.zeros((dim, dim))
    return ThetaCoefficient(eval=lambda mu, c=float(intercept), g=g: c + float(g @ mu),
                            grad=lambda mu, g=g: g,
                            hess=lambda mu, h=h: h)


@dataclass(frozen=True)
class SeparableForm:
    """Parameter-separable (bi)linear form with component store handles.

    ``kind`` is one of ``bilinear-a``, ``bilinear-k``, ``linear-l``,
    ``linear-j``; ``components`` index into the assembled matrix store for
    bilinear kinds and the vector store for linear kinds.
    """

    kind: str
    components: tuple
    thetas: tuple

    def __post_init__(self):
        if self.kind not in ("bilinear-a", "bilinear-k", "linear-l", "linear-j"):
            raise ConfigError(f"unknown form kind '{self.kind}'")
        if len(self.components) != len(self.thetas) or len(self.components) < 1:
            raise ConfigError("components and thetas must have equal length >= 1")

    @property
    def is_bilinear(self) -> bool:
        return self.kind.startswith("bilinear")

    @property
    def size(self) -> int:
        return len(self.components)

    def theta_values(self, mu) -> np.ndarray:
        return np.array([th(mu) for th in self.thetas])

    def theta_d(self, mu, i: int) -> np.ndarray:
        return np.array([th.d(mu, i) for th in self.thetas])

    def theta_d2(self, mu, i: int, l: int) -> np.ndarray:
        return np.array([th.d2(mu, i, l) for th in self.thetas])


def _resolve(store, form: SeparableForm):
    pool = store.matrices if form.is_bilinear else store.vectors
    try:
        return [pool[c] for c in form.components]
    except IndexError as exc:
        raise ConfigError(f"form '{form.kind}' references missing component: {exc}") from exc


def _component_eval(comps, form: SeparableForm, u, v):
    if form.is_bilinear:
        if v is None:
            raise DimensionMismatch(f"bilinear form '{form.kind}' needs two operands")
        return np.array([float(v @ (c @ u)) for c in comps])
    return np.array([float(c @ u) for c in comps])


def form_value(store, form: SeparableForm, mu, u, v=None) -> float:
    """Evaluate ``sum_i theta_i(mu) * component_i(operands)``."""
    comps = _resolve(store, form)
    return float(form.theta_values(mu) @ _component_eval(comps, form, u, v))


def form_dmu(store, form: SeparableForm, mu, i: int, u, v=None) -> float:
    """Partial derivative in ``mu_i``: thetas replaced by their first partials."""
    comps = _resolve(store, form)
    return float(form.theta_d(mu, i) @ _component_eval(comps, form, u, v))


def form_d2mu(store, form: SeparableForm, mu, i: int, l: int, u, v=None) -> float:
    """Second partial in ``(mu_i, mu_l)``: thetas replaced by their second partials."""
    comps = _resolve(store, form)
    return float(form.theta_d2(mu, i, l) @ _component_eval(comps, form, u, v))


@dataclass(frozen=True)
class ParametricProblem:
    """The full parameter-separable optimization problem data.

    ``a`` and ``k`` are bilinear, ``l`` and ``j`` linear; ``theta_big`` is the
    purely parametric objective part (Tikhonov term, misfit offset, positivity
    constant); ``mu_check`` is the reference parameter of the energy product.
    """

    a: SeparableForm
    k: SeparableForm
    l: SeparableForm
    j: SeparableForm
    theta_big: ThetaCoefficient
    box: ParameterBox
    mu_check: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_check", np.asarray(self.mu_check, dtype=float))
        if not self.box.contains(self.mu_check):
            raise ConfigError("reference parameter lies outside the box")

    @property
    def dim(self) -> int:
        return self.box.dim
