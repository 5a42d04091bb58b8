"""Full-order model: primal/dual/sensitivity solves, objective and derivatives.

The discrete problem on the P1 space reads ``A(mu) u = l(mu)`` with
``A(mu) = sum_c theta_c^a(mu) A_c`` SPD on the box, objective
``J(u, mu) = Theta(mu) + j_mu(u) + k_mu(u, u)`` and adjoint
``A(mu) p = j(mu) + 2 K_k(mu) u`` (all components symmetric).  The gradient is
adjoint-based, the hessian acts on directions through one primal and one dual
sensitivity solve; factorizations are cached per parameter fingerprint.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssembledStore, spd_splu
from .errors import ModelError, OrderingError
from .model import ParametricProblem, eps_active_set, project_onto_box


class Counters:
    """Tallies of full-order linear solves; thread-safe increments."""

    FIELDS = ("primal", "dual", "sens_primal", "sens_dual", "riesz", "factorizations")

    def __init__(self):
        self._lock = threading.Lock()
        for name in self.FIELDS:
            setattr(self, name, 0)

    def bump(self, name: str, by: int = 1) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + by)

    def snapshot(self) -> dict:
        with self._lock:
            return {name: getattr(self, name) for name in self.FIELDS}

    @property
    def total_fom_solves(self) -> int:
        return self.primal + self.dual + self.sens_primal + self.sens_dual


@dataclass
class FomPoint:
    """Solutions cached at one parameter: primal, dual, per-direction sensitivities."""

    mu: np.ndarray
    u: np.ndarray = None
    p: np.ndarray = None
    du: dict = field(default_factory=dict)
    dp: dict = field(default_factory=dict)


def _dir_key(nu: np.ndarray) -> bytes:
    return np.asarray(nu, dtype=float).tobytes()


class FomSystem:
    """Parametric FOM with a bounded factorization cache and solve counters."""

    def __init__(self, problem: ParametricProblem, store: AssembledStore, cache_size: int = 4):
        self.problem = problem
        self.store = store
        self.counters = Counters()
        self.cache_size = cache_size
        self._cache = OrderedDict()
        self._cache_lock = threading.Lock()

    # -- operator assembly ---------------------------------------------------

    def _fingerprint(self, mu) -> tuple:
        return tuple(f"{v:.14e}" for v in self.problem.a.theta_values(mu))

    def operator(self, mu):
        """Assembled ``A(mu)`` together with its cached factorization."""
        key = self._fingerprint(mu)
        with self._cache_lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        thetas = self.problem.a.theta_values(mu)
        bad = [c for c, t in zip(self.problem.a.components, thetas) if t < 0]
        if bad:
            raise ModelError(f"A(mu) loses coercivity: negative theta^a on components {bad}")
        mats = self.store.matrices
        A = sum(t * mats[c] for t, c in zip(thetas, self.problem.a.components))
        try:
            lu = spd_splu(A)
        except RuntimeError as exc:
            raise ModelError(f"factorization of A(mu) failed: {exc}") from exc
        self.counters.bump("factorizations")
        with self._cache_lock:
            self._cache[key] = (A.tocsr(), lu)
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
            return self._cache[key]

    def k_matrix(self, mu):
        thetas = self.problem.k.theta_values(mu)
        mats = self.store.matrices
        return sum(t * mats[c] for t, c in zip(thetas, self.problem.k.components))

    def l_vector(self, mu):
        thetas = self.problem.l.theta_values(mu)
        vecs = self.store.vectors
        return sum(t * vecs[c] for t, c in zip(thetas, self.problem.l.components))

    def j_vector(self, mu):
        thetas = self.problem.j.theta_values(mu)
        vecs = self.store.vectors
        return sum(t * vecs[c] for t, c in zip(thetas, self.problem.j.components))

    def _theta_grad_matrix(self, form, mu):
        # rows: parameter directions, columns: components
        return np.column_stack([th.grad(mu) for th in form.thetas])

    # -- solves ----------------------------------------------------------------

    def solve_primal(self, mu) -> np.ndarray:
        _, lu = self.operator(mu)
        u = lu.solve(self.l_vector(mu))
        self.counters.bump("primal")
        return u

    def solve_dual(self, mu, u: np.ndarray) -> np.ndarray:
        _, lu = self.operator(mu)
        rhs = self.j_vector(mu) + 2.0 * (self.k_matrix(mu) @ u)
        p = lu.solve(rhs)
        self.counters.bump("dual")
        return p

    def point(self, mu, with_dual: bool = True) -> FomPoint:
        mu = np.asarray(mu, dtype=float)
        u = self.solve_primal(mu)
        p = self.solve_dual(mu, u) if with_dual else None
        return FomPoint(mu=mu, u=u, p=p)

    def solve_sensitivity(self, mu, kind: str, direction: np.ndarray, point: FomPoint) -> np.ndarray:
        """Directional solution-map derivative; ``kind`` is ``primal`` or ``dual``.

        Primal: ``A(mu) du = d_nu l(mu) - d_nu A(mu) u``.
        Dual (quadratic objective):
        ``A(mu) dp = d_nu j + 2 d_nu K_k u - d_nu A p + 2 K_k du``.
        """
        nu = np.asarray(direction, dtype=float)
        key = _dir_key(nu)
        prob, mats, vecs = self.problem, self.store.matrices, self.store.vectors
        _, lu = self.operator(mu)

        def dcoef(form):
            return self._theta_grad_matrix(form, mu).T @ nu  # per-component d_nu theta

        if kind == "primal":
            if point.u is None:
                raise OrderingError("primal sensitivity requires the primal solution")
            rhs = np.zeros(self.store.dim)
            for t, c in zip(dcoef(prob.l), prob.l.components):
                if t != 0.0:
                    rhs += t * vecs[c]
            for t, c in zip(dcoef(prob.a), prob.a.components):
                if t != 0.0:
                    rhs -= t * (mats[c] @ point.u)
            du = lu.solve(rhs)
            self.counters.bump("sens_primal")
            point.du[key] = du
            return du
        if kind == "dual":
            if point.p is None:
                raise OrderingError("dual sensitivity requires the dual solution")
            if key not in point.du:
                raise OrderingError("dual sensitivity requires the primal sensitivity first")
            du = point.du[key]
            rhs = 2.0 * (self.k_matrix(mu) @ du)
            for t, c in zip(dcoef(prob.j), prob.j.components):
                if t != 0.0:
                    rhs += t * vecs[c]
            for t, c in zip(dcoef(prob.k), prob.k.components):
                if t != 0.0:
                    rhs += 2.0 * t * (mats[c] @ point.u)
            for t, c in zip(dcoef(prob.a), prob.a.components):
                if t != 0.0:
                    rhs -= t * (mats[c] @ point.p)
            dp = lu.solve(rhs)
            self.counters.bump("sens_dual")
            point.dp[key] = dp
            return dp
        raise ModelError(f"unknown sensitivity kind '{kind}'")

    # -- residuals -------------------------------------------------------------

    def residual_primal(self, mu, u: np.ndarray) -> np.ndarray:
        A, _ = self.operator(mu)
        return self.l_vector(mu) - A @ u

    def residual_dual(self, mu, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        A, _ = self.operator(mu)
        return self.j_vector(mu) + 2.0 * (self.k_matrix(mu) @ u) - A @ p

    # -- objective and derivatives ----------------------------------------------

    def objective(self, mu, u: np.ndarray) -> float:
        """``Theta(mu) + j_mu(u) + k_mu(u, u)``."""
        return float(self.problem.theta_big(mu) + self.j_vector(mu) @ u
                     + u @ (self.k_matrix(mu) @ u))

    def gradient(self, mu, point: FomPoint) -> np.ndarray:
        """Adjoint-based gradient; needs u and p but no sensitivities.

        ``grad_i = d_i Theta + d_i j(u) + d_i k(u,u) + d_i l(p) - d_i a(u,p)``
        where ``d_i`` hits only the theta coefficients.
        """
        prob, mats, vecs = self.problem, self.store.matrices, self.store.vectors
        u, p = point.u, point.p
        if u is None or p is None:
            raise OrderingError("gradient requires primal and dual solutions")
        g = prob.theta_big.grad(np.asarray(mu, dtype=float)).copy()
        j_u = np.array([vecs[c] @ u for c in prob.j.components])
        k_uu = np.array([u @ (mats[c] @ u) for c in prob.k.components])
        l_p = np.array([vecs[c] @ p for c in prob.l.components])
        a_up = np.array([u @ (mats[c] @ p) for c in prob.a.components])
        g += self._theta_grad_matrix(prob.j, mu) @ j_u
        g += self._theta_grad_matrix(prob.k, mu) @ k_uu
        g += self._theta_grad_matrix(prob.l, mu) @ l_p
        g -= self._theta_grad_matrix(prob.a, mu) @ a_up
        return g

    def hessvec(self, mu, point: FomPoint, nu: np.ndarray) -> np.ndarray:
        """Hessian applied to a direction (quadratic-objective formula).

        Solves the two directional sensitivities, then differentiates each
        form's explicit theta dependence with all state vectors held fixed;
        second theta partials enter through the last row of the formula.
        """
        mu = np.asarray(mu, dtype=float)
        nu = np.asarray(nu, dtype=float)
        key = _dir_key(nu)
        if key not in point.du:
            self.solve_sensitivity(mu, "primal", nu, point)
        if key not in point.dp:
            self.solve_sensitivity(mu, "dual", nu, point)
        du, dp = point.du[key], point.dp[key]
        prob, mats, vecs = self.problem, self.store.matrices, self.store.vectors
        u, p = point.u, point.p

        j_du = np.array([vecs[c] @ du for c in prob.j.components])
        k_udu = np.array([u @ (mats[c] @ du) for c in prob.k.components])
        l_dp = np.array([vecs[c] @ dp for c in prob.l.components])
        a_udp = np.array([u @ (mats[c] @ dp) for c in prob.a.components])
        a_dup = np.array([du @ (mats[c] @ p) for c in prob.a.components])
        j_u = np.array([vecs[c] @ u for c in prob.j.components])
        k_uu = np.array([u @ (mats[c] @ u) for c in prob.k.components])
        l_p = np.array([vecs[c] @ p for c in prob.l.components])
        a_up = np.array([u @ (mats[c] @ p) for c in prob.a.components])

        h = prob.theta_big.hess(mu) @ nu
        h += self._theta_grad_matrix(prob.j, mu) @ j_du
        h += 2.0 * (self._theta_grad_matrix(prob.k, mu) @ k_udu)
        h += self._theta_grad_matrix(prob.l, mu) @ l_dp
        h -= self._theta_grad_matrix(prob.a, mu) @ a_udp
        h -= self._theta_grad_matrix(prob.a, mu) @ a_dup

        def second(form, scalars):
            out = np.zeros(prob.dim)
            for th, s in zip(form.thetas, scalars):
                if s != 0.0:
                    out += s * (th.hess(mu) @ nu)
            return out

        h += second(prob.j, j_u)
        h += second(prob.k, k_uu)
        h += second(prob.l, l_p)
        h -= second(prob.a, a_up)
        return h

    def full_hessian(self, mu, point: FomPoint) -> np.ndarray:
        """Assemble the P x P hessian column-wise via canonical hessvecs (2P solves)."""
        P = self.problem.dim
        H = np.empty((P, P))
        for l in range(P):
            e = np.zeros(P)
            e[l] = 1.0
            H[:, l] = self.hessvec(mu, point, e)
        return H

    def foc_measure(self, mu, grad: np.ndarray) -> float:
        """Projected-gradient stationarity ``||mu - P(mu - grad)||_2``."""
        mu = np.asarray(mu, dtype=float)
        return float(np.linalg.norm(mu - project_onto_box(mu - grad, self.problem.box)))

    def second_order_check(self, mu, point: FomPoint, eps: float = 1e-8) -> dict:
        """Smallest hessian eigenvalue on the eps-inactive coordinate subspace."""
        H = self.full_hessian(mu, point)
        active = eps_active_set(mu, self.problem.box, eps)
        return inactive_min_eigenvalue(H, active)


def inactive_min_eigenvalue(H: np.ndarray, active_indices) -> dict:
    """Positive-definiteness check of ``H`` restricted to inactive components."""
    P = H.shape[0]
    inactive = np.setdiff1d(np.arange(P), np.asarray(active_indices, dtype=int))
    if inactive.size == 0:
        return {"passed": True, "lambda_min_inactive": None,
                "note": "all components active; check vacuous"}
    sub = H[np.ix_(inactive, inactive)]
    lam = float(np.linalg.eigvalsh(0.5 * (sub + sub.T))[0])
    return {"passed": lam > 0.0, "lambda_min_inactive": lam, "note": ""}
