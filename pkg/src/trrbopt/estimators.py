"""Constant bounds and a posteriori error estimators.

Coercivity lower bounds come from the min-theta ratio at the reference
parameter; continuity upper bounds from the max-theta ratio for bilinear
forms sharing the energy-product components, from precomputed generalized
eigenvalue bounds for the misfit form, and from component dual norms for the
linear functionals.  On top of these sit the residual-based estimators for
the reduced primal/dual solutions, the objective, the canonical
sensitivities, the hessian, and the optimal-parameter bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimatorInapplicable
from .fom import FomSystem
from .model import ParametricProblem

_POWER_MAXIT = 100
_POWER_TOL = 1e-8


def _largest_generalized_eig(store, M) -> float:
    """lambda_max of K^{-1} M by power iteration in the K-inner product."""
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(store.dim)
    lam = 0.0
    for _ in range(_POWER_MAXIT):
        w = store.riesz_solve(M @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v_new = w / nrm
        lam_new = float(v_new @ (M @ v_new)) / float(v_new @ (store.product @ v_new))
        if abs(lam_new - lam) <= _POWER_TOL * max(abs(lam_new), 1.0):
            return lam_new
        lam, v = lam_new, v_new
    return lam


@dataclass
class EstimatorBundle:
    """Coercivity/continuity constant bounds and component dual norms."""

    problem: ParametricProblem
    theta_a_ref: np.ndarray
    k_eig_bounds: np.ndarray
    l_dual_norms: np.ndarray
    j_dual_norms: np.ndarray

    @classmethod
    def build(cls, problem: ParametricProblem, store) -> "EstimatorBundle":
        theta_ref = problem.a.theta_values(problem.mu_check)
        if np.any(theta_ref <= 0):
            raise EstimatorInapplicable(
                "reference theta^a values must be positive for min/max-theta bounds")
        k_eigs = np.array([_largest_generalized_eig(store, store.matrices[c])
                           for c in problem.k.components])
        l_norms = np.array([store.dual_norm(store.vectors[c]) for c in problem.l.components])
        j_norms = np.array([store.dual_norm(store.vectors[c]) for c in problem.j.components])
        return cls(problem=problem, theta_a_ref=theta_ref, k_eig_bounds=k_eigs,
                   l_dual_norms=l_norms, j_dual_norms=j_norms)

    # -- constants -----------------------------------------------------------

    def _theta_derivatives(self, form, mu, order, idx):
        if order == 0:
            return form.theta_values(mu)
        if order == 1:
            return form.theta_d(mu, idx[0])
        if order == 2:
            return form.theta_d2(mu, idx[0], idx[1])
        raise EstimatorInapplicable(f"unsupported derivative order {order}")

    def coercivity_lb(self, mu) -> float:
        """min-theta lower bound for the a-coercivity in the energy norm."""
        theta = self.problem.a.theta_values(mu)
        if np.any(theta <= 0):
            raise EstimatorInapplicable(
                f"min-theta inapplicable: non-positive theta^a at mu={np.asarray(mu)}")
        return float(np.min(theta / self.theta_a_ref))

    def gamma_a(self, mu, order: int = 0, idx: tuple = ()) -> float:
        """max-theta continuity bound for a (or its theta-derivatives)."""
        d = self._theta_derivatives(self.problem.a, mu, order, idx)
        return float(np.max(np.abs(d) / self.theta_a_ref))

    def gamma_k(self, mu, order: int = 0, idx: tuple = ()) -> float:
        d = self._theta_derivatives(self.problem.k, mu, order, idx)
        return float(np.abs(d) @ self.k_eig_bounds)

    def gamma_l(self, mu, order: int = 1, idx: tuple = ()) -> float:
        d = self._theta_derivatives(self.problem.l, mu, order, idx)
        return float(np.abs(d) @ self.l_dual_norms)

    def gamma_j(self, mu, order: int = 1, idx: tuple = ()) -> float:
        d = self._theta_derivatives(self.problem.j, mu, order, idx)
        return float(np.abs(d) @ self.j_dual_norms)

    def continuity_ub(self, mu, which: str, order: int = 0, idx: tuple = ()) -> float:
        table = {"a": self.gamma_a, "k": self.gamma_k, "l": self.gamma_l, "j": self.gamma_j}
        if which not in table:
            raise EstimatorInapplicable(f"no continuity bound for form '{which}'")
        return table[which](mu, order, idx)


# ---------------------------------------------------------------------------
# reduced-quantity estimators
# ---------------------------------------------------------------------------

def delta_primal(rom, point) -> float:
    """Energy-norm bound on the reduced primal error."""
    alpha = rom.bundle.coercivity_lb(point.mu)
    return rom.residual_norm_primal(point) / alpha


def delta_dual(rom, point) -> float:
    alpha = rom.bundle.coercivity_lb(point.mu)
    gk = rom.bundle.gamma_k(point.mu)
    return (2.0 * gk * delta_primal(rom, point) + rom.residual_norm_dual(point)) / alpha


def delta_objective(rom, point) -> float:
    """Bound on ``|J_h - J_r|`` at this parameter."""
    dpr = delta_primal(rom, point)
    gk = rom.bundle.gamma_k(point.mu)
    return dpr * rom.residual_norm_dual(point) + dpr * dpr * gk


def delta_sensitivity(rom, point, kind: str, i: int) -> float:
    """Bound on the canonical-direction sensitivity error (primal or dual)."""
    mu = point.mu
    alpha = rom.bundle.coercivity_lb(mu)
    ga_i = rom.bundle.gamma_a(mu, 1, (i,))
    dpr = delta_primal(rom, point)
    if kind == "primal":
        return (ga_i * dpr + rom.residual_norm_sens_primal(point, i)) / alpha
    if kind == "dual":
        gk = rom.bundle.gamma_k(mu)
        gk_i = rom.bundle.gamma_k(mu, 1, (i,))
        ddu = delta_dual(rom, point)
        dspr = delta_sensitivity(rom, point, "primal", i)
        return (2.0 * gk_i * dpr + ga_i * ddu + 2.0 * gk * dspr
                + rom.residual_norm_sens_dual(point, i)) / alpha
    raise EstimatorInapplicable(f"unknown sensitivity estimator kind '{kind}'")


def auxiliary_norm_bounds(rom, point) -> dict:
    """Bounds for the K-norms of z, w and their canonical sensitivities."""
    mu = point.mu
    P = rom.problem.dim
    alpha = rom.bundle.coercivity_lb(mu)
    gk = rom.bundle.gamma_k(mu)
    nz = rom.residual_norm_primal(point) / alpha
    nw = (rom.residual_norm_dual(point) + 2.0 * gk * nz) / alpha
    ndz = np.empty(P)
    ndw = np.empty(P)
    for l in range(P):
        ga_l = rom.bundle.gamma_a(mu, 1, (l,))
        gk_l = rom.bundle.gamma_k(mu, 1, (l,))
        ndz[l] = (rom.residual_norm_sens_primal(point, l) + ga_l * nz) / alpha
        ndw[l] = (rom.residual_norm_sens_dual(point, l) + 2.0 * gk * ndz[l]
                  + 2.0 * gk_l * nz + ga_l * nw) / alpha
    return {"z": nz, "w": nw, "dz": ndz, "dw": ndw}


def delta_hessian(rom, point) -> dict:
    """Entrywise hessian error bounds and their spectral norm.

    Every term of the displayed entry sum is present; the auxiliary-function
    norms enter through their residual-based bounds, the reduced solution and
    sensitivity norms are exact (K-orthonormal bases make them coefficient
    2-norms).
    """
    mu = point.mu
    P = rom.problem.dim
    b = rom.bundle

    dpr = delta_primal(rom, point)
    ddu = delta_dual(rom, point)
    dspr = np.array([delta_sensitivity(rom, point, "primal", l) for l in range(P)])
    dsdu = np.array([delta_sensitivity(rom, point, "dual", l) for l in range(P)])
    aux = auxiliary_norm_bounds(rom, point)
    nz, nw, ndz, ndw = aux["z"], aux["w"], aux["dz"], aux["dw"]

    u_r = rom.solve_reduced(point, "primal")
    p_r = rom.solve_reduced(point, "dual")
    nu = float(np.linalg.norm(u_r))
    np_ = float(np.linalg.norm(p_r))
    ndu = np.empty(P)
    ndp = np.empty(P)
    for l in range(P):
        e = np.zeros(P)
        e[l] = 1.0
        ndu[l] = float(np.linalg.norm(rom.solve_reduced_sensitivity(point, e, "primal")))
        ndp[l] = float(np.linalg.norm(rom.solve_reduced_sensitivity(point, e, "dual")))

    ga1 = np.array([b.gamma_a(mu, 1, (i,)) for i in range(P)])
    gk1 = np.array([b.gamma_k(mu, 1, (i,)) for i in range(P)])
    gl1 = np.array([b.gamma_l(mu, 1, (i,)) for i in range(P)])
    gj1 = np.array([b.gamma_j(mu, 1, (i,)) for i in range(P)])
    ga2 = np.array([[b.gamma_a(mu, 2, (i, l)) for l in range(P)] for i in range(P)])
    gk2 = np.array([[b.gamma_k(mu, 2, (i, l)) for l in range(P)] for i in range(P)])
    gl2 = np.array([[b.gamma_l(mu, 2, (i, l)) for l in range(P)] for i in range(P)])
    gj2 = np.array([[b.gamma_j(mu, 2, (i, l)) for l in range(P)] for i in range(P)])

    entries = np.zeros((P, P))
    for i in range(P):
        for l in range(P):
            e = dpr * (gj2[i, l] + 2.0 * gk2[i, l] * nu + ga2[i, l] * np_
                       + 2.0 * gk1[i] * ndu[l] + ga1[i] * ndp[l])
            e += dspr[l] * (gj1[i] + 2.0 * gk1[i] * nu + ga1[i] * np_)
            e += ddu * (gl2[i, l] + ga2[i, l] * nu + ga1[i] * ndu[l])
            e += dsdu[l] * (gl1[i] + ga1[i] * nu)
            e += dpr * dpr * gk2[i, l]
            e += dpr * ddu * ga2[i, l]
            e += dpr * dspr[l] * 2.0 * gk1[i]
            e += dpr * dsdu[l] * ga1[i]
            e += dspr[l] * ddu * ga1[i]
            e += ga1[i] * ndu[l] * nw + gl1[i] * ndw[l] + ga1[i] * nu * ndw[l]
            e += 2.0 * gk1[i] * nz * ndu[l] + ga1[i] * nz * ndp[l] + gj1[i] * ndz[l]
            e += 2.0 * gk1[i] * ndz[l] * nu + ga1[i] * ndz[l] * np_
            e += gl2[i, l] * nw + ga2[i, l] * nw * nu
            e += gj2[i, l] * nz + 2.0 * gk2[i, l] * nz * nu + ga2[i, l] * nz * np_
            entries[i, l] = e
    total = float(np.linalg.norm(entries, 2))
    return {"total": total, "entries": entries}


def q_ratio(rom, point) -> float:
    """Relative objective error indicator ``Delta_J / J_r`` driving the trust region."""
    from .errors import ModelError

    jr = rom.objective_ncd(point)
    if jr <= 0.0:
        raise ModelError(f"reduced objective non-positive ({jr}) at mu={point.mu}; "
                         "positivity assumption violated")
    return delta_objective(rom, point) / jr


def delta_mu(fom: FomSystem, mu_bar: np.ndarray) -> dict:
    """Distance bound to the FOM-optimal parameter, evaluated at a candidate.

    Uses the smallest eigenvalue of the full FOM hessian at the candidate
    (2P sensitivity solves) and the KKT-consistent gradient vector zeta.
    Reported with a caveat flag: validity additionally requires the candidate
    to lie in an (uncomputable) neighborhood of the FOM optimum.
    """
    mu_bar = np.asarray(mu_bar, dtype=float)
    box = fom.problem.box
    point = fom.point(mu_bar)
    grad = fom.gradient(mu_bar, point)
    H = fom.full_hessian(mu_bar, point)
    lam_min = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])

    zeta = np.empty(fom.problem.dim)
    for i in range(fom.problem.dim):
        if mu_bar[i] == box.lower[i]:
            zeta[i] = -min(0.0, grad[i])
        elif mu_bar[i] == box.upper[i]:
            zeta[i] = -max(0.0, grad[i])
        else:
            zeta[i] = -grad[i]

    applicable = lam_min > 0.0
    bound = float(2.0 / lam_min * np.linalg.norm(zeta)) if applicable else float("inf")
    return {"bound": bound, "lambda_min": lam_min, "zeta": zeta,
            "applicable": applicable,
            "caveat": "requires the candidate inside the attraction ball of the optimum"}
