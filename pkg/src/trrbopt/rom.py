"""NCD-corrected reduced-basis model.

Separate primal/dual RB spaces, K-orthonormal in the energy product, with all
parameter-separable components projected onto every needed space pair.  The
reduced objective carries the Lagrangian correction ``r_pr(u_r)[p_r]`` whose
exact gradient and hessian are evaluated through the auxiliary problems for
``z`` (dual space) and ``w`` (primal space) and their directional
sensitivities.

Residual dual norms are evaluated through an offline K-orthonormalized basis
``W`` of the span of all residual-component Riesz representatives together
with the coordinate matrix ``T = W' X`` (``X`` the raw component columns):
``||r||_{V'} = ||T c||_2`` for the residual's component coefficient vector
``c``.  This factors the residual Gramian ``G = T'T`` of the classical
offline/online splitting but sums coefficients linearly instead of through
the quadratic form, which keeps the estimators meaningful down to the 1e-10
snapshot-exactness level.  Everything here after construction is dense, small
and free of FOM-dimension operations; enrichment is copy-on-extend.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as dla

from .errors import DegenerateBasisError, ModelError, OrderingError
from .fom import FomPoint, FomSystem, _dir_key
from .model import ParametricProblem, project_onto_box

GS_DISCARD_TOL = 1e-10       # relative K-norm below which a snapshot adds nothing
RANGE_DISCARD_TOL = 1e-13    # residual-range directions are kept much longer


# ---------------------------------------------------------------------------
# K-orthonormalization
# ---------------------------------------------------------------------------

def _project_against(V, KV, basis_chunks, k_basis_chunks, passes=2):
    for _ in range(passes):
        for Wc, KWc in zip(basis_chunks, k_basis_chunks):
            if Wc.shape[1] == 0:
                continue
            coef = KWc.T @ V
            V -= Wc @ coef
            KV -= KWc @ coef
    return V, KV


def _as_columns(store, candidates):
    if not isinstance(candidates, np.ndarray):
        candidates = (np.column_stack([np.asarray(c, dtype=float) for c in candidates])
                      if len(candidates) else np.zeros((store.dim, 0)))
    if candidates.ndim == 1:
        candidates = candidates[:, None]
    return candidates


def k_orthonormalize_blocks(store, basis_chunks, k_basis_chunks, candidates, tol_rel: float):
    """Blocked K-orthonormalization of a candidate batch against chunked W.

    Projects the whole batch against the existing K-orthonormal basis (two
    passes, K-images tracked through GEMMs), then orthonormalizes within the
    batch through two rounds of Gram-matrix eigendecomposition, dropping
    directions below ``tol_rel`` relative to the largest candidate norm.
    Used for the residual ranges, where batches are wide and per-candidate
    discard attribution is not needed.
    """
    K = store.product
    V = np.array(_as_columns(store, candidates), dtype=float)
    dim, m = store.dim, V.shape[1]
    if m == 0:
        out = np.zeros((dim, 0))
        return out, out
    KV = K @ V
    if KV.ndim == 1:
        KV = KV[:, None]
    norms0 = np.sqrt(np.maximum(np.einsum("ij,ij->j", V, KV), 0.0))
    scale = float(norms0.max())
    if scale == 0.0:
        out = np.zeros((dim, 0))
        return out, out

    V, KV = _project_against(V, KV, basis_chunks, k_basis_chunks, passes=1)

    def eig_orth(V, KV, floor):
        G = V.T @ KV
        lam, Q = np.linalg.eigh(0.5 * (G + G.T))
        keep = lam > floor
        if not np.any(keep):
            z = np.zeros((dim, 0))
            return z, z
        S = Q[:, keep] / np.sqrt(lam[keep])
        return V @ S, KV @ S

    V, KV = eig_orth(V, KV, (tol_rel * scale) ** 2)
    V, KV = _project_against(V, KV, basis_chunks, k_basis_chunks, passes=1)
    V, KV = eig_orth(V, KV, 0.25)  # re-orthonormalization round; spectrum ~ 1
    return V, KV


def k_orthonormalize(store, basis: np.ndarray, candidates, tol_rel: float,
                     k_basis: np.ndarray = None, return_k: bool = False):
    """Sequential Gram-Schmidt in the K-inner product with one
    re-orthogonalization pass; used for RB space extension where each snapshot
    is kept or discarded on its own post- vs pre-projection K-norm ratio.
    Zero snapshots are skipped with a notice.
    """
    K = store.product
    V = _as_columns(store, candidates)
    dim, m = store.dim, V.shape[1]
    if m == 0:
        out = np.zeros((dim, 0))
        return (out, out) if return_k else out
    chunks = [basis] if basis.shape[1] else []
    if chunks and k_basis is None:
        k_basis = K @ basis
    k_chunks = [k_basis] if chunks else []

    accepted, k_accepted = [], []
    for j in range(m):
        v = V[:, j].astype(float).copy()
        Kv = K @ v
        norm0 = np.sqrt(max(float(v @ Kv), 0.0))
        if norm0 == 0.0:
            warnings.warn("zero snapshot skipped during basis extension")
            continue
        for _ in range(2):
            for Wc, KWc in zip(chunks, k_chunks):
                coef = KWc.T @ v
                v -= Wc @ coef
                Kv -= KWc @ coef
            for w, Kw in zip(accepted, k_accepted):
                c = float(Kw @ v)
                v -= c * w
                Kv -= c * Kw
        norm1 = np.sqrt(max(float(v @ Kv), 0.0))
        if norm1 < tol_rel * norm0:
            continue
        accepted.append(v / norm1)
        k_accepted.append(Kv / norm1)
    if accepted:
        out = np.column_stack(accepted)
        k_out = np.column_stack(k_accepted)
    else:
        out = np.zeros((dim, 0))
        k_out = np.zeros((dim, 0))
    return (out, k_out) if return_k else out


@dataclass(frozen=True)
class RbSpace:
    """K-orthonormal reduced basis, ``kind`` primal or dual."""

    basis: np.ndarray  # dofs x n
    kind: str

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def lift(self, coeffs: np.ndarray) -> np.ndarray:
        return self.basis @ coeffs

    def orthonormality_defect(self, store) -> float:
        G = self.basis.T @ (store.product @ self.basis)
        return float(np.max(np.abs(G - np.eye(self.dim))))


def extend_basis(space: RbSpace, snapshots, store, tol_rel: float = GS_DISCARD_TOL) -> RbSpace:
    """Extend a space by K-orthonormalized snapshots; may return it unchanged."""
    add = k_orthonormalize(store, space.basis, snapshots, tol_rel)
    if add.shape[1] == 0:
        return space
    return RbSpace(basis=np.hstack([space.basis, add]), kind=space.kind)


# ---------------------------------------------------------------------------
# residual ranges (stable dual norms)
# ---------------------------------------------------------------------------

class ResidualRange:
    """Orthonormalized range of one residual's component Riesz representatives.

    Column layout: a fixed block of linear-functional components followed by
    one block per bilinear source, each holding the images of the associated
    basis (one column per basis vector).
    """

    def __init__(self, store, lin_vectors, bil_sources):
        # bil_sources: list of (sparse matrix, which-basis-tag) pairs.  Raw
        # bilinear columns and the orthonormalized range basis are kept as
        # chunk lists so extension never recopies accumulated dofs-sized data.
        self.store = store
        self.lin = np.column_stack(lin_vectors) if lin_vectors else np.zeros((store.dim, 0))
        self.sources = bil_sources
        self.bil = [[] for _ in bil_sources]
        self.W = []
        self.KW = []
        if self.lin.shape[1]:
            self._absorb(self.lin, counters=None)
        self.T_lin = self._w_t_dot(self.W, self.lin)
        self.T_bil = [np.zeros((self.width, 0)) for _ in bil_sources]

    @property
    def width(self) -> int:
        return sum(c.shape[1] for c in self.W)

    @staticmethod
    def _w_t_dot(chunks, M):
        """Stacked ``chunk.T @ M`` over the chunk list."""
        if not chunks:
            return np.zeros((0, M.shape[1]))
        return np.vstack([c.T @ M for c in chunks])

    def _absorb(self, columns, counters):
        """K-orthonormalize the representatives of new raw columns into W."""
        if columns.shape[1] == 0:
            return np.zeros((self.store.dim, 0))
        reps = self.store.riesz_solve_many(columns)
        if counters is not None:
            counters.bump("riesz", columns.shape[1])
        if reps.ndim == 1:
            reps = reps[:, None]
        add, k_add = k_orthonormalize_blocks(self.store, self.W, self.KW, reps,
                                             RANGE_DISCARD_TOL)
        if add.shape[1]:
            self.W = self.W + [add]
            self.KW = self.KW + [k_add]
        return add

    def extended(self, basis_add: dict, counters) -> "ResidualRange":
        """New range with columns for new basis vectors; W and T extended
        incrementally, unchanged arrays shared with the parent (nothing is
        mutated in place, so sharing is safe).

        ``basis_add`` maps a basis tag to its new columns (dofs x dn).
        """
        dup = object.__new__(ResidualRange)
        dup.store = self.store
        dup.lin = self.lin
        dup.sources = self.sources
        dup.bil = list(self.bil)
        dup.W = list(self.W)
        dup.KW = list(self.KW)
        dup.T_lin = self.T_lin
        dup.T_bil = list(self.T_bil)

        new_cols = []
        for mat, tag in self.sources:
            add = basis_add.get(tag)
            if add is None or add.shape[1] == 0:
                new_cols.append(np.zeros((self.store.dim, 0)))
            else:
                new_cols.append(mat @ add)
        nonempty = [c for c in new_cols if c.shape[1]]
        stacked = np.hstack(nonempty) if nonempty else np.zeros((self.store.dim, 0))

        W_old = list(dup.W)  # pre-extension chunks; _absorb appends to dup.W
        W_add = dup._absorb(stacked, counters)

        # existing rows gain the new columns
        for idx, cols in enumerate(new_cols):
            if cols.shape[1]:
                dup.T_bil[idx] = np.hstack([dup.T_bil[idx], self._w_t_dot(W_old, cols)])
                dup.bil[idx] = dup.bil[idx] + [cols]
        # new rows span all columns
        if W_add.shape[1]:
            dup.T_lin = np.vstack([dup.T_lin, W_add.T @ dup.lin])

            def new_rows(chunks):
                if not chunks:
                    return np.zeros((W_add.shape[1], 0))
                return np.hstack([W_add.T @ c for c in chunks])

            dup.T_bil = [np.vstack([T, new_rows(b)])
                         for T, b in zip(dup.T_bil, dup.bil)]
        return dup

    def norm(self, lin_coeffs: np.ndarray, bil_coeffs: list) -> float:
        """Dual norm of ``sum lin_coeffs[i] lin_i + sum_c bil[c] @ bil_coeffs[c]``."""
        rho = self.T_lin @ lin_coeffs if self.T_lin.shape[1] else np.zeros(self.width)
        for T, c in zip(self.T_bil, bil_coeffs):
            if T.shape[1]:
                rho = rho + T @ c
        return float(np.linalg.norm(rho))


# ---------------------------------------------------------------------------
# reduced model
# ---------------------------------------------------------------------------

@dataclass
class RomPoint:
    """Lazy per-parameter cache of reduced solutions and operators."""

    mu: np.ndarray
    ops: dict = field(default_factory=dict)
    u_r: np.ndarray = None
    p_r: np.ndarray = None
    z_r: np.ndarray = None
    w_r: np.ndarray = None
    sens: dict = field(default_factory=dict)  # direction key -> dict(du, dp, dz, dw)


class RomModel:
    """Projected operators + NCD-corrected objective/gradient/hessian.

    Immutable between enrichments: :meth:`enriched` returns a new model.
    All evaluations are dense and independent of the FOM dimension.
    """

    def __init__(self, problem: ParametricProblem, store, bundle,
                 space_pr: RbSpace, space_du: RbSpace, counters=None):
        self.problem = problem
        self.store = store
        self.bundle = bundle
        self.space_pr = space_pr
        self.space_du = space_du
        self.enriched_mus: list = []
        self._build_blocks()
        self._build_ranges(counters)

    # -- construction --------------------------------------------------------

    def _build_blocks(self):
        prob, mats, vecs = self.problem, self.store.matrices, self.store.vectors
        Phi, Psi = self.space_pr.basis, self.space_du.basis
        self.App = [Phi.T @ (mats[c] @ Phi) for c in prob.a.components]
        self.Add = [Psi.T @ (mats[c] @ Psi) for c in prob.a.components]
        self.Apd = [Phi.T @ (mats[c] @ Psi) for c in prob.a.components]
        self.Kpp = [Phi.T @ (mats[c] @ Phi) for c in prob.k.components]
        self.Kpd = [Phi.T @ (mats[c] @ Psi) for c in prob.k.components]
        self.lp = [Phi.T @ vecs[c] for c in prob.l.components]
        self.ld = [Psi.T @ vecs[c] for c in prob.l.components]
        self.jp = [Phi.T @ vecs[c] for c in prob.j.components]
        self.jd = [Psi.T @ vecs[c] for c in prob.j.components]

    def _build_ranges(self, counters):
        prob, mats, vecs = self.problem, self.store.matrices, self.store.vectors
        self.range_pr = ResidualRange(
            self.store,
            [vecs[c] for c in prob.l.components],
            [(mats[c], "pr") for c in prob.a.components],
        )
        self.range_du = ResidualRange(
            self.store,
            [vecs[c] for c in prob.j.components],
            [(mats[c], "pr") for c in prob.k.components]
            + [(mats[c], "du") for c in prob.a.components],
        )
        add = {"pr": self.space_pr.basis, "du": self.space_du.basis}
        self.range_pr = self.range_pr.extended(add, counters)
        self.range_du = self.range_du.extended(add, counters)

    def _extend_blocks(self, phi_add: np.ndarray, psi_add: np.ndarray):
        prob, mats, vecs = self.problem, self.store.matrices, self.store.vectors
        Phi_old, Psi_old = self.space_pr.basis, self.space_du.basis

        def sym(old, M, B_old, B_add):
            if B_add.shape[1] == 0:
                return old
            MB = M @ B_add
            cross = B_old.T @ MB
            corner = B_add.T @ MB
            return np.block([[old, cross], [cross.T, corner]])

        def rect(old, M, L_old, L_add, R_old, R_add):
            MR_add = M @ R_add if R_add.shape[1] else None
            top_right = (L_old.T @ MR_add) if MR_add is not None else np.zeros((L_old.shape[1], 0))
            if L_add.shape[1]:
                ML = M @ L_add
                bottom_left = ML.T @ R_old
                bottom_right = (ML.T @ R_add) if R_add.shape[1] else np.zeros((L_add.shape[1], 0))
            else:
                bottom_left = np.zeros((0, R_old.shape[1]))
                bottom_right = np.zeros((0, R_add.shape[1]))
            return np.block([[old, top_right], [bottom_left, bottom_right]])

        new = object.__new__(RomModel)
        new.problem, new.store, new.bundle = prob, self.store, self.bundle
        new.space_pr = RbSpace(np.hstack([Phi_old, phi_add]), "primal") if phi_add.shape[1] else self.space_pr
        new.space_du = RbSpace(np.hstack([Psi_old, psi_add]), "dual") if psi_add.shape[1] else self.space_du
        new.enriched_mus = list(self.enriched_mus)
        new.App = [sym(B, mats[c], Phi_old, phi_add) for B, c in zip(self.App, prob.a.components)]
        new.Add = [sym(B, mats[c], Psi_old, psi_add) for B, c in zip(self.Add, prob.a.components)]
        new.Apd = [rect(B, mats[c], Phi_old, phi_add, Psi_old, psi_add)
                   for B, c in zip(self.Apd, prob.a.components)]
        new.Kpp = [sym(B, mats[c], Phi_old, phi_add) for B, c in zip(self.Kpp, prob.k.components)]
        new.Kpd = [rect(B, mats[c], Phi_old, phi_add, Psi_old, psi_add)
                   for B, c in zip(self.Kpd, prob.k.components)]

        def extvec(old_list, comps, B_add):
            if B_add.shape[1] == 0:
                return [v.copy() for v in old_list]
            return [np.concatenate([v, B_add.T @ vecs[c]]) for v, c in zip(old_list, comps)]

        new.lp = extvec(self.lp, prob.l.components, phi_add)
        new.ld = extvec(self.ld, prob.l.components, psi_add)
        new.jp = extvec(self.jp, prob.j.components, phi_add)
        new.jd = extvec(self.jd, prob.j.components, psi_add)
        new.range_pr = self.range_pr
        new.range_du = self.range_du
        return new

    # -- enrichment ------------------------------------------------------------

    def enriched(self, mu, strategy: str, fom: FomSystem, fpoint: FomPoint = None) -> "RomModel":
        """New model with snapshots at ``mu`` added per the chosen strategy.

        ``lagrangian`` adds the primal/dual solutions; ``taylor_directional``
        additionally adds their sensitivities in the direction of the gradient
        computed from those very solutions (at an enriched parameter this is
        the reduced-model gradient to solver accuracy).  A ``fpoint`` holding
        previously computed solutions at ``mu`` is reused instead of re-solving.
        """
        mu = np.asarray(mu, dtype=float)
        if fpoint is not None and fpoint.u is not None and np.array_equal(fpoint.mu, mu):
            u = fpoint.u
            p = fpoint.p if fpoint.p is not None else fom.solve_dual(mu, u)
        else:
            u = fom.solve_primal(mu)
            p = fom.solve_dual(mu, u)
            fpoint = None
        snaps_pr, snaps_du = [u], [p]
        if strategy == "taylor_directional":
            if fpoint is None:
                fpoint = FomPoint(mu=mu, u=u, p=p)
            eta = fom.gradient(mu, fpoint)
            if np.linalg.norm(eta) == 0.0:
                warnings.warn("zero gradient direction; falling back to lagrangian enrichment")
            else:
                du = fom.solve_sensitivity(mu, "primal", eta, fpoint)
                dp = fom.solve_sensitivity(mu, "dual", eta, fpoint)
                snaps_pr.append(du)
                snaps_du.append(dp)
        elif strategy != "lagrangian":
            raise ModelError(f"unknown enrichment strategy '{strategy}'")

        phi_add = k_orthonormalize(self.store, self.space_pr.basis, snaps_pr, GS_DISCARD_TOL)
        psi_add = k_orthonormalize(self.store, self.space_du.basis, snaps_du, GS_DISCARD_TOL)
        new = self._extend_blocks(phi_add, psi_add)
        add = {"pr": phi_add, "du": psi_add}
        new.range_pr = self.range_pr.extended(add, fom.counters)
        new.range_du = self.range_du.extended(add, fom.counters)
        new.enriched_mus.append(mu.copy())
        return new

    @classmethod
    def initial(cls, fom: FomSystem, bundle, mu0, strategy: str = "lagrangian",
                fpoint: FomPoint = None) -> "RomModel":
        """Model initialized with the starting-parameter snapshots."""
        mu0 = np.asarray(mu0, dtype=float)
        if fpoint is not None and fpoint.u is not None and np.array_equal(fpoint.mu, mu0):
            u = fpoint.u
            p = fpoint.p if fpoint.p is not None else fom.solve_dual(mu0, u)
        else:
            u = fom.solve_primal(mu0)
            p = fom.solve_dual(mu0, u)
            fpoint = None
        phi = k_orthonormalize(fom.store, np.zeros((fom.store.dim, 0)), [u], GS_DISCARD_TOL)
        psi = k_orthonormalize(fom.store, np.zeros((fom.store.dim, 0)), [p], GS_DISCARD_TOL)
        if phi.shape[1] == 0 or psi.shape[1] == 0:
            raise ModelError("initial snapshots are zero; cannot initialize RB spaces")
        rom = cls(fom.problem, fom.store, bundle,
                  RbSpace(phi, "primal"), RbSpace(psi, "dual"), counters=fom.counters)
        rom.enriched_mus.append(mu0.copy())
        if strategy == "taylor_directional":
            if fpoint is None:
                fpoint = FomPoint(mu=mu0, u=u, p=p)
            eta = fom.gradient(mu0, fpoint)
            if np.linalg.norm(eta) > 0.0:
                du = fom.solve_sensitivity(mu0, "primal", eta, fpoint)
                dp = fom.solve_sensitivity(mu0, "dual", eta, fpoint)
                phi_add = k_orthonormalize(fom.store, rom.space_pr.basis, [du], GS_DISCARD_TOL)
                psi_add = k_orthonormalize(fom.store, rom.space_du.basis, [dp], GS_DISCARD_TOL)
                new = rom._extend_blocks(phi_add, psi_add)
                add = {"pr": phi_add, "du": psi_add}
                new.range_pr = rom.range_pr.extended(add, fom.counters)
                new.range_du = rom.range_du.extended(add, fom.counters)
                return new
        return rom

    # -- per-parameter operators ------------------------------------------------

    @property
    def dims(self) -> tuple:
        return (self.space_pr.dim, self.space_du.dim)

    def _ops(self, point: RomPoint) -> dict:
        if point.ops:
            return point.ops
        mu = point.mu
        prob = self.problem
        th_a = prob.a.theta_values(mu)
        th_k = prob.k.theta_values(mu)
        th_l = prob.l.theta_values(mu)
        th_j = prob.j.theta_values(mu)

        def comb(blocks, th):
            out = th[0] * blocks[0]
            for t, B in zip(th[1:], blocks[1:]):
                out = out + t * B
            return out

        ops = {
            "th_a": th_a, "th_k": th_k, "th_l": th_l, "th_j": th_j,
            "App": comb(self.App, th_a), "Add": comb(self.Add, th_a),
            "Apd": comb(self.Apd, th_a),
            "Kpp": comb(self.Kpp, th_k), "Kpd": comb(self.Kpd, th_k),
            "lp": comb(self.lp, th_l), "ld": comb(self.ld, th_l),
            "jp": comb(self.jp, th_j), "jd": comb(self.jd, th_j),
            "Ga": np.column_stack([th.grad(mu) for th in prob.a.thetas]),
            "Gk": np.column_stack([th.grad(mu) for th in prob.k.thetas]),
            "Gl": np.column_stack([th.grad(mu) for th in prob.l.thetas]),
            "Gj": np.column_stack([th.grad(mu) for th in prob.j.thetas]),
        }
        point.ops = ops
        return ops

    def _solve(self, point, which: str, rhs: np.ndarray) -> np.ndarray:
        ops = self._ops(point)
        key = "_lu_" + which
        if key not in ops:
            mat = ops[which]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ops[key] = dla.lu_factor(mat)
        sol = dla.lu_solve(ops[key], rhs)
        if not np.all(np.isfinite(sol)):
            raise DegenerateBasisError(f"singular reduced operator '{which}'; basis degenerated")
        return sol

    # -- reduced solutions -------------------------------------------------------

    def point(self, mu) -> RomPoint:
        return RomPoint(mu=np.asarray(mu, dtype=float))

    def solve_reduced(self, point: RomPoint, kind: str) -> np.ndarray:
        ops = self._ops(point)
        if kind == "primal":
            if point.u_r is None:
                point.u_r = self._solve(point, "App", ops["lp"])
            return point.u_r
        if kind == "dual":
            u_r = self.solve_reduced(point, "primal")
            if point.p_r is None:
                rhs = ops["jd"] + 2.0 * (ops["Kpd"].T @ u_r)
                point.p_r = self._solve(point, "Add", rhs)
            return point.p_r
        raise ModelError(f"unknown reduced solve kind '{kind}'")

    def solve_ncd_auxiliary(self, point: RomPoint, kind: str) -> np.ndarray:
        """``z`` from the dual-space correction equation, ``w`` from the primal one."""
        ops = self._ops(point)
        if kind == "z":
            if point.z_r is None:
                u_r = self.solve_reduced(point, "primal")
                rhs = ops["Apd"].T @ u_r - ops["ld"]
                point.z_r = self._solve(point, "Add", rhs)
            return point.z_r
        if kind == "w":
            if point.w_r is None:
                u_r = self.solve_reduced(point, "primal")
                p_r = self.solve_reduced(point, "dual")
                z = self.solve_ncd_auxiliary(point, "z")
                rhs = (ops["jp"] + 2.0 * (ops["Kpp"] @ u_r) - ops["Apd"] @ p_r
                       - 2.0 * (ops["Kpd"] @ z))
                point.w_r = self._solve(point, "App", rhs)
            return point.w_r
        raise ModelError(f"unknown auxiliary kind '{kind}'")

    def _full_point(self, point: RomPoint):
        u_r = self.solve_reduced(point, "primal")
        p_r = self.solve_reduced(point, "dual")
        z = self.solve_ncd_auxiliary(point, "z")
        w = self.solve_ncd_auxiliary(point, "w")
        return u_r, p_r, z, w

    # -- objective, gradient, hessian ---------------------------------------------

    def objective_ncd(self, point: RomPoint) -> float:
        """``J(u_r, mu) + r_pr(u_r)[p_r]`` through reduced blocks only."""
        ops = self._ops(point)
        u_r = self.solve_reduced(point, "primal")
        p_r = self.solve_reduced(point, "dual")
        value = (self.problem.theta_big(point.mu) + ops["jp"] @ u_r
                 + u_r @ (ops["Kpp"] @ u_r))
        correction = ops["ld"] @ p_r - u_r @ (ops["Apd"] @ p_r)
        return float(value + correction)

    def _gradient_scalars(self, point: RomPoint):
        ops = self._ops(point)
        u_r, p_r, z, w = self._full_point(point)
        s_j = np.array([jp @ u_r - jd @ z for jp, jd in zip(self.jp, self.jd)])
        s_k = np.array([u_r @ (Kpp @ u_r) - 2.0 * (u_r @ (Kpd @ z))
                        for Kpp, Kpd in zip(self.Kpp, self.Kpd)])
        s_l = np.array([ld @ p_r + lp @ w for lp, ld in zip(self.lp, self.ld)])
        s_a = np.array([u_r @ (Apd @ p_r) + u_r @ (App @ w) - z @ (Add @ p_r)
                        for App, Add, Apd in zip(self.App, self.Add, self.Apd)])
        return ops, s_j, s_k, s_l, s_a

    def gradient_ncd(self, point: RomPoint) -> np.ndarray:
        """Exact gradient of the corrected objective (not an approximation of it)."""
        ops, s_j, s_k, s_l, s_a = self._gradient_scalars(point)
        g = self.problem.theta_big.grad(point.mu).copy()
        g += ops["Gj"] @ s_j + ops["Gk"] @ s_k + ops["Gl"] @ s_l - ops["Ga"] @ s_a
        return g

    def solve_reduced_sensitivity(self, point: RomPoint, nu: np.ndarray, kind: str) -> np.ndarray:
        """Directional derivatives of u_r, p_r, z, w; order primal>dual>z>w."""
        nu = np.asarray(nu, dtype=float)
        key = _dir_key(nu)
        cache = point.sens.setdefault(key, {})
        if kind in cache:
            return cache[kind]
        ops = self._ops(point)
        prob = self.problem
        da = ops["Ga"].T @ nu
        dk = ops["Gk"].T @ nu
        dl = ops["Gl"].T @ nu
        dj = ops["Gj"].T @ nu

        if kind == "primal":
            u_r = self.solve_reduced(point, "primal")
            rhs = sum(t * v for t, v in zip(dl, self.lp))
            rhs = rhs - sum(t * (B @ u_r) for t, B in zip(da, self.App))
            cache["primal"] = self._solve(point, "App", rhs)
            return cache["primal"]
        if kind == "dual":
            if "primal" not in cache:
                raise OrderingError("dual reduced sensitivity requires the primal one first")
            u_r = self.solve_reduced(point, "primal")
            p_r = self.solve_reduced(point, "dual")
            du = cache["primal"]
            rhs = sum(t * v for t, v in zip(dj, self.jd))
            rhs = rhs + 2.0 * sum(t * (B.T @ u_r) for t, B in zip(dk, self.Kpd))
            rhs = rhs + 2.0 * (ops["Kpd"].T @ du)
            rhs = rhs - sum(t * (B @ p_r) for t, B in zip(da, self.Add))
            cache["dual"] = self._solve(point, "Add", rhs)
            return cache["dual"]
        if kind == "z":
            if "primal" not in cache:
                raise OrderingError("z sensitivity requires the primal one first")
            u_r = self.solve_reduced(point, "primal")
            z = self.solve_ncd_auxiliary(point, "z")
            du = cache["primal"]
            rhs = -sum(t * v for t, v in zip(dl, self.ld))
            rhs = rhs + sum(t * (B.T @ u_r) for t, B in zip(da, self.Apd))
            rhs = rhs - sum(t * (B @ z) for t, B in zip(da, self.Add))
            rhs = rhs + ops["Apd"].T @ du
            cache["z"] = self._solve(point, "Add", rhs)
            return cache["z"]
        if kind == "w":
            for need in ("primal", "dual", "z"):
                if need not in cache:
                    raise OrderingError("w sensitivity requires primal, dual and z first")
            u_r, p_r, z, w = self._full_point(point)
            du, dp, dz = cache["primal"], cache["dual"], cache["z"]
            rhs = sum(t * v for t, v in zip(dj, self.jp))
            rhs = rhs + 2.0 * sum(t * (B @ u_r) for t, B in zip(dk, self.Kpp))
            rhs = rhs - sum(t * (B @ p_r) for t, B in zip(da, self.Apd))
            rhs = rhs - 2.0 * sum(t * (B @ z) for t, B in zip(dk, self.Kpd))
            rhs = rhs - sum(t * (B @ w) for t, B in zip(da, self.App))
            rhs = rhs + 2.0 * (ops["Kpp"] @ du) - 2.0 * (ops["Kpd"] @ dz) - ops["Apd"] @ dp
            cache["w"] = self._solve(point, "App", rhs)
            return cache["w"]
        raise ModelError(f"unknown reduced sensitivity kind '{kind}'")

    def _all_sensitivities(self, point: RomPoint, nu: np.ndarray):
        du = self.solve_reduced_sensitivity(point, nu, "primal")
        dp = self.solve_reduced_sensitivity(point, nu, "dual")
        dz = self.solve_reduced_sensitivity(point, nu, "z")
        dw = self.solve_reduced_sensitivity(point, nu, "w")
        return du, dp, dz, dw

    def hessvec_ncd(self, point: RomPoint, nu: np.ndarray) -> np.ndarray:
        """Hessian of the corrected objective applied to ``nu``.

        The outer gradient is realized as theta-partial differentiation with
        all reduced vectors frozen; the chain terms are carried by the four
        directional sensitivities and the second theta partials by the last
        row of the formula.
        """
        nu = np.asarray(nu, dtype=float)
        ops, s_j, s_k, s_l, s_a = self._gradient_scalars(point)
        u_r, p_r, z, w = self._full_point(point)
        du, dp, dz, dw = self._all_sensitivities(point, nu)

        # first-order theta partials against sensitivity-bearing scalars
        t_j = np.array([jp @ du - jd @ dz for jp, jd in zip(self.jp, self.jd)])
        t_k = np.array([2.0 * (u_r @ (Kpp @ du)) - 2.0 * (du @ (Kpd @ z))
                        - 2.0 * (u_r @ (Kpd @ dz))
                        for Kpp, Kpd in zip(self.Kpp, self.Kpd)])
        t_l = np.array([ld @ dp + lp @ dw for lp, ld in zip(self.lp, self.ld)])
        t_a = np.array([du @ (Apd @ p_r) + du @ (App @ w)
                        + u_r @ (Apd @ dp) + u_r @ (App @ dw)
                        - z @ (Add @ dp) - dz @ (Add @ p_r)
                        for App, Add, Apd in zip(self.App, self.Add, self.Apd)])

        h = self.problem.theta_big.hess(point.mu) @ nu
        h += ops["Gj"] @ t_j + ops["Gk"] @ t_k + ops["Gl"] @ t_l - ops["Ga"] @ t_a

        def second(form, scalars):
            out = np.zeros(self.problem.dim)
            for th, s in zip(form.thetas, scalars):
                if s != 0.0:
                    out += s * (th.hess(point.mu) @ nu)
            return out

        h += second(self.problem.j, s_j)
        h += second(self.problem.k, s_k)
        h += second(self.problem.l, s_l)
        h -= second(self.problem.a, s_a)
        return h

    def foc_measure_red(self, point: RomPoint) -> float:
        mu = point.mu
        g = self.gradient_ncd(point)
        return float(np.linalg.norm(mu - project_onto_box(mu - g, self.problem.box)))

    # -- residual dual norms (online) ------------------------------------------------

    def residual_norm_primal(self, point: RomPoint) -> float:
        ops = self._ops(point)
        u_r = self.solve_reduced(point, "primal")
        bil = [-t * u_r for t in ops["th_a"]]
        return self.range_pr.norm(ops["th_l"], bil)

    def residual_norm_dual(self, point: RomPoint) -> float:
        ops = self._ops(point)
        u_r = self.solve_reduced(point, "primal")
        p_r = self.solve_reduced(point, "dual")
        bil = [2.0 * t * u_r for t in ops["th_k"]] + [-t * p_r for t in ops["th_a"]]
        return self.range_du.norm(ops["th_j"], bil)

    def residual_norm_sens_primal(self, point: RomPoint, i: int) -> float:
        ops = self._ops(point)
        u_r = self.solve_reduced(point, "primal")
        e = np.zeros(self.problem.dim)
        e[i] = 1.0
        du = self.solve_reduced_sensitivity(point, e, "primal")
        dth_l = ops["Gl"][i, :]
        dth_a = ops["Ga"][i, :]
        bil = [-dt * u_r - t * du for dt, t in zip(dth_a, ops["th_a"])]
        return self.range_pr.norm(dth_l, bil)

    def residual_norm_sens_dual(self, point: RomPoint, i: int) -> float:
        ops = self._ops(point)
        u_r = self.solve_reduced(point, "primal")
        p_r = self.solve_reduced(point, "dual")
        e = np.zeros(self.problem.dim)
        e[i] = 1.0
        du = self.solve_reduced_sensitivity(point, e, "primal")
        dp = self.solve_reduced_sensitivity(point, e, "dual")
        dth_j = ops["Gj"][i, :]
        dth_k = ops["Gk"][i, :]
        dth_a = ops["Ga"][i, :]
        bil = [2.0 * dt * u_r + 2.0 * t * du for dt, t in zip(dth_k, ops["th_k"])]
        bil += [-dt * p_r - t * dp for dt, t in zip(dth_a, ops["th_a"])]
        return self.range_du.norm(dth_j, bil)

    # -- lifted evaluations (testing / enrichment only, FOM-dimension) ---------------

    def lift(self, point: RomPoint, which: str) -> np.ndarray:
        vecs = {"u": (self.space_pr, point.u_r), "p": (self.space_du, point.p_r),
                "z": (self.space_du, point.z_r), "w": (self.space_pr, point.w_r)}
        space, coeffs = vecs[which]
        if coeffs is None:
            raise OrderingError(f"'{which}' has not been solved at this point")
        return space.lift(coeffs)
