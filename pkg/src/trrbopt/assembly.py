"""P1 finite element assembly of parameter-separable components.

All bilinear components are assembled once per problem as sparse symmetric
matrices over piecewise-constant coefficient fields (piecewise constant on
cells, evaluated at triangle barycenters / boundary-edge midpoints).  The
energy product ``K`` is the component sum at the reference parameter and is
factorized once; its factorization backs every Riesz representative and dual
norm in the package.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import AssemblyError, ConfigError
from .mesh import Mesh

VOLUME_ROLES = ("wall", "door", "heater", "background", "domain-of-interest")
BOUNDARY_ROLES = ("wall", "window")


def spd_splu(mat):
    """SuperLU factorization tuned for SPD matrices (symmetric ordering, no pivoting)."""
    return spla.splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A",
                     diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))


@dataclass(frozen=True)
class IndicatorField:
    """Piecewise-constant coefficient field on cells or boundary edges.

    Parameters
    ----------
    role : str
        Tag used for validation and error messages.
    kind : str
        ``"volume"`` (rectangles) or ``"boundary"`` (side segments).
    patches : tuple
        For volume fields: ``((x0, y0, x1, y1), value)`` entries.
        For boundary fields: ``((side, t0, t1), value)`` entries where ``t``
        runs along the side (x on bottom/top, y on left/right).
    base : float
        Value outside all patches.
    """

    role: str
    kind: str
    patches: tuple
    base: float = 0.0

    def cell_values(self, mesh: Mesh) -> np.ndarray:
        if self.kind != "volume":
            raise AssemblyError(f"field with role '{self.role}' is not a volume field")
        pts = mesh.triangle_barycenters()
        vals = np.full(mesh.num_triangles, self.base)
        for (x0, y0, x1, y1), value in self.patches:
            inside = (pts[:, 0] > x0) & (pts[:, 0] < x1) & (pts[:, 1] > y0) & (pts[:, 1] < y1)
            vals[inside] = value
        return vals

    def edge_values(self, mesh: Mesh) -> np.ndarray:
        if self.kind != "boundary":
            raise AssemblyError(f"field with role '{self.role}' is not a boundary field")
        mids = mesh.edge_midpoints()
        vals = np.full(len(mesh.boundary_edges), self.base)
        for (side, t0, t1), value in self.patches:
            on_side = mesh.boundary_sides == side
            t = mids[:, 0] if side in ("bottom", "top") else mids[:, 1]
            vals[on_side & (t > t0) & (t < t1)] = value
        return vals


def volume_field(role, rects_with_values, base=0.0) -> IndicatorField:
    return IndicatorField(role=role, kind="volume",
                          patches=tuple((tuple(r), float(v)) for r, v in rects_with_values),
                          base=float(base))


def boundary_field(role, segments_with_values, base=0.0) -> IndicatorField:
    return IndicatorField(role=role, kind="boundary",
                          patches=tuple(((s, float(t0), float(t1)), float(v))
                                        for (s, t0, t1), v in segments_with_values),
                          base=float(base))


def _triangle_arrays(mesh: Mesh):
    tri = mesh.triangles
    tx = np.ascontiguousarray(mesh.vertices[tri, 0])
    ty = np.ascontiguousarray(mesh.vertices[tri, 1])
    return tri, tx, ty


def _scatter(mesh: Mesh, tri, vals9) -> sp.csr_matrix:
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    mat = sp.coo_matrix((vals9.ravel(), (rows, cols)),
                        shape=(mesh.num_vertices, mesh.num_vertices))
    return mat.tocsr()


def assemble_stiffness_component(mesh: Mesh, field: IndicatorField) -> sp.csr_matrix:
    """Assemble ``(v, w) -> int coef * grad v . grad w`` for a cell field.

    Returns a symmetric positive semidefinite CSR matrix.  Triangles with a
    zero coefficient are skipped so indicator components stay sparse.
    """
    tri, tx, ty = _triangle_arrays(mesh)
    coef = field.cell_values(mesh)
    area2 = (tx[:, 0] * (ty[:, 1] - ty[:, 2]) + tx[:, 1] * (ty[:, 2] - ty[:, 0])
             + tx[:, 2] * (ty[:, 0] - ty[:, 1]))
    if np.any(area2 <= 0):
        raise AssemblyError("mesh contains a non-positively-oriented or degenerate triangle")
    nz = coef != 0.0
    if not np.any(nz):
        return sp.csr_matrix((mesh.num_vertices, mesh.num_vertices))
    vals = kernels.stiffness_entries(tx[nz], ty[nz], coef[nz])
    return _scatter(mesh, tri[nz], vals)


def assemble_mass_component(mesh: Mesh, field: IndicatorField) -> sp.csr_matrix:
    """Assemble ``(v, w) -> int coef * v w`` (consistent P1 mass) for a cell field."""
    tri, tx, ty = _triangle_arrays(mesh)
    coef = field.cell_values(mesh)
    nz = coef != 0.0
    if not np.any(nz):
        return sp.csr_matrix((mesh.num_vertices, mesh.num_vertices))
    vals = kernels.mass_entries(tx[nz], ty[nz], coef[nz])
    return _scatter(mesh, tri[nz], vals)


def assemble_boundary_mass_component(mesh: Mesh, field: IndicatorField) -> sp.csr_matrix:
    """Assemble ``(v, w) -> int_boundary coef * v w dS`` on tagged edges.

    A field touching no boundary edge yields the zero matrix with a warning.
    """
    coef = field.edge_values(mesh)
    nz = coef != 0.0
    n = mesh.num_vertices
    if not np.any(nz):
        warnings.warn(f"boundary field '{field.role}' touches no boundary edge; zero matrix")
        return sp.csr_matrix((n, n))
    edges = mesh.boundary_edges[nz]
    lengths = mesh.edge_lengths()[nz]
    w = coef[nz] * lengths / 6.0
    vals = np.column_stack([2.0 * w, w, w, 2.0 * w])
    rows = np.column_stack([edges[:, 0], edges[:, 0], edges[:, 1], edges[:, 1]]).ravel()
    cols = np.column_stack([edges[:, 0], edges[:, 1], edges[:, 0], edges[:, 1]]).ravel()
    return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_load_component(mesh: Mesh, field: IndicatorField, boundary_scale: float = 1.0) -> np.ndarray:
    """Assemble ``v -> scale * int coef * v`` over cells or boundary edges.

    Pairing the result with the constant function 1 equals the weighted field
    measure times ``boundary_scale``.
    """
    n = mesh.num_vertices
    out = np.zeros(n)
    if field.kind == "volume":
        tri, tx, ty = _triangle_arrays(mesh)
        coef = field.cell_values(mesh)
        nz = coef != 0.0
        if np.any(nz):
            vals = kernels.cell_load(tx[nz], ty[nz], coef[nz]) * boundary_scale
            np.add.at(out, tri[nz].ravel(), vals.ravel())
    else:
        coef = field.edge_values(mesh)
        nz = coef != 0.0
        if not np.any(nz):
            warnings.warn(f"boundary field '{field.role}' touches no boundary edge; zero vector")
            return out
        edges = mesh.boundary_edges[nz]
        w = coef[nz] * mesh.edge_lengths()[nz] / 2.0 * boundary_scale
        np.add.at(out, edges.ravel(), np.repeat(w, 2).reshape(-1, 2).ravel())
    return out


def assemble_objective_components(mesh: Mesh, domain_of_interest: IndicatorField, u_desired):
    """Quadratic-misfit ingredients on the domain of interest D.

    Parameters
    ----------
    u_desired : float or (nv,) array
        Desired state, constant or a nodal P1 function.

    Returns
    -------
    dict with
        ``massD`` : mass matrix restricted to D,
        ``momentD`` : ``massD @ u_desired``,
        ``offset`` : ``u_desired' massD u_desired``.
    """
    massD = assemble_mass_component(mesh, domain_of_interest)
    if massD.nnz == 0:
        raise ConfigError("domain of interest contains no cell")
    if np.isscalar(u_desired):
        ud = np.full(mesh.num_vertices, float(u_desired))
    else:
        ud = np.asarray(u_desired, dtype=float)
        if ud.shape != (mesh.num_vertices,):
            raise ConfigError("desired state vector length does not match dof count")
    momentD = massD @ ud
    offset = float(ud @ momentD)
    return {"massD": massD, "momentD": momentD, "offset": offset}


@dataclass
class AssembledStore:
    """Assembled sparse components plus the factorized energy product.

    ``matrices`` and ``vectors`` are the component stores that
    :class:`~trrbopt.model.SeparableForm` handles index into.  ``product`` is
    the SPD energy-product matrix; its factorization is built lazily and
    guarded by a lock so concurrent Riesz solves are safe and deterministic.
    """

    mesh: Mesh
    matrices: list
    vectors: list
    product: sp.csr_matrix = None
    _lu: object = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def dim(self) -> int:
        return self.mesh.num_vertices

    def add_matrix(self, mat) -> int:
        self.matrices.append(mat)
        return len(self.matrices) - 1

    def add_vector(self, vec) -> int:
        self.vectors.append(np.asarray(vec, dtype=float))
        return len(self.vectors) - 1

    def set_product(self, K: sp.spmatrix) -> None:
        self.product = K.tocsr()
        self._lu = None

    def _factorization(self):
        if self._lu is None:
            with self._lock:
                if self._lu is None:
                    if self.product is None:
                        raise ConfigError("energy product has not been set")
                    self._lu = spd_splu(self.product)
        return self._lu

    def riesz_solve(self, functional: np.ndarray) -> np.ndarray:
        """Riesz representative ``K^{-1} f`` of a functional ``f``."""
        lu = self._factorization()
        f = np.asarray(functional, dtype=float)
        with self._lock:
            return lu.solve(f)

    def riesz_solve_many(self, functionals: np.ndarray) -> np.ndarray:
        """Column-wise Riesz solve for a (dim, k) block of functionals."""
        lu = self._factorization()
        f = np.asfortranarray(functionals, dtype=float)
        with self._lock:
            return lu.solve(f)

    def dual_norm(self, functional: np.ndarray) -> float:
        """Dual norm ``sqrt(f' K^{-1} f)``."""
        f = np.asarray(functional, dtype=float)
        return float(np.sqrt(max(f @ self.riesz_solve(f), 0.0)))

    def energy_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.product @ v), 0.0)))
