"""Structured triangular meshes on a rectangle.

A uniform ``nx x ny`` grid of squares on ``[0, Lx] x [0, Ly]``, each square
split into two right triangles along the diagonal from its lower-left to its
upper-right corner.  One degree of freedom per vertex (P1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrrbError


@dataclass(frozen=True)
class Mesh:
    """Triangulation of ``[0, lx] x [0, ly]``.

    Attributes
    ----------
    lx, ly : float
        Rectangle side lengths.
    nx, ny : int
        Cell counts per direction.
    vertices : (nv, 2) float array
        Vertex coordinates, lexicographic in (y, x).
    triangles : (nt, 3) int array
        Connectivity, positively oriented.
    boundary_edges : (ne, 2) int array
        Vertex pairs of boundary edges.
    boundary_sides : (ne,) str array
        Side tag per boundary edge: ``bottom | right | top | left``.
    """

    lx: float
    ly: float
    nx: int
    ny: int
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_sides: np.ndarray

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def vertex_index(self, i: int, j: int) -> int:
        """Global index of grid vertex (i, j), i in [0, nx], j in [0, ny]."""
        return j * (self.nx + 1) + i

    def triangle_barycenters(self) -> np.ndarray:
        """(nt, 2) array of triangle barycenters."""
        return self.vertices[self.triangles].mean(axis=1)

    def edge_midpoints(self) -> np.ndarray:
        """(ne, 2) array of boundary edge midpoints."""
        return self.vertices[self.boundary_edges].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)


def build_mesh(lx: float, ly: float, nx: int, ny: int) -> Mesh:
    """Build a uniform criss triangulation with ``(nx+1)(ny+1)`` vertices.

    Raises
    ------
    TrrbError
        If a cell count is not positive or a side length is not positive.
    """
    if nx < 1 or ny < 1:
        raise TrrbError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    if lx <= 0 or ly <= 0:
        raise TrrbError(f"side lengths must be positive, got lx={lx}, ly={ly}")

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    # two triangles per cell: (ll, lr, ur) and (ll, ur, ul), both CCW
    i = np.arange(nx)
    j = np.arange(ny)
    I, J = np.meshgrid(i, j)
    ll = (J * (nx + 1) + I).ravel()
    lr = ll + 1
    ul = ll + (nx + 1)
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges = []
    sides = []
    for k in range(nx):  # bottom, left to right
        edges.append((k, k + 1))
        sides.append("bottom")
    for k in range(ny):  # right, bottom to top
        edges.append((k * (nx + 1) + nx, (k + 1) * (nx + 1) + nx))
        sides.append("right")
    for k in range(nx):  # top
        base = ny * (nx + 1)
        edges.append((base + k, base + k + 1))
        sides.append("top")
    for k in range(ny):  # left
        edges.append((k * (nx + 1), (k + 1) * (nx + 1)))
        sides.append("left")

    return Mesh(
        lx=float(lx),
        ly=float(ly),
        nx=int(nx),
        ny=int(ny),
        vertices=vertices,
        triangles=triangles,
        boundary_edges=np.asarray(edges, dtype=np.int64),
        boundary_sides=np.asarray(sides, dtype=object),
    )
