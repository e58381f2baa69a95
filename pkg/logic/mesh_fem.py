"""
Uniform P1 finite elements on the unit interval and the unit square.

State functions live in X_h (interior nodes, homogeneous Dirichlet data);
coefficients live in V_h (all nodes). Scalar fields are callables taking an
array of points with shape (npts, dim) and returning shape (npts,).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Any

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from logic.errors import FactorizationError, InvalidSizeError, MeshMismatchError

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray], np.ndarray]

# Gauss rules on the reference simplex, exact for quadratics: (barycentric points, weights summing to 1)
_GAUSS_1D = (
    np.array([[0.5 + 0.5 / math.sqrt(3.0), 0.5 - 0.5 / math.sqrt(3.0)],
              [0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)]]),
    np.array([0.5, 0.5]),
)
_GAUSS_2D = (
    np.array([[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
              [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
              [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0]]),
    np.array([1.0, 1.0, 1.0]) / 3.0,
)


@dataclass(frozen=True, eq=False)
class Mesh:
    dim: int
    M: int
    nodes: np.ndarray          # (n_nodes, dim)
    elements: np.ndarray       # (n_elements, dim + 1)
    boundary_mask: np.ndarray  # (n_nodes,) bool
    # Derived element geometry, filled in __post_init__
    measures: np.ndarray = field(init=False, repr=False)
    gradients: np.ndarray = field(init=False, repr=False)  # (n_elements, dim + 1, dim)
    interior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = self.nodes[self.elements]                      # (ne, nv, dim)
        ne, nv, _ = verts.shape
        affine = np.concatenate([np.ones((ne, nv, 1)), verts], axis=2)
        inv = np.linalg.inv(affine)                             # rows: [const; d/dx...], cols: vertices
        object.__setattr__(self, 'measures', np.abs(np.linalg.det(affine)) / math.factorial(self.dim))
        object.__setattr__(self, 'gradients', np.transpose(inv[:, 1:, :], (0, 2, 1)))
        object.__setattr__(self, 'interior', np.flatnonzero(~self.boundary_mask))
        for arr in (self.nodes, self.elements, self.boundary_mask):
            arr.setflags(write=False)

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_interior(self) -> int:
        return self.interior.size

    def same_as(self, other: 'Mesh') -> bool:
        return self.dim == other.dim and self.M == other.M

    def extend_by_zero(self, interior_values: np.ndarray) -> np.ndarray:
        """Interior vectors (or a stack of them, last axis) to full nodal vectors."""
        values = np.asarray(interior_values)
        full = np.zeros(values.shape[:-1] + (self.n_nodes,))
        full[..., self.interior] = values
        return full

    def to_descriptor(self) -> Dict[str, Any]:
        return {"dim": self.dim, "M": self.M}

    @classmethod
    def from_descriptor(cls, descriptor: Dict[str, Any]) -> 'Mesh':
        return build_mesh(int(descriptor["dim"]), int(descriptor["M"]))


@dataclass(frozen=True)
class CoefficientField:
    mesh: Mesh
    nodal_values: np.ndarray

    def __post_init__(self):
        if self.nodal_values.shape != (self.mesh.n_nodes,):
            raise MeshMismatchError(
                f"Coefficient has {self.nodal_values.shape} values, mesh has {self.mesh.n_nodes} nodes"
            )


class FemOperators:
    """
    Mass matrix on X_h and the coefficient-independent pieces needed to assemble
    K(q) quickly for many coefficients on one mesh.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.mass_full = assemble_mass_full(mesh)
        self.mass = _restrict(self.mass_full, mesh.interior)
        self.unit_stiffness_full = assemble_stiffness_full(mesh, np.ones(mesh.n_nodes))
        self._mass_lu = None

    def stiffness(self, q: CoefficientField) -> sp.csc_matrix:
        return assemble_stiffness(self.mesh, q)

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        if self._mass_lu is None:
            try:
                self._mass_lu = splu(self.mass.tocsc())
            except RuntimeError as e:
                raise FactorizationError(f"Mass matrix is singular: {e}") from e
        return self._mass_lu.solve(rhs)

    def l2_norm_sq(self, interior_vectors: np.ndarray) -> np.ndarray:
        """Squared L2 norms of interior vectors stacked along the first axis."""
        v = np.atleast_2d(interior_vectors)
        return np.einsum('ni,ni->n', v, (self.mass @ v.T).T)


def build_mesh(dim: int, M: int) -> Mesh:
    """
    Uniform mesh of [0,1]^dim with M subdivisions per direction. In 2D each square
    is cut by the diagonal from its lower-left to its upper-right corner.

    Args:
        dim: 1 or 2.
        M: Subdivisions per direction, at least 2.

    Returns:
        The mesh with its element geometry precomputed.
    """
    if M < 2:
        raise InvalidSizeError(f"Mesh needs at least 2 subdivisions, got M={M}")
    if dim == 1:
        nodes = np.linspace(0.0, 1.0, M + 1)[:, None]
        elements = np.column_stack([np.arange(M), np.arange(1, M + 1)])
        boundary = np.zeros(M + 1, dtype=bool)
        boundary[[0, M]] = True
    elif dim == 2:
        g = np.linspace(0.0, 1.0, M + 1)
        xx, yy = np.meshgrid(g, g)                     # node (i, j) -> j * (M + 1) + i
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        i, j = np.meshgrid(np.arange(M), np.arange(M))
        a = (j * (M + 1) + i).ravel()
        b, c, d = a + 1, a + M + 2, a + M + 1
        elements = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
        boundary = np.zeros((M + 1, M + 1), dtype=bool)
        boundary[[0, M], :] = True
        boundary[:, [0, M]] = True
        boundary = boundary.ravel()
    else:
        raise InvalidSizeError(f"Only dim 1 and 2 are supported, got dim={dim}")
    logger.debug(f"Built {dim}D mesh with M={M}: {nodes.shape[0]} nodes, {elements.shape[0]} elements")
    return Mesh(dim=dim, M=M, nodes=nodes, elements=elements, boundary_mask=boundary)


def _restrict(matrix: sp.spmatrix, index: np.ndarray) -> sp.csc_matrix:
    return matrix.tocsr()[index][:, index].tocsc()


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csc_matrix:
    """Sums element matrices (ne, nv, nv) into a global sparse matrix over all nodes."""
    e = mesh.elements
    nv = e.shape[1]
    rows = np.repeat(e, nv, axis=1).ravel()
    cols = np.tile(e, (1, nv)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsc()


def assemble_mass_full(mesh: Mesh) -> sp.csc_matrix:
    nv = mesh.dim + 1
    ref = (np.ones((nv, nv)) + np.eye(nv)) / ((mesh.dim + 1) * (mesh.dim + 2))
    return _scatter(mesh, mesh.measures[:, None, None] * ref[None, :, :])


def assemble_mass(mesh: Mesh) -> sp.csc_matrix:
    """Exact P1 mass matrix over the interior basis functions."""
    return _restrict(assemble_mass_full(mesh), mesh.interior)


def element_means(mesh: Mesh, nodal_values: np.ndarray) -> np.ndarray:
    return np.asarray(nodal_values)[..., mesh.elements].mean(axis=-1)


def assemble_stiffness_full(mesh: Mesh, nodal_q: np.ndarray) -> sp.csc_matrix:
    q_bar = element_means(mesh, nodal_q)
    G = mesh.gradients
    local = np.einsum('eid,ejd->eij', G, G) * (q_bar * mesh.measures)[:, None, None]
    return _scatter(mesh, local)


def assemble_stiffness(mesh: Mesh, q: CoefficientField) -> sp.csc_matrix:
    """
    K(q)_ij = int q grad phi_i . grad phi_j over interior basis functions. P1 gradients
    are element-constant, so the element mean of nodal q integrates the P1 coefficient exactly.
    """
    if not q.mesh.same_as(mesh):
        raise MeshMismatchError(f"Coefficient lives on M={q.mesh.M}, dim={q.mesh.dim}; mesh is M={mesh.M}, dim={mesh.dim}")
    return _restrict(assemble_stiffness_full(mesh, q.nodal_values), mesh.interior)


def element_gradients(mesh: Mesh, full_values: np.ndarray) -> np.ndarray:
    """Element-constant gradients of P1 functions; full_values (..., n_nodes) -> (..., ne, dim)."""
    local = np.asarray(full_values)[..., mesh.elements]
    return np.einsum('...ev,evd->...ed', local, mesh.gradients)


def quadrature_points(mesh: Mesh):
    """Physical Gauss points (ne, ng, dim), barycentric values (ng, nv) and weights (ne, ng)."""
    bary, w = _GAUSS_1D if mesh.dim == 1 else _GAUSS_2D
    verts = mesh.nodes[mesh.elements]
    points = np.einsum('gv,evd->egd', bary, verts)
    return points, bary, mesh.measures[:, None] * w[None, :]


def load_vector_full(mesh: Mesh, func: ScalarField) -> np.ndarray:
    points, bary, weights = quadrature_points(mesh)
    ne, ng, dim = points.shape
    values = np.asarray(func(points.reshape(-1, dim)), dtype=float).reshape(ne, ng)
    local = np.einsum('eg,gv->ev', values * weights, bary)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def load_vector(mesh: Mesh, func: ScalarField) -> np.ndarray:
    """(func, phi_i) for interior basis functions."""
    return load_vector_full(mesh, func)[mesh.interior]


def l2_project(mesh: Mesh, func: ScalarField, operators: FemOperators = None) -> np.ndarray:
    """Interior nodal vector of P_h func."""
    ops = operators if operators is not None else FemOperators(mesh)
    return ops.solve_mass(load_vector(mesh, func))


def interpolate_nodal(mesh: Mesh, func: ScalarField) -> np.ndarray:
    """Full nodal vector of I_h func."""
    return np.asarray(func(mesh.nodes), dtype=float).reshape(mesh.n_nodes)


def evaluate_p1(mesh: Mesh, full_values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    Point evaluation of P1 functions on the structured mesh. full_values may carry
    leading axes (e.g. time levels); the node axis is last.
    """
    values = np.asarray(full_values)
    pts = np.atleast_2d(points)
    M = mesh.M
    if mesh.dim == 1:
        s = pts[:, 0] * M
        i = np.clip(np.floor(s).astype(int), 0, M - 1)
        s = s - i
        return values[..., i] * (1.0 - s) + values[..., i + 1] * s
    sx, sy = pts[:, 0] * M, pts[:, 1] * M
    i = np.clip(np.floor(sx).astype(int), 0, M - 1)
    j = np.clip(np.floor(sy).astype(int), 0, M - 1)
    s, t = sx - i, sy - j
    a = j * (M + 1) + i
    b, c, d = a + 1, a + M + 2, a + M + 1
    lower = s >= t
    # lower triangle (a, b, c) and upper triangle (a, c, d)
    wa = np.where(lower, 1.0 - s, 1.0 - t)
    wb = np.where(lower, s - t, 0.0)
    wc = np.where(lower, t, s)
    wd = np.where(lower, 0.0, t - s)
    return values[..., a] * wa + values[..., b] * wb + values[..., c] * wc + values[..., d] * wd


def l2_error(mesh: Mesh, full_values: np.ndarray, func: ScalarField) -> float:
    """||v_h - func||_L2 by Gauss quadrature on each element."""
    points, bary, weights = quadrature_points(mesh)
    ne, ng, dim = points.shape
    exact = np.asarray(func(points.reshape(-1, dim)), dtype=float).reshape(ne, ng)
    approx = np.einsum('gv,ev->eg', bary, np.asarray(full_values)[mesh.elements])
    return float(math.sqrt(np.sum(weights * (approx - exact) ** 2)))


def h1_seminorm_error(mesh: Mesh, full_values: np.ndarray, grad_func: Callable[[np.ndarray], np.ndarray]) -> float:
    """||grad(v_h - func)||_L2; grad_func maps points (npts, dim) to gradients (npts, dim)."""
    points, _, weights = quadrature_points(mesh)
    ne, ng, dim = points.shape
    exact = np.asarray(grad_func(points.reshape(-1, dim)), dtype=float).reshape(ne, ng, dim)
    approx = element_gradients(mesh, full_values)[:, None, :]
    return float(math.sqrt(np.sum(weights[:, :, None] * (approx - exact) ** 2)))


if __name__ == '__main__':
    m = build_mesh(2, 4)
    ops = FemOperators(m)
    print(f"{m.n_nodes} nodes, {m.elements.shape[0]} triangles, total mass {ops.mass_full.sum():.6f}")
