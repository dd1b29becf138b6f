"""P1/P2 vector Lagrange elements, plane-strain elasticity forms, assembly.

Scalar basis functions live on the reference triangle with vertices
(0,0), (1,0), (0,1); vector degrees of freedom interleave the two
components of each scalar node, ``dof = 2 * node + component``.  For
quadratic elements the scalar nodes are the mesh vertices followed by
one node per facet (edge midpoints).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import DIRICHLET, Mesh

NU_MAX = 0.45  # harder caps would mask input errors; near-incompressibility is out of scope


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic plane-strain material: mu = E/(2(1+nu)),
    lambda = E nu/((1+nu)(1-2nu))."""

    E: float
    nu: float
    mu: float
    lam: float

    @staticmethod
    def from_young(E: float, nu: float) -> "MaterialParams":
        if E <= 0:
            raise ValueError(f"Young's modulus must be positive, got {E}")
        if not (0 <= nu <= NU_MAX):
            raise ValueError(
                f"Poisson ratio {nu} outside [0, {NU_MAX}]; nearly incompressible "
                "materials are not supported"
            )
        mu = E / (2.0 * (1.0 + nu))
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return MaterialParams(E=E, nu=nu, mu=mu, lam=lam)


# ---------------------------------------------------------------------------
# reference bases and quadrature
# ---------------------------------------------------------------------------

def shape_values(p: int, pts: np.ndarray) -> np.ndarray:
    """Scalar basis values at reference points ``pts`` (nq, 2) -> (nq, nl)."""
    x, y = pts[:, 0], pts[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    if p == 1:
        return np.column_stack([l0, l1, l2])
    if p == 2:
        return np.column_stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
        ])
    raise ValueError(f"unsupported degree {p}")


def shape_gradients(p: int, pts: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (nq, nl, 2)."""
    x, y = pts[:, 0], pts[:, 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    l0 = 1.0 - x - y
    if p == 1:
        g = np.stack([
            np.stack([-one, -one], axis=-1),
            np.stack([one, zero], axis=-1),
            np.stack([zero, one], axis=-1),
        ], axis=1)
        return g
    if p == 2:
        d0 = 1 - 4 * l0
        g = np.stack([
            np.stack([d0, d0], axis=-1),
            np.stack([4 * x - 1, zero], axis=-1),
            np.stack([zero, 4 * y - 1], axis=-1),
            np.stack([4 * y, 4 * x], axis=-1),
            np.stack([-4 * y, 4 * (l0 - y)], axis=-1),
            np.stack([4 * (l0 - x), -4 * x], axis=-1),
        ], axis=1)
        return g
    raise ValueError(f"unsupported degree {p}")


def shape_hessians(p: int) -> np.ndarray:
    """Constant reference second derivatives, shape (nl, 2, 2)."""
    if p == 1:
        return np.zeros((3, 2, 2))
    if p == 2:
        H = np.zeros((6, 2, 2))
        H[0] = [[4, 4], [4, 4]]
        H[1] = [[4, 0], [0, 0]]
        H[2] = [[0, 0], [0, 4]]
        H[3] = [[0, 4], [4, 0]]
        H[4] = [[0, -4], [-4, -8]]
        H[5] = [[-8, -4], [-4, 0]]
        return H
    raise ValueError(f"unsupported degree {p}")


def triangle_rule(degree: int):
    """Quadrature on the reference triangle, exact to the given degree.

    Weights sum to the reference area 1/2.
    """
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        pts = np.array([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
        return pts, np.full(3, 1 / 6)
    if degree <= 4:
        a1, a2 = 0.445948490915965, 0.091576213509771
        w1, w2 = 0.223381589678011, 0.109951743655322
        pts = np.array([
            [a1, a1], [1 - 2 * a1, a1], [a1, 1 - 2 * a1],
            [a2, a2], [1 - 2 * a2, a2], [a2, 1 - 2 * a2],
        ])
        w = np.array([w1, w1, w1, w2, w2, w2]) * 0.5
        return pts, w
    if degree <= 6:
        a1, a2 = 0.063089014491502, 0.249286745170910
        b, c = 0.310352451033785, 0.053145049844816
        w1, w2, w3 = 0.050844906370207, 0.116786275726379, 0.082851075618374
        pts = [[a1, a1], [1 - 2 * a1, a1], [a1, 1 - 2 * a1],
               [a2, a2], [1 - 2 * a2, a2], [a2, 1 - 2 * a2],
               [b, c], [c, b], [1 - b - c, b], [1 - b - c, c], [b, 1 - b - c], [c, 1 - b - c]]
        w = np.array([w1] * 3 + [w2] * 3 + [w3] * 6) * 0.5
        return np.array(pts), w
    raise ValueError(f"no triangle rule of degree {degree}")


def gauss1d(n: int):
    """Gauss-Legendre rule mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def bulk_quadrature_degree(p: int) -> int:
    return 2 if p == 1 else 4


# ---------------------------------------------------------------------------
# finite element space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeSpace:
    """Continuous vector Lagrange space of degree 1 or 2 on one mesh.

    ``cell_nodes[t]`` lists the scalar node ids of triangle ``t``
    (3 vertices for P1, plus the 3 opposite-facet midpoints for P2);
    vector dofs are ``2 * node + comp``.
    """

    mesh: Mesh
    degree: int
    cell_nodes: np.ndarray
    node_coords: np.ndarray

    @staticmethod
    def build(mesh: Mesh, degree: int) -> "FeSpace":
        if degree not in (1, 2):
            raise ValueError(f"unsupported degree {degree}")
        if degree == 1:
            cell_nodes = mesh.triangles.copy()
            node_coords = mesh.vertices
        else:
            cell_nodes = np.hstack([
                mesh.triangles,
                mesh.num_vertices + mesh.triangle_facets,
            ])
            node_coords = np.vstack([mesh.vertices, mesh.facet_midpoints()])
        return FeSpace(mesh=mesh, degree=degree, cell_nodes=cell_nodes, node_coords=node_coords)

    @property
    def num_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def num_dofs(self) -> int:
        return 2 * self.num_nodes

    @property
    def nodes_per_cell(self) -> int:
        return 3 if self.degree == 1 else 6

    def cell_dofs(self, t: int) -> np.ndarray:
        nodes = self.cell_nodes[t]
        return np.stack([2 * nodes, 2 * nodes + 1], axis=1).ravel()

    def facet_nodes(self, f: int) -> np.ndarray:
        nodes = list(self.mesh.facets[f])
        if self.degree == 2:
            nodes.append(self.mesh.num_vertices + f)
        return np.array(nodes, dtype=int)

    def geometry(self):
        """Affine maps of all elements: (A, invA, det) stacked over cells."""
        p = self.mesh.vertices
        t = self.mesh.triangles
        A = np.stack([p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]]], axis=-1)
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        invA = np.empty_like(A)
        invA[:, 0, 0] = A[:, 1, 1] / det
        invA[:, 0, 1] = -A[:, 0, 1] / det
        invA[:, 1, 0] = -A[:, 1, 0] / det
        invA[:, 1, 1] = A[:, 0, 0] / det
        return A, invA, det

    def global_points(self, ref_pts: np.ndarray) -> np.ndarray:
        """Map reference points to every element: (nt, nq, 2)."""
        p = self.mesh.vertices
        t = self.mesh.triangles
        l0 = 1.0 - ref_pts[:, 0] - ref_pts[:, 1]
        return (
            l0[None, :, None] * p[t[:, 0]][:, None, :]
            + ref_pts[None, :, 0, None] * p[t[:, 1]][:, None, :]
            + ref_pts[None, :, 1, None] * p[t[:, 2]][:, None, :]
        )

    def ref_coords(self, t: int, x: np.ndarray) -> np.ndarray:
        """Reference coordinates of physical points inside element ``t``."""
        p = self.mesh.vertices[self.mesh.triangles[t]]
        A = np.stack([p[1] - p[0], p[2] - p[0]], axis=-1)
        return np.linalg.solve(A, (np.atleast_2d(x) - p[0]).T).T


@dataclass
class FieldFunction:
    """A finite element function: a space plus its coefficient vector."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (self.space.num_dofs,):
            raise ValueError("coefficient length does not match the dof count")

    def element_values(self, t: int, ref_pts: np.ndarray) -> np.ndarray:
        phi = shape_values(self.space.degree, ref_pts)
        nodes = self.space.cell_nodes[t]
        ux = phi @ self.coeffs[2 * nodes]
        uy = phi @ self.coeffs[2 * nodes + 1]
        return np.column_stack([ux, uy])

    def element_gradients(self, t: int, ref_pts: np.ndarray) -> np.ndarray:
        """Displacement gradient (du_i/dx_j) at reference points: (nq, 2, 2)."""
        gref = shape_gradients(self.space.degree, ref_pts)
        _, invA, _ = _element_geometry(self.space, t)
        g = gref @ invA  # (nq, nl, 2) physical gradients
        nodes = self.space.cell_nodes[t]
        cx = self.coeffs[2 * nodes]
        cy = self.coeffs[2 * nodes + 1]
        grad = np.empty((ref_pts.shape[0], 2, 2))
        grad[:, 0, :] = np.einsum("qld,l->qd", g, cx)
        grad[:, 1, :] = np.einsum("qld,l->qd", g, cy)
        return grad

    def node_values(self) -> np.ndarray:
        return self.coeffs.reshape(-1, 2)


def _element_geometry(space: FeSpace, t: int):
    p = space.mesh.vertices[space.mesh.triangles[t]]
    A = np.stack([p[1] - p[0], p[2] - p[0]], axis=-1)
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    invA = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
    return A, invA, det


# ---------------------------------------------------------------------------
# kinematics and constitutive law
# ---------------------------------------------------------------------------

def strain(field: FieldFunction, t: int, ref_pt) -> np.ndarray:
    """Symmetric gradient of the displacement at one reference point."""
    g = field.element_gradients(t, np.atleast_2d(np.asarray(ref_pt, dtype=float)))[0]
    return 0.5 * (g + g.T)


def stress(mat: MaterialParams, eps: np.ndarray) -> np.ndarray:
    """Plane-strain stress 2 mu eps + lambda tr(eps) I."""
    eps = np.asarray(eps, dtype=float)
    return 2.0 * mat.mu * eps + mat.lam * np.trace(eps) * np.eye(2)


def traction_split(sigma: np.ndarray, n: np.ndarray, body: int):
    """Split a traction into the scalar normal part and the tangential vector.

    Both bodies use their own outward normal; because the normal enters
    quadratically, opposite normals report the same scalar, so the two
    sides of a compressed interface agree in sign (negative).
    """
    n = np.asarray(n, dtype=float)
    if abs(np.hypot(*n) - 1.0) > 1e-12:
        raise ValueError(f"normal {n} is not a unit vector")
    if body not in (1, 2):
        raise ValueError(f"body must be 1 or 2, got {body}")
    t = np.asarray(sigma, dtype=float) @ n
    sigma_n = float(t @ n)
    return sigma_n, t - sigma_n * n


def elastic_moduli_rows(grads: np.ndarray, n: np.ndarray, mat: MaterialParams):
    """Rows of sigma_nn and of the full traction for local scalar gradients.

    ``grads`` has shape (nq, nl, 2); returns ``snn`` of shape
    (nq, 2 * nl) ordered like the local vector dofs, and ``trac`` of
    shape (nq, 2 * nl, 2) giving the traction vector of each unit dof.
    """
    nq, nl, _ = grads.shape
    gn = grads @ n  # (nq, nl)
    snn = np.empty((nq, 2 * nl))
    trac = np.empty((nq, 2 * nl, 2))
    for c in range(2):
        snn[:, c::2] = 2.0 * mat.mu * n[c] * gn + mat.lam * grads[:, :, c]
        for d in range(2):
            trac[:, c::2, d] = (
                mat.mu * ((1.0 if c == d else 0.0) * gn + grads[:, :, d] * n[c])
                + mat.lam * grads[:, :, c] * n[d]
            )
    return snn, trac


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble_bulk(space: FeSpace, mat: MaterialParams, quad_degree: Optional[int] = None) -> sp.csr_matrix:
    """Stiffness matrix of the elasticity form over one body."""
    p = space.degree
    qd = bulk_quadrature_degree(p) if quad_degree is None else quad_degree
    pts, w = triangle_rule(qd)
    gref = shape_gradients(p, pts)  # (nq, nl, 2)
    _, invA, det = space.geometry()
    # physical gradients per element: (nt, nq, nl, 2)
    g = np.einsum("qld,tde->tqle", gref, invA)

    nl = space.nodes_per_cell
    nt = space.mesh.num_triangles
    local = np.zeros((nt, 2 * nl, 2 * nl))
    for a in range(2):
        for b in range(2):
            # mu (delta_ab grad.grad + d_a phi_j d_b phi_i) + lam d_b phi_j d_a phi_i
            cross = np.einsum("q,tqm,tql->tlm", w, g[..., a], g[..., b])
            div = np.einsum("q,tqm,tql->tlm", w, g[..., b], g[..., a])
            block = mat.mu * cross + mat.lam * div
            if a == b:
                block = block + mat.mu * np.einsum("q,tqld,tqmd->tlm", w, g, g)
            local[:, a::2, b::2] = block * det[:, None, None]

    dofs = np.stack([2 * space.cell_nodes, 2 * space.cell_nodes + 1], axis=2).reshape(nt, 2 * nl)
    rows = np.repeat(dofs, 2 * nl, axis=1).ravel()
    cols = np.tile(dofs, (1, 2 * nl)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(space.num_dofs, space.num_dofs))
    return K.tocsr()


def assemble_load(space: FeSpace, f: Callable[[np.ndarray], np.ndarray], quad_degree: int = 4) -> np.ndarray:
    """Load vector of a body force; ``f`` maps points (n, 2) to (n, 2)."""
    pts, w = triangle_rule(quad_degree)
    phi = shape_values(space.degree, pts)  # (nq, nl)
    _, _, det = space.geometry()
    xq = space.global_points(pts)  # (nt, nq, 2)
    fv = f(xq.reshape(-1, 2)).reshape(xq.shape)  # (nt, nq, 2)
    contrib = np.einsum("q,tqc,ql,t->tlc", w, fv, phi, det)  # (nt, nl, 2)
    b = np.zeros(space.num_dofs)
    np.add.at(b, 2 * space.cell_nodes, contrib[:, :, 0])
    np.add.at(b, 2 * space.cell_nodes + 1, contrib[:, :, 1])
    return b


def assemble_boundary_load(space: FeSpace, n_gauss: Optional[int] = None) -> np.ndarray:
    """Surface load from the tractions attached to Neumann rules."""
    mesh = space.mesh
    if mesh.boundary_spec is None:
        raise ValueError("mesh is not classified")
    b = np.zeros(space.num_dofs)
    ng = (space.degree + 1) if n_gauss is None else n_gauss
    xi, wg = gauss1d(ng)
    for f in mesh.boundary_facets():
        rule = mesh.boundary_spec.rules[mesh.facet_rule[f]]
        if rule.traction is None:
            continue
        a = mesh.vertices[mesh.facets[f, 0]]
        c = mesh.vertices[mesh.facets[f, 1]]
        pts = a[None, :] + xi[:, None] * (c - a)[None, :]
        g = np.asarray(rule.traction(pts), dtype=float)
        length = float(np.hypot(*(c - a)))
        tri = mesh.facet_triangles[f, 0]
        ref = space.ref_coords(tri, pts)
        phi = shape_values(space.degree, ref)
        nodes = space.cell_nodes[tri]
        for comp in range(2):
            np.add.at(b, 2 * nodes + comp, length * (wg[:, None] * phi * g[:, [comp]]).sum(axis=0))
    return b


def interpolate(space: FeSpace, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolation of a smooth vector field."""
    vals = np.asarray(func(space.node_coords), dtype=float)
    return vals.ravel()


# ---------------------------------------------------------------------------
# Dirichlet constraints by elimination
# ---------------------------------------------------------------------------

def dirichlet_mask(space: FeSpace) -> np.ndarray:
    """Boolean mask of constrained dofs from the mesh's Dirichlet rules."""
    mesh = space.mesh
    if mesh.boundary_spec is None:
        raise ValueError("mesh is not classified")
    fixed = np.zeros(space.num_dofs, dtype=bool)
    for f in mesh.boundary_facets():
        rule = mesh.boundary_spec.rules[mesh.facet_rule[f]]
        if rule.kind != DIRICHLET:
            continue
        for node in space.facet_nodes(f):
            for comp in rule.components:
                fixed[2 * node + comp] = True
    return fixed


def pin_dof(space: FeSpace, point, comp: int) -> int:
    """Dof index of one displacement component at a mesh vertex.

    Used to remove rigid-body modes left over by component-wise
    Dirichlet data; the vertex must exist in the mesh.
    """
    d = np.hypot(*(space.mesh.vertices - np.asarray(point)).T)
    i = int(np.argmin(d))
    if d[i] > 1e-9:
        raise ValueError(f"no mesh vertex at {point}")
    return 2 * i + comp


def constrain(A: sp.spmatrix, b: np.ndarray, fixed: np.ndarray):
    """Eliminate constrained dofs (homogeneous data): returns the reduced
    symmetric system and the index map of the free dofs."""
    free = np.flatnonzero(~fixed)
    A = A.tocsr()
    return A[free][:, free], b[free], free


def expand(u_free: np.ndarray, free: np.ndarray, n: int) -> np.ndarray:
    u = np.zeros(n)
    u[free] = u_free
    return u
