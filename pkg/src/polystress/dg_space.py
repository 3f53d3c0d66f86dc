"""Tensor-valued discontinuous polynomial spaces on polygonal meshes.

Each element carries a modal basis of total degree <= p: tensor-product
Legendre polynomials scaled to the element bounding box and L2-normalised
over it.  On rectangular elements the basis is therefore exactly
orthonormal; on agglomerated polygons the element Gram matrix stays
well-conditioned SPD but is not the identity, which is what gives the mass
blocks of the time-step operator their nontrivial spectrum.  Quadrature on
polygons integrates over the centroid fan with a collapsed tensor Gauss
rule per triangle.

Global scalar dof layout is element-major, ``e * local_dim + i``; the four
tensor components are stacked component-major on top of it,
``c * scalar_dofs + e * local_dim + i`` with c in (0: s11, 1: s12,
2: s21, 3: s22).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial import legendre as npleg

from .mesh import PolyMesh, _centroid, _fan_cross_products

#: tensor components in dof order: row-major flattening of the 2x2 tensor
COMPONENTS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class QuadratureRule:
    """Points (nq, 2) and strictly positive weights summing to the measure
    of the integration domain."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


def gauss_segment(npoints: int):
    return npleg.leggauss(npoints)


def triangle_rule(degree: int) -> QuadratureRule:
    """Rule on the reference triangle (0,0)-(1,0)-(0,1), exact for total
    degree <= degree.

    Collapsed coordinates: (x, y) = (u (1 - v), v) maps the unit square to
    the triangle with Jacobian (1 - v), so a polynomial of total degree d
    becomes degree d in u and d + 1 in v; the tensor Gauss rule below is
    therefore exact.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    nu = (degree + 2) // 2
    nv = (degree + 3) // 2
    tu, wu = npleg.leggauss(nu)
    tv, wv = npleg.leggauss(nv)
    u = 0.5 * (tu + 1.0)
    v = 0.5 * (tv + 1.0)
    U, V = np.meshgrid(u, v, indexing="ij")
    WU, WV = np.meshgrid(0.25 * wu, wv, indexing="ij")
    x = U * (1.0 - V)
    y = V
    w = WU * WV * (1.0 - V)
    pts = np.column_stack([x.ravel(), y.ravel()])
    return QuadratureRule(pts, w.ravel())


def element_quadrature(polygon: np.ndarray, degree: int) -> QuadratureRule:
    """Quadrature over a polygon, exact for total degree <= degree.

    The polygon is fanned into triangles from its centroid; the polygon must
    be star-shaped with respect to it (guaranteed for agglomerated meshes).
    Degenerate fan triangles from collinear boundary chains are dropped.
    """
    polygon = np.asarray(polygon, dtype=float)
    if len(polygon) < 3:
        raise ValueError("degenerate polygon")
    center = _centroid(polygon)
    cross = _fan_cross_products(polygon, center)
    area2 = float(np.abs(cross).sum())
    if area2 <= 0.0:
        raise ValueError("degenerate polygon")
    if np.any(cross < -1e-12 * area2):
        raise ValueError("polygon is not star-shaped w.r.t. its centroid")
    ref = triangle_rule(degree)
    pts, wts = [], []
    nxt = np.roll(polygon, -1, axis=0)
    for i in range(len(polygon)):
        if cross[i] <= 1e-14 * area2:
            continue
        a, b = polygon[i], nxt[i]
        # affine map from the reference triangle, |J| = cross[i]
        pts.append(center + np.outer(ref.points[:, 0], a - center)
                   + np.outer(ref.points[:, 1], b - center))
        wts.append(ref.weights * cross[i])
    return QuadratureRule(np.vstack(pts), np.concatenate(wts))


def face_quadrature(p0, p1, degree: int) -> QuadratureRule:
    """Gauss rule on the segment p0-p1, exact for degree <= degree; weights
    sum to the segment length."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = float(np.hypot(*(p1 - p0)))
    if length <= 0.0:
        raise ValueError("zero-length face")
    t, w = npleg.leggauss((degree + 2) // 2)
    s = 0.5 * (t + 1.0)
    pts = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
    return QuadratureRule(pts, 0.5 * length * w)


def _total_degree_exponents(p: int) -> np.ndarray:
    exps = [(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)]
    return np.array(exps, dtype=np.int64)


def _legendre_table(t: np.ndarray, pmax: int):
    """Values and derivatives of L_0..L_pmax at points t (exact polynomial
    arithmetic, valid at the interval endpoints)."""
    V = npleg.legvander(t, pmax)
    D = np.zeros((pmax + 1, pmax + 1))
    for k in range(1, pmax + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        d = npleg.legder(c)
        D[:len(d), k] = d
    return V, V @ D


class DGSpace:
    """Discrete space [P_p(mesh)]^{2x2} with bounding-box Legendre bases.

    local_dim = (p+1)(p+2)/2 scalar modes per element, scalar_dofs =
    local_dim * n_elements, total_dofs = 4 * scalar_dofs.
    """

    def __init__(self, mesh: PolyMesh, degree: int):
        if degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        self.mesh = mesh
        self.degree = int(degree)
        self.exponents = _total_degree_exponents(degree)
        self.local_dim = len(self.exponents)
        self.n_elements = mesh.n_elements
        self.scalar_dofs = self.local_dim * self.n_elements
        self.total_dofs = 4 * self.scalar_dofs
        self.quad_degree = 2 * degree + 1

        frames = np.empty((self.n_elements, 4))
        for e in range(self.n_elements):
            pts = mesh.element_points(e)
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            frames[e, :2] = 0.5 * (lo + hi)
            frames[e, 2:] = 0.5 * (hi - lo)
        self.frames = frames

        # L2 normalisation over the bounding box: the basis is exactly
        # orthonormal on rectangular elements and stays well-conditioned on
        # agglomerated polygons.
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        sx, sy = frames[:, 2], frames[:, 3]
        self._scales = 1.0 / np.sqrt(np.outer(sx * sy, 4.0 / ((2 * a + 1.0) * (2 * b + 1.0))))

        self.element_rules = [element_quadrature(mesh.element_points(e), self.quad_degree)
                              for e in range(self.n_elements)]
        self._gram_chol = []
        for e in range(self.n_elements):
            rule = self.element_rules[e]
            phi = self.basis_values(e, rule.points)
            gram = phi.T @ (rule.weights[:, None] * phi)
            try:
                self._gram_chol.append(scipy.linalg.cho_factor(gram))
            except scipy.linalg.LinAlgError as exc:
                raise ValueError(f"singular basis Gram matrix on element {e}") from exc

    # -- basis evaluation ----------------------------------------------------

    def _frame_coords(self, e: int, pts: np.ndarray):
        cx, cy, sx, sy = self.frames[e]
        return (pts[:, 0] - cx) / sx, (pts[:, 1] - cy) / sy

    def basis_values(self, e: int, pts: np.ndarray) -> np.ndarray:
        """Basis values, shape (npts, local_dim)."""
        xi, eta = self._frame_coords(e, pts)
        vx, _ = _legendre_table(xi, self.degree)
        vy, _ = _legendre_table(eta, self.degree)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        return vx[:, a] * vy[:, b] * self._scales[e]

    def basis_gradients(self, e: int, pts: np.ndarray) -> np.ndarray:
        """Basis gradients, shape (npts, local_dim, 2)."""
        cx, cy, sx, sy = self.frames[e]
        xi, eta = self._frame_coords(e, pts)
        vx, dx = _legendre_table(xi, self.degree)
        vy, dy = _legendre_table(eta, self.degree)
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        grad = np.empty((len(pts), self.local_dim, 2))
        grad[:, :, 0] = dx[:, a] * vy[:, b] * (self._scales[e] / sx)
        grad[:, :, 1] = vx[:, a] * dy[:, b] * (self._scales[e] / sy)
        return grad

    def gram_solve(self, e: int, rhs: np.ndarray) -> np.ndarray:
        """Solve with the element Gram matrix (identity on rectangles)."""
        return scipy.linalg.cho_solve(self._gram_chol[e], rhs)

    # -- dof layout ------------------------------------------------------------

    def scalar_index(self, e: int, i=None):
        base = e * self.local_dim
        return base if i is None else base + i

    def global_index(self, c: int, e: int, i=None):
        base = c * self.scalar_dofs + e * self.local_dim
        return base if i is None else base + i

    def component_slice(self, c: int) -> slice:
        return slice(c * self.scalar_dofs, (c + 1) * self.scalar_dofs)

    # -- field evaluation -------------------------------------------------------

    def eval_field(self, dofs: np.ndarray, e: int, pts: np.ndarray) -> np.ndarray:
        """Evaluate the tensor field on element e, shape (npts, 2, 2)."""
        phi = self.basis_values(e, pts)
        out = np.empty((len(pts), 2, 2))
        for c, (r, d) in enumerate(COMPONENTS):
            sl = slice(self.global_index(c, e), self.global_index(c, e) + self.local_dim)
            out[:, r, d] = phi @ dofs[sl]
        return out

    def eval_divergence(self, dofs: np.ndarray, e: int, pts: np.ndarray) -> np.ndarray:
        """Row-wise divergence of the tensor field, shape (npts, 2)."""
        grad = self.basis_gradients(e, pts)
        out = np.zeros((len(pts), 2))
        for c, (r, d) in enumerate(COMPONENTS):
            sl = slice(self.global_index(c, e), self.global_index(c, e) + self.local_dim)
            out[:, r] += grad[:, :, d] @ dofs[sl]
        return out


def build_space(mesh: PolyMesh, p: int) -> DGSpace:
    """Build the degree-p tensor DG space over a polygonal mesh (p >= 1)."""
    return DGSpace(mesh, p)


def l2_project(space: DGSpace, field) -> np.ndarray:
    """Elementwise L2 projection of a tensor-valued function.

    ``field(x, y)`` takes coordinate arrays and returns values with shape
    (npts, 2, 2).  Coefficients are quadrature inner products run through
    the element Gram solve (a no-op on rectangular elements, where the
    basis is orthonormal).
    """
    dofs = np.zeros(space.total_dofs)
    for e in range(space.n_elements):
        rule = space.element_rules[e]
        phi = space.basis_values(e, rule.points)
        vals = np.asarray(field(rule.points[:, 0], rule.points[:, 1]))
        wphi = rule.weights[:, None] * phi
        for c, (r, d) in enumerate(COMPONENTS):
            sl = slice(space.global_index(c, e), space.global_index(c, e) + space.local_dim)
            dofs[sl] = space.gram_solve(e, wphi.T @ vals[:, r, d])
    return dofs
