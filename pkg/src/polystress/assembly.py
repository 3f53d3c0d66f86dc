"""Assembly of the algebraic operators of the PolyDG discretisation.

Two independent assembly paths are kept on purpose: the full tensor-valued
operator A (and the deviatoric mass M) on one side, and the scalar blocks
M1, B1, B2, B3 of their Kronecker/block-diagonal structure on the other.
``kron_structure_check`` compares them entrywise.

Block conventions, with S = scalar_dofs and dof order (s11, s12, s21, s22):
M = (mu^-1 K0) kron M1, and A = I_2 kron [[B1, B2^T], [B2, B3]] where
B2(i, j) carries the x-derivative of the trial and the y-derivative of the
test function (B2 itself is not symmetric, so it appears transposed in the
upper off-diagonal block).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sparse
from scipy.io import mmwrite

from .dg_space import COMPONENTS, DGSpace, face_quadrature
from .mesh import FaceKind, PolyMesh
from .problems import ProblemData

#: unscaled deviatoric factor of the mass matrix, components ordered
#: (s11, s12, s21, s22)
K_SPEC = np.array([
    [0.5, 0.0, 0.0, -0.5],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [-0.5, 0.0, 0.0, 0.5],
])

DEFAULT_ALPHA = 10.0


@dataclass
class SystemMatrices:
    """Assembled operators and their structural factors."""

    m1: sparse.csr_matrix
    b1: sparse.csr_matrix
    b2: sparse.csr_matrix
    b3: sparse.csr_matrix
    kfactor: np.ndarray
    m: sparse.csr_matrix
    a: sparse.csr_matrix
    mu: float
    alpha: float

    @property
    def n(self) -> int:
        return self.m.shape[0]


def finalize(matrix, rel: float = 1e-14) -> sparse.csr_matrix:
    """Canonical CSR form: duplicates summed, entries below rel * rowmax
    dropped, indices sorted."""
    A = matrix.tocsr()
    A.sum_duplicates()
    if A.nnz:
        rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
        mag = np.abs(A.data)
        rowmax = np.zeros(A.shape[0])
        np.maximum.at(rowmax, rows, mag)
        keep = mag > rel * rowmax[rows]
        A = sparse.csr_matrix((A.data[keep], (rows[keep], A.indices[keep])),
                              shape=A.shape)
    A.sort_indices()
    return A


def deviatoric_factor() -> np.ndarray:
    """Contractions dev(E_c) : dev(E_c') of the unit tensors, computed from
    the definition of the deviatoric operator."""
    K0 = np.empty((4, 4))
    units = []
    for r, d in COMPONENTS:
        E = np.zeros((2, 2))
        E[r, d] = 1.0
        units.append(E - 0.5 * np.trace(E) * np.eye(2))
    for i, Di in enumerate(units):
        for j, Dj in enumerate(units):
            K0[i, j] = float(np.sum(Di * Dj))
    return K0


def penalty(face, alpha: float, p: int, mesh: PolyMesh) -> float:
    """Face stabilisation alpha * p^2 / h: the max over the two neighbours
    on interior faces, the single neighbour on Neumann faces.  Undefined on
    Dirichlet faces."""
    if face.kind == FaceKind.DIRICHLET:
        raise ValueError("penalty is defined on interior and Neumann faces only")
    val = p * p / mesh.element_diameters[face.plus_element]
    if face.kind == FaceKind.INTERIOR:
        val = max(val, p * p / mesh.element_diameters[face.minus_element])
    return alpha * val


def assemble_mass(space: DGSpace, mu: float = 1.0):
    """Deviatoric mass operator: returns (M1, K, M) with M1 the scalar mass
    matrix, K the mu-scaled deviatoric factor and M the full operator."""
    if mu <= 0.0:
        raise ValueError("viscosity mu must be positive")
    L = space.local_dim
    K = deviatoric_factor() / mu

    rows1, cols1, vals1 = [], [], []
    rows, cols, vals = [], [], []
    for e in range(space.n_elements):
        rule = space.element_rules[e]
        phi = space.basis_values(e, rule.points)
        m1e = phi.T @ (rule.weights[:, None] * phi)
        sidx = space.scalar_index(e) + np.arange(L)
        rows1.append(np.repeat(sidx, L))
        cols1.append(np.tile(sidx, L))
        vals1.append(m1e.ravel())
        for ct in range(4):
            for cj in range(4):
                if K[ct, cj] == 0.0:
                    continue
                gr = space.global_index(ct, e) + np.arange(L)
                gc = space.global_index(cj, e) + np.arange(L)
                rows.append(np.repeat(gr, L))
                cols.append(np.tile(gc, L))
                vals.append(K[ct, cj] * m1e.ravel())

    S = space.scalar_dofs
    m1 = finalize(sparse.coo_matrix(
        (np.concatenate(vals1), (np.concatenate(rows1), np.concatenate(cols1))),
        shape=(S, S)))
    m = finalize(sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(4 * S, 4 * S)))
    return m1, K, m


def _face_sides(space: DGSpace, face, rule):
    interior = face.kind == FaceKind.INTERIOR
    elems = [face.plus_element] + ([face.minus_element] if interior else [])
    signs = [1.0, -1.0][:len(elems)]
    phis = [space.basis_values(e, rule.points) for e in elems]
    grads = [space.basis_gradients(e, rule.points) for e in elems]
    avg = 0.5 if interior else 1.0
    return elems, signs, phis, grads, avg


def assemble_stiffness(space: DGSpace, alpha: float = DEFAULT_ALPHA):
    """Broken divergence operator with interior-penalty coupling.

    Returns (B1, B2, B3, A): the scalar blocks of the vector-valued form
    (assembled on the scalar dof layout) and the full tensor operator A,
    assembled independently over all four components.
    """
    mesh = space.mesh
    L = space.local_dim
    S = space.scalar_dofs
    qd = space.quad_degree

    rowsA, colsA, valsA = [], [], []
    rowsR, colsR, valsR = [], [], []

    def scatter(buffers, gidx, loc):
        rows, cols, vals = buffers
        k = len(gidx)
        rows.append(np.repeat(gidx, k))
        cols.append(np.tile(gidx, k))
        vals.append(loc.reshape(k, k).ravel())

    for e in range(space.n_elements):
        rule = space.element_rules[e]
        w = rule.weights
        G = space.basis_gradients(e, rule.points)

        # tensor path: div of the (r, d) component basis is the vector
        # e_r * d_d(phi)
        DV = np.zeros((len(w), 4, L, 2))
        for c, (r, d) in enumerate(COMPONENTS):
            DV[:, c, :, r] = G[:, :, d]
        loc = np.einsum("q,qbik,qcjk->bicj", w, DV, DV)
        gidx = np.concatenate([space.global_index(c, e) + np.arange(L)
                               for c in range(4)])
        scatter((rowsA, colsA, valsA), gidx, loc)

        # block path: a two-component vector field (x-slot, y-slot) with
        # scalar divergence d_x(u) + d_y(v)
        locR = np.einsum("q,qia,qjb->aibj", w, G, G)
        sidx = np.concatenate([slot * S + space.scalar_index(e) + np.arange(L)
                               for slot in range(2)])
        scatter((rowsR, colsR, valsR), sidx, locR)

    p = space.degree
    for face in mesh.faces:
        if face.kind == FaceKind.DIRICHLET:
            continue
        pts = mesh.face_points(face)
        rule = face_quadrature(pts[0], pts[1], qd)
        w = rule.weights
        n = face.normal
        gamma = penalty(face, alpha, p, mesh)
        elems, signs, phis, grads, avg = _face_sides(space, face, rule)
        ns = len(elems)

        JU = np.zeros((len(w), 4, ns * L, 2))
        DVa = np.zeros((len(w), 4, ns * L, 2))
        JUs = np.zeros((len(w), 2, ns * L))
        DVs = np.zeros((len(w), 2, ns * L))
        for s in range(ns):
            sl = slice(s * L, (s + 1) * L)
            for c, (r, d) in enumerate(COMPONENTS):
                JU[:, c, sl, r] = phis[s] * n[d] * signs[s]
                DVa[:, c, sl, r] = grads[s][:, :, d] * avg
            for slot in range(2):
                JUs[:, slot, sl] = phis[s] * n[slot] * signs[s]
                DVs[:, slot, sl] = grads[s][:, :, slot] * avg

        cons = np.einsum("q,qbik,qcjk->bicj", w, JU, DVa)
        pen = np.einsum("q,qbik,qcjk->bicj", w, JU, JU)
        loc = -cons - cons.transpose(2, 3, 0, 1) + gamma * pen
        gidx = np.concatenate([space.global_index(c, e) + np.arange(L)
                               for c in range(4) for e in elems])
        scatter((rowsA, colsA, valsA), gidx, loc)

        consR = np.einsum("q,qbi,qcj->bicj", w, JUs, DVs)
        penR = np.einsum("q,qbi,qcj->bicj", w, JUs, JUs)
        locR = -consR - consR.transpose(2, 3, 0, 1) + gamma * penR
        sidx = np.concatenate([slot * S + space.scalar_index(e) + np.arange(L)
                               for slot in range(2) for e in elems])
        scatter((rowsR, colsR, valsR), sidx, locR)

    A = finalize(sparse.coo_matrix(
        (np.concatenate(valsA), (np.concatenate(rowsA), np.concatenate(colsA))),
        shape=(4 * S, 4 * S)))
    R = finalize(sparse.coo_matrix(
        (np.concatenate(valsR), (np.concatenate(rowsR), np.concatenate(colsR))),
        shape=(2 * S, 2 * S)))
    b1 = finalize(R[:S, :S])
    b2 = finalize(R[S:, :S])
    b3 = finalize(R[S:, S:])
    return b1, b2, b3, A


def assemble_system(space: DGSpace, mu: float = 1.0,
                    alpha: float = DEFAULT_ALPHA) -> SystemMatrices:
    m1, K, m = assemble_mass(space, mu)
    b1, b2, b3, a = assemble_stiffness(space, alpha)
    return SystemMatrices(m1=m1, b1=b1, b2=b2, b3=b3, kfactor=K, m=m, a=a,
                          mu=mu, alpha=alpha)


def build_system(m: sparse.csr_matrix, a: sparse.csr_matrix, dt: float) -> sparse.csr_matrix:
    """Time-step operator M + dt * A; symmetric positive definite for dt > 0.

    Explicit stepping is excluded: the mass operator alone is singular.
    """
    if dt <= 0.0:
        raise ValueError("time step dt must be positive")
    if m.shape != a.shape:
        raise ValueError("M and A dimensions do not match")
    return finalize(m + dt * a)


def functional_vector(space: DGSpace, data: ProblemData, t: float,
                      alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Discrete load vector: volume source, Dirichlet divergence datum and
    Nitsche-consistent Neumann traction terms."""
    mesh = space.mesh
    L = space.local_dim
    f = np.zeros(space.total_dofs)

    for e in range(space.n_elements):
        rule = space.element_rules[e]
        phi = space.basis_values(e, rule.points)
        vals = data.source(rule.points[:, 0], rule.points[:, 1], t)
        for c, (r, d) in enumerate(COMPONENTS):
            sl = slice(space.global_index(c, e), space.global_index(c, e) + L)
            f[sl] += (rule.weights * vals[:, r, d]) @ phi

    for face in mesh.faces:
        if not face.is_boundary:
            continue
        pts = mesh.face_points(face)
        rule = face_quadrature(pts[0], pts[1], space.quad_degree)
        x, y = rule.points[:, 0], rule.points[:, 1]
        e = face.plus_element
        phi = space.basis_values(e, rule.points)
        n = face.normal
        if face.kind == FaceKind.DIRICHLET:
            g = data.dirichlet(x, y, t)
            for c, (r, d) in enumerate(COMPONENTS):
                sl = slice(space.global_index(c, e), space.global_index(c, e) + L)
                f[sl] += (rule.weights * g[:, r] * n[d]) @ phi
        else:
            g = data.neumann(x, y, t, n[0], n[1])
            gamma = penalty(face, alpha, space.degree, mesh)
            grad = space.basis_gradients(e, rule.points)
            for c, (r, d) in enumerate(COMPONENTS):
                sl = slice(space.global_index(c, e), space.global_index(c, e) + L)
                f[sl] += (rule.weights * g[:, r]) @ (gamma * phi * n[d] - grad[:, :, d])
    return f


def assemble_rhs(space: DGSpace, data: ProblemData, t: float,
                 sigma_prev: np.ndarray, dt: float,
                 system: SystemMatrices) -> np.ndarray:
    """One-step right-hand side M sigma_prev + dt * f(t)."""
    f = functional_vector(space, data, t, system.alpha)
    return system.m @ sigma_prev + dt * f


def kron_structure_check(system: SystemMatrices) -> tuple[float, float]:
    """Max deviations |M - K kron M1| and |A - I_2 kron [[B1,B2^T],[B2,B3]]|."""
    kref = sparse.csr_matrix(K_SPEC / system.mu)
    dm = system.m - sparse.kron(kref, system.m1, format="csr")
    block = sparse.bmat([[system.b1, system.b2.T], [system.b2, system.b3]],
                        format="csr")
    da = system.a - sparse.kron(sparse.eye(2), block, format="csr")
    dev_m = float(np.abs(dm.data).max()) if dm.nnz else 0.0
    dev_a = float(np.abs(da.data).max()) if da.nnz else 0.0
    return dev_m, dev_a


def export_matrices(system: SystemMatrices, outdir, dt: float | None = None) -> list[str]:
    """Write the assembled operators in Matrix Market coordinate format.

    Returns the list of written file names.  When dt is given, the
    time-step operator is exported as well.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    named = {"M1": system.m1, "B1": system.b1, "B2": system.b2,
             "B3": system.b3, "M": system.m, "A": system.a}
    if dt is not None:
        named["Astar"] = build_system(system.m, system.a, dt)
    written = []
    for name, mat in named.items():
        path = outdir / f"{name}.mtx"
        mmwrite(str(path), mat.tocoo())
        written.append(path.name)
    return written
