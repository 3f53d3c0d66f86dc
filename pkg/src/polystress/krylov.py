"""Krylov solvers for the time-step operator: CG, deflated CG with kernel
deflation, Block-Jacobi preconditioning (component-wise and collective) and
Lanczos condition-number estimation.

The deflation space is the kernel of the deviatoric mass operator, spanned
by v kron I with v = (e1 + e4)/sqrt(2): the trace direction of the tensor
components.  The coarse operator V^T A* V then equals (dt/2)(B1 + B3)
exactly, a Laplacian-type matrix factorised once and reused.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sparse
from scipy.io import mmread, mmwrite
from scipy.sparse.linalg import splu

from .assembly import SystemMatrices, build_system
from .dg_space import DGSpace
from .kernels import BlockDiagSolver, CsrOperator


class BlockFactorizationError(RuntimeError):
    """A diagonal block failed its SPD factorisation."""


@dataclass
class SolverConfig:
    """tol is a relative residual: true residual for cg/deflated cg,
    preconditioned residual for pcg."""

    tol: float = 1e-8
    maxit: int = 10000
    record_history: bool = False

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must be in (0, 1)")
        if self.maxit < 1:
            raise ValueError("maxit must be >= 1")


@dataclass
class SolverReport:
    iterations: int
    final_residual: float
    converged: bool
    history: np.ndarray | None = None
    wall_time: float = 0.0
    true_residual: float | None = None


def _as_apply(op):
    """Accept a callable, a CsrOperator or any scipy sparse matrix."""
    if callable(op) and not sparse.issparse(op) and not isinstance(op, np.ndarray):
        return op
    if isinstance(op, np.ndarray):
        return lambda x: op @ x
    return CsrOperator(op).matvec


def _as_precond(precond):
    if precond is None:
        return None
    if isinstance(precond, BlockJacobi):
        return precond.apply
    if callable(precond) and not sparse.issparse(precond) and not isinstance(precond, np.ndarray):
        return precond
    if isinstance(precond, np.ndarray):
        return lambda r: precond @ r
    op = CsrOperator(precond)
    return op.matvec


def _pcg_core(apply_a, b, apply_m, config, x0):
    """Shared CG / PCG loop.

    Without a preconditioner this is plain CG monitored on the relative
    residual; with one, the relative preconditioned residual sqrt(r.z) is
    monitored.  The recursively updated residual is the convergence
    criterion (at condition numbers ~1/dt the explicitly recomputed
    residual saturates near eps * kappa and cannot reach tight tolerances);
    the explicit residual is still recomputed once and reported.
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    history = [] if config.record_history else None

    def metric_of(r, z):
        return float(np.sqrt(r @ z))

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - apply_a(x)
    z = apply_m(r) if apply_m is not None else r
    denom_r = b.copy()
    denom_z = apply_m(denom_r) if apply_m is not None else denom_r
    denom = metric_of(denom_r, denom_z)
    if denom == 0.0:
        return np.zeros_like(b), SolverReport(0, 0.0, True,
                                              history=np.array([]) if history is not None else None,
                                              wall_time=time.perf_counter() - start,
                                              true_residual=0.0)

    rz = float(r @ z)
    rel = metric_of(r, z) / denom
    if history is not None:
        history.append(rel)
    iterations = 0
    converged = rel <= config.tol
    p = z.copy()
    while not converged and iterations < config.maxit:
        q = apply_a(p)
        pq = float(p @ q)
        if pq <= 0.0:
            break  # loss of positive definiteness; report non-convergence
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = apply_m(r) if apply_m is not None else r
        rz_new = float(r @ z)
        rel = metric_of(r, z) / denom
        iterations += 1
        if history is not None:
            history.append(rel)
        if rel <= config.tol:
            converged = True
            break
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p

    true_rel = float(np.linalg.norm(b - apply_a(x)) / np.linalg.norm(b))
    return x, SolverReport(
        iterations=iterations,
        final_residual=rel,
        converged=converged,
        history=np.asarray(history) if history is not None else None,
        wall_time=time.perf_counter() - start,
        true_residual=true_rel,
    )


def cg(operator, b, config: SolverConfig | None = None, x0=None):
    """Conjugate gradients on an SPD (or consistent PSD) operator."""
    config = config or SolverConfig()
    return _pcg_core(_as_apply(operator), b, None, config, x0)


def pcg(operator, b, preconditioner, config: SolverConfig | None = None, x0=None):
    """CG preconditioned with an SPD apply; with the identity preconditioner
    the iterates coincide with plain cg."""
    config = config or SolverConfig()
    return _pcg_core(_as_apply(operator), b, _as_precond(preconditioner), config, x0)


# -- Block-Jacobi -----------------------------------------------------------

LAYOUT_COMPONENT = "component"
LAYOUT_COLLECTIVE = "collective"


@dataclass
class BlockJacobi:
    """Block-diagonal preconditioner of the time-step operator.

    Component-wise blocks have size local_dim, one per (component, element)
    pair; collective blocks have size 4 * local_dim, grouping the four
    tensor components of one element under the permutation
    (c, e, i) -> (e, c, i).
    """

    layout: str
    block_size: int
    nblocks: int
    solver: BlockDiagSolver
    perm: np.ndarray | None = None

    def apply(self, r: np.ndarray) -> np.ndarray:
        return self.solver.apply(r)

    __call__ = apply


def collective_permutation(space: DGSpace) -> np.ndarray:
    """perm[new] = old dof index grouping the four components per element."""
    L, S, ne = space.local_dim, space.scalar_dofs, space.n_elements
    c = np.tile(np.repeat(np.arange(4), L), ne)
    e = np.repeat(np.arange(ne), 4 * L)
    i = np.tile(np.arange(L), 4 * ne)
    return c * S + e * L + i


def _extract_diagonal_blocks(A: sparse.csr_matrix, bs: int) -> np.ndarray:
    n = A.shape[0]
    nb = n // bs
    coo = A.tocoo()
    mask = (coo.row // bs) == (coo.col // bs)
    blocks = np.zeros((nb, bs, bs))
    blocks[coo.row[mask] // bs, coo.row[mask] % bs, coo.col[mask] % bs] = coo.data[mask]
    return blocks


def apply_block_jacobi(preconditioner: BlockJacobi, r: np.ndarray) -> np.ndarray:
    """Solve the block-diagonal system of the preconditioner for r."""
    return preconditioner.apply(r)


def block_dominance(astar, space: DGSpace, layout: str = LAYOUT_COLLECTIVE) -> np.ndarray:
    """Per-block row-sum dominance indicator: off-block over in-block
    absolute entry mass for each diagonal block under the layout.

    Small values mean the permuted operator is close to block diagonal; for
    the collective layout the indicator tends to zero with dt because the
    deviatoric mass operator couples dofs within one element only.
    """
    astar = sparse.csr_matrix(astar)
    if layout == LAYOUT_COMPONENT:
        bs = space.local_dim
        permuted = astar
    elif layout == LAYOUT_COLLECTIVE:
        bs = 4 * space.local_dim
        perm = collective_permutation(space)
        permuted = astar[perm, :][:, perm]
    else:
        raise ValueError(f"unknown Block-Jacobi layout: {layout!r}")
    coo = permuted.tocoo()
    nb = astar.shape[0] // bs
    rowblk, colblk = coo.row // bs, coo.col // bs
    inblock = np.zeros(nb)
    offblock = np.zeros(nb)
    np.add.at(inblock, rowblk[rowblk == colblk], np.abs(coo.data[rowblk == colblk]))
    np.add.at(offblock, rowblk[rowblk != colblk], np.abs(coo.data[rowblk != colblk]))
    return offblock / inblock


def build_block_jacobi(astar, space: DGSpace, layout: str = LAYOUT_COLLECTIVE,
                       backend: str | None = None) -> BlockJacobi:
    """Extract and factorise the diagonal blocks of A* under the layout."""
    astar = sparse.csr_matrix(astar)
    L, ne = space.local_dim, space.n_elements
    if layout == LAYOUT_COMPONENT:
        bs, perm = L, None
        permuted = astar
    elif layout == LAYOUT_COLLECTIVE:
        bs = 4 * L
        perm = collective_permutation(space)
        permuted = astar[perm, :][:, perm]
    else:
        raise ValueError(f"unknown Block-Jacobi layout: {layout!r}")

    blocks = _extract_diagonal_blocks(permuted.tocsr(), bs)
    inv = np.empty_like(blocks)
    eye = np.eye(bs)
    for k, blk in enumerate(blocks):
        elem = k if layout == LAYOUT_COLLECTIVE else k % ne
        try:
            cho = scipy.linalg.cho_factor(blk, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise BlockFactorizationError(
                f"{layout} block of element {elem} is not SPD") from exc
        inv_k = scipy.linalg.cho_solve(cho, eye)
        inv[k] = 0.5 * (inv_k + inv_k.T)
    solver = BlockDiagSolver(inv, perm=perm, backend=backend)
    return BlockJacobi(layout=layout, block_size=bs, nblocks=len(blocks),
                       solver=solver, perm=perm)


# -- deflation --------------------------------------------------------------

@dataclass
class Deflator:
    """ker(M) deflation data: implicit basis V = v kron I with
    v = (e1 + e4)/sqrt(2), coarse operator W = V^T A* V and its
    factorisation."""

    astar: sparse.csr_matrix
    coarse_matrix: sparse.csr_matrix
    _wsolve: object
    _avt: sparse.csr_matrix
    scalar_dofs: int

    @property
    def n(self) -> int:
        return self.astar.shape[0]

    def vt(self, x: np.ndarray) -> np.ndarray:
        """V^T x: gather the two trace components."""
        S = self.scalar_dofs
        return (x[:S] + x[3 * S:]) / np.sqrt(2.0)

    def v(self, y: np.ndarray) -> np.ndarray:
        """V y: scatter a coarse vector into the trace directions."""
        S = self.scalar_dofs
        out = np.zeros(4 * S)
        out[:S] = y / np.sqrt(2.0)
        out[3 * S:] = y / np.sqrt(2.0)
        return out

    def coarse_solve(self, y: np.ndarray) -> np.ndarray:
        return self._wsolve(y)

    def coarse_component(self, b: np.ndarray) -> np.ndarray:
        """V W^-1 V^T b: the part of the solution carried by the deflation
        space."""
        return self.v(self._wsolve(self.vt(b)))

    def projection_correction(self, r: np.ndarray) -> np.ndarray:
        """V W^-1 V^T A* r, the deflation-space component removed from a
        search direction; costs one coarse solve."""
        return self.v(self._wsolve(self._avt @ r))


def build_deflator(system: SystemMatrices, dt: float, astar=None) -> Deflator:
    """Assemble and factorise the coarse operator for ker(M) deflation."""
    if astar is None:
        astar = build_system(system.m, system.a, dt)
    astar = sparse.csr_matrix(astar)
    S = astar.shape[0] // 4
    csc = astar.tocsc()
    av = (csc[:, :S] + csc[:, 3 * S:]) / np.sqrt(2.0)
    w = sparse.csc_matrix((av[:S, :] + av[3 * S:, :]) / np.sqrt(2.0))
    try:
        lu = splu(w)
    except RuntimeError as exc:
        raise BlockFactorizationError(
            "coarse deflation operator failed to factorise (is alpha > 0?)") from exc
    return Deflator(astar=astar, coarse_matrix=w.tocsr(), _wsolve=lu.solve,
                    _avt=av.T.tocsr(), scalar_dofs=S)


def deflated_cg(astar, b, deflator: Deflator, config: SolverConfig | None = None,
                x0=None):
    """CG on the deflated system; the coarse component is recovered through
    the one-time factorisation of W.  Exactly one W-solve per iteration."""
    config = config or SolverConfig()
    if sparse.issparse(astar) and astar.shape != deflator.astar.shape:
        raise ValueError("deflator was built from an operator of different size")
    apply_a = _as_apply(astar)
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    history = [] if config.record_history else None

    denom = float(np.linalg.norm(b))
    if denom == 0.0:
        return np.zeros_like(b), SolverReport(0, 0.0, True,
                                              history=np.array([]) if history is not None else None,
                                              wall_time=time.perf_counter() - start,
                                              true_residual=0.0)

    if x0 is None:
        x = deflator.coarse_component(b)
    else:
        x = np.array(x0, dtype=float)
        x += deflator.coarse_component(b - apply_a(x))
    r = b - apply_a(x)
    rel = float(np.linalg.norm(r)) / denom
    if history is not None:
        history.append(rel)
    iterations = 0
    converged = rel <= config.tol
    rr = float(r @ r)
    if not converged:
        p = r - deflator.projection_correction(r)
    while not converged and iterations < config.maxit:
        q = apply_a(p)
        pq = float(p @ q)
        if pq <= 0.0:
            break
        alpha = rr / pq
        x += alpha * p
        r -= alpha * q
        rr_new = float(r @ r)
        rel = np.sqrt(rr_new) / denom
        iterations += 1
        if history is not None:
            history.append(rel)
        if rel <= config.tol:
            converged = True
            break
        beta = rr_new / rr
        rr = rr_new
        p = r + beta * p - deflator.projection_correction(r)

    true_rel = float(np.linalg.norm(b - apply_a(x)) / denom)
    return x, SolverReport(
        iterations=iterations,
        final_residual=rel,
        converged=converged,
        history=np.asarray(history) if history is not None else None,
        wall_time=time.perf_counter() - start,
        true_residual=true_rel,
    )


# -- condition-number estimation ---------------------------------------------

@dataclass
class CondEstimate:
    kappa: float
    lam_min: float
    lam_max: float
    iterations: int
    converged: bool


def _lanczos_extremes(apply_a, n, maxit, tol, seed, apply_m=None, track="both"):
    """Symmetric Lanczos with full reorthogonalisation.

    With apply_m the recurrence runs in the preconditioner inner product and
    the Ritz values approximate the spectrum of P A.  Convergence of the
    tracked extreme Ritz values is certified by their residual bound
    beta_k * |last eigenvector entry| <= tol * |theta|.
    """
    maxit = min(maxit, n)
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(n)

    alphas = np.zeros(maxit)
    betas = np.zeros(maxit)
    Q = np.zeros((maxit + 1, n))
    U = np.zeros((maxit + 1, n)) if apply_m is not None else Q

    if apply_m is not None:
        z = apply_m(r)
        beta = np.sqrt(float(r @ z))
    else:
        z = r
        beta = float(np.linalg.norm(r))
    Q[0] = r / beta
    if apply_m is not None:
        U[0] = z / beta

    lam_min = lam_max = np.nan
    converged = False
    k = 0
    while k < maxit:
        w = apply_a(U[k])
        alphas[k] = float(U[k] @ w)
        w -= alphas[k] * Q[k]
        if k > 0:
            w -= betas[k - 1] * Q[k - 1]
        # full reorthogonalisation; with apply_m the U rows make this the
        # preconditioner inner product (U Q^T = I)
        w -= Q[:k + 1].T @ (U[:k + 1] @ w)
        if apply_m is not None:
            z = apply_m(w)
            b2 = float(w @ z)
            beta_k = np.sqrt(b2) if b2 > 0.0 else 0.0
        else:
            beta_k = float(np.linalg.norm(w))
        k += 1
        if beta_k == 0.0:  # exact invariant subspace reached
            ev = scipy.linalg.eigvalsh_tridiagonal(alphas[:k], betas[:k - 1])
            lam_min, lam_max = float(ev[0]), float(ev[-1])
            converged = True
            break
        if k % 5 == 0 or k == maxit:
            ev, vec = scipy.linalg.eigh_tridiagonal(alphas[:k], betas[:k - 1])
            lam_min, lam_max = float(ev[0]), float(ev[-1])
            res_min = beta_k * abs(vec[-1, 0])
            res_max = beta_k * abs(vec[-1, -1])
            ok_max = res_max <= tol * abs(lam_max)
            ok_min = res_min <= tol * max(abs(lam_min), 1e-300)
            if (track == "max" and ok_max) or (track == "both" and ok_max and ok_min):
                converged = True
                break
        betas[k - 1] = beta_k
        Q[k] = w / beta_k
        if apply_m is not None:
            U[k] = z / beta_k

    return lam_min, lam_max, k, converged


def estimate_condition_number(operator, n: int | None = None, preconditioner=None,
                              tol: float = 1e-3, maxit: int = 800,
                              seed: int = 0, method: str = "auto") -> CondEstimate:
    """Condition-number estimate from extreme eigenvalues.

    Preconditioned operators use a two-sequence Lanczos recurrence in the
    preconditioner inner product.  For a plain sparse SPD matrix the small
    end of the spectrum is found by Lanczos on the inverse through a
    one-time sparse factorisation (the shift-free recurrence stagnates on
    the near-kernel cluster of the time-step operator), the large end by
    the forward recurrence.  ``method="dense"`` computes both ends exactly
    (intended for n <= 2000).  Estimates whose extreme Ritz values fail
    their residual certificate within maxit are flagged converged=False.
    """
    if n is None:
        if hasattr(operator, "shape"):
            n = operator.shape[0]
        else:
            raise ValueError("n is required for a matrix-free operator")

    matrix = None
    if sparse.issparse(operator):
        matrix = operator
    elif isinstance(operator, CsrOperator):
        matrix = operator.matrix
    elif isinstance(operator, np.ndarray):
        matrix = sparse.csr_matrix(operator)

    if method == "dense":
        if matrix is None:
            raise ValueError("dense estimation needs an explicit matrix")
        ev = scipy.linalg.eigvalsh(matrix.toarray())
        return CondEstimate(kappa=float(ev[-1] / ev[0]), lam_min=float(ev[0]),
                            lam_max=float(ev[-1]), iterations=0, converged=True)
    if method not in ("auto", "lanczos"):
        raise ValueError(f"unknown estimation method {method!r}")

    apply_a = _as_apply(operator)
    apply_m = _as_precond(preconditioner)

    if apply_m is not None:
        lam_min, lam_max, k, converged = _lanczos_extremes(
            apply_a, n, maxit, tol, seed, apply_m=apply_m, track="both")
    elif matrix is not None:
        _, lam_max, k1, conv1 = _lanczos_extremes(apply_a, n, maxit, tol, seed,
                                                  track="max")
        lu = splu(matrix.tocsc())
        _, inv_max, k2, conv2 = _lanczos_extremes(lu.solve, n, maxit, tol, seed,
                                                  track="max")
        lam_min, k, converged = 1.0 / inv_max, k1 + k2, conv1 and conv2
    else:
        lam_min, lam_max, k, converged = _lanczos_extremes(
            apply_a, n, maxit, tol, seed, track="both")

    kappa = lam_max / lam_min if lam_min > 0 else np.inf
    return CondEstimate(kappa=float(kappa), lam_min=float(lam_min),
                        lam_max=float(lam_max), iterations=k, converged=converged)


# -- operator and history I/O -------------------------------------------------

def save_operator(path, matrix) -> None:
    """Matrix Market coordinate export."""
    mmwrite(str(path), sparse.coo_matrix(matrix))


def load_operator(path) -> sparse.csr_matrix:
    return sparse.csr_matrix(mmread(str(path)))


def write_residual_history(path, report: SolverReport) -> None:
    """CSV export of a recorded residual history (iteration, residual)."""
    if report.history is None:
        raise ValueError("solver was run without record_history")
    with open(path, "w") as fh:
        fh.write("iteration,relative_residual\n")
        for i, res in enumerate(report.history):
            fh.write(f"{i},{res:.16e}\n")
