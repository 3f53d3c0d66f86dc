import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sparse

from polystress import (SolverConfig, agglomerate, build_block_jacobi,
                        build_cartesian_mesh, build_deflator, build_space,
                        build_system, cg, classify_boundary, deflated_cg,
                        estimate_condition_number, pcg)
from polystress.assembly import assemble_system
from polystress.kernels import CsrOperator
from polystress.krylov import (BlockFactorizationError, collective_permutation,
                               load_operator, save_operator,
                               write_residual_history)


@pytest.fixture(scope="module")
def small_system(mesh22):
    space = build_space(mesh22, 1)
    system = assemble_system(space, mu=1.0, alpha=10.0)
    astar = build_system(system.m, system.a, 1e-3)
    return space, system, astar


@pytest.fixture(scope="module")
def bench_system():
    """Agglomerated mesh where the dt-robustness examples are exercised."""
    base = classify_boundary(build_cartesian_mesh(8, 8), lambda p: p[0] > 1 - 1e-9)
    mesh = agglomerate(base, 16, rng_seed=3)
    space = build_space(mesh, 3)
    system = assemble_system(space, mu=1.0, alpha=10.0)
    return space, system


# -- cg ------------------------------------------------------------------

def test_cg_identity_one_iteration(rng):
    b = rng.standard_normal(20)
    x, report = cg(sparse.eye(20, format="csr"), b)
    assert report.iterations == 1
    assert report.converged
    assert np.allclose(x, b)


def test_cg_finite_termination():
    a = np.diag([1.0, 2.0, 3.0])
    x, report = cg(a, np.ones(3), SolverConfig(tol=1e-12, maxit=10))
    assert report.iterations <= 3
    assert np.allclose(x, [1.0, 0.5, 1.0 / 3.0], rtol=1e-10)


def test_cg_zero_rhs():
    x, report = cg(np.eye(4), np.zeros(4))
    assert report.iterations == 0
    assert report.converged
    assert np.all(x == 0.0)


def test_cg_maxit_flags_nonconvergence(small_system, rng):
    _, _, astar = small_system
    b = rng.standard_normal(astar.shape[0])
    _, report = cg(astar, b, SolverConfig(tol=1e-12, maxit=3))
    assert not report.converged
    assert report.iterations == 3


def test_cg_matches_dense_solve(small_system, rng):
    _, _, astar = small_system
    b = rng.standard_normal(astar.shape[0])
    x, report = cg(astar, b, SolverConfig(tol=1e-12, maxit=2000))
    ref = np.linalg.solve(astar.toarray(), b)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-7


def test_cg_warm_start(small_system, rng):
    _, _, astar = small_system
    b = rng.standard_normal(astar.shape[0])
    x0 = np.linalg.solve(astar.toarray(), b)
    x, report = cg(astar, b, SolverConfig(tol=1e-8, maxit=100), x0=x0)
    assert report.iterations == 0
    assert report.converged


def test_cg_history_and_export(small_system, rng, tmp_path):
    _, _, astar = small_system
    b = rng.standard_normal(astar.shape[0])
    _, report = cg(astar, b, SolverConfig(tol=1e-10, maxit=2000, record_history=True))
    assert report.history is not None
    assert len(report.history) == report.iterations + 1
    assert report.history[-1] <= 1e-10
    path = tmp_path / "hist.csv"
    write_residual_history(path, report)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,relative_residual"
    assert len(lines) == len(report.history) + 1


def test_cg_energy_error_monotone(rng):
    """CG A-norm error decreases monotonically (oracle: dense solve)."""
    m = rng.standard_normal((25, 25))
    a = m @ m.T + 25 * np.eye(25)
    b = rng.standard_normal(25)
    ref = np.linalg.solve(a, b)
    errs = []
    for k in range(1, 12):
        x, _ = cg(a, b, SolverConfig(tol=1e-15, maxit=k))
        d = x - ref
        errs.append(float(d @ (a @ d)))
    assert all(e1 <= e0 * (1 + 1e-12) for e0, e1 in zip(errs, errs[1:]))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(tol=2.0)
    with pytest.raises(ValueError):
        SolverConfig(maxit=0)


# -- pcg and Block-Jacobi ---------------------------------------------------

def test_pcg_exact_inverse_one_iteration(small_system, rng):
    _, _, astar = small_system
    b = rng.standard_normal(astar.shape[0])
    inv = np.linalg.inv(astar.toarray())
    x, report = pcg(astar, b, lambda r: inv @ r)
    assert report.iterations == 1
    assert np.allclose(astar @ x, b, atol=1e-8 * np.linalg.norm(b))


def test_pcg_identity_equals_cg(small_system, rng):
    _, _, astar = small_system
    b = rng.standard_normal(astar.shape[0])
    cfg = SolverConfig(tol=1e-9, maxit=3000, record_history=True)
    x1, r1 = cg(astar, b, cfg)
    x2, r2 = pcg(astar, b, lambda r: r.copy(), cfg)
    assert r1.iterations == r2.iterations
    assert np.array_equal(x1, x2)
    assert np.array_equal(r1.history, r2.history)


def test_collective_permutation_toy():
    class Toy:
        local_dim, scalar_dofs, n_elements = 1, 2, 2
    perm = collective_permutation(Toy())
    assert perm.tolist() == [0, 2, 4, 6, 1, 3, 5, 7]


def test_block_jacobi_block_counts(small_system):
    space, _, astar = small_system
    bj = build_block_jacobi(astar, space, "component")
    cbj = build_block_jacobi(astar, space, "collective")
    assert bj.nblocks == 4 * space.n_elements
    assert bj.block_size == space.local_dim
    assert cbj.nblocks == space.n_elements
    assert cbj.block_size == 4 * space.local_dim
    with pytest.raises(ValueError):
        build_block_jacobi(astar, space, "banana")


def test_collective_single_element_is_exact():
    mesh = classify_boundary(build_cartesian_mesh(1, 1), lambda p: p[0] > 1 - 1e-9)
    space = build_space(mesh, 2)
    system = assemble_system(space, 1.0, 10.0)
    astar = build_system(system.m, system.a, 1e-4)
    cbj = build_block_jacobi(astar, space, "collective")
    b = np.arange(1.0, astar.shape[0] + 1)
    x, report = pcg(astar, b, cbj)
    assert report.iterations == 1
    assert np.allclose(astar @ x, b, rtol=1e-9)
    est = estimate_condition_number(astar, preconditioner=cbj, tol=1e-8)
    assert est.kappa == pytest.approx(1.0, abs=1e-6)


def test_block_jacobi_apply_properties(small_system, rng):
    _, _, astar = small_system
    space = build_space(build_cartesian_mesh(2, 2), 1)
    for layout in ("component", "collective"):
        bj = build_block_jacobi(astar, space, layout)
        assert np.all(bj.apply(np.zeros(astar.shape[0])) == 0.0)
        r1 = rng.standard_normal(astar.shape[0])
        r2 = rng.standard_normal(astar.shape[0])
        s1 = float(bj.apply(r1) @ r2)
        s2 = float(r1 @ bj.apply(r2))
        assert abs(s1 - s2) <= 1e-12 * abs(s1)


def test_block_jacobi_exact_on_block_diagonal(rng):
    space = build_space(build_cartesian_mesh(2, 2), 1)
    L, ne = space.local_dim, space.n_elements
    n = space.total_dofs
    perm = collective_permutation(space)
    dense = np.zeros((n, n))
    bs = 4 * L
    for e in range(ne):
        m = rng.standard_normal((bs, bs))
        blk = m @ m.T + bs * np.eye(bs)
        idx = perm[e * bs:(e + 1) * bs]
        dense[np.ix_(idx, idx)] = blk
    a = sparse.csr_matrix(dense)
    cbj = build_block_jacobi(a, space, "collective")
    r = rng.standard_normal(n)
    assert np.allclose(cbj.apply(r), np.linalg.solve(dense, r), rtol=1e-10)


def test_block_jacobi_rejects_indefinite(small_system):
    space, _, astar = small_system
    bad = astar - sparse.eye(astar.shape[0]) * 10.0
    with pytest.raises(BlockFactorizationError, match="element"):
        build_block_jacobi(bad, space, "collective")


# -- deflation ----------------------------------------------------------------

def test_deflator_kernel_and_coarse_identity(small_system, rng):
    space, system, _ = small_system
    dt = 1e-3
    defl = build_deflator(system, dt)
    y = rng.standard_normal(space.scalar_dofs)
    assert np.abs(system.m @ defl.v(y)).max() < 1e-12
    ref = (dt / 2.0) * (system.b1 + system.b3)
    diff = defl.coarse_matrix - ref
    assert (np.abs(diff.data).max() if diff.nnz else 0.0) <= 1e-12
    ev = sla.eigvalsh(defl.coarse_matrix.toarray())
    assert ev[0] > 0.0


def test_deflated_cg_coarse_only_rhs(small_system, rng):
    _, system, astar = small_system
    defl = build_deflator(system, 1e-3, astar=astar)
    y = rng.standard_normal(defl.scalar_dofs)
    b = astar @ defl.v(y)
    x, report = deflated_cg(astar, b, defl)
    assert report.iterations <= 1
    assert np.allclose(x, defl.v(y), rtol=1e-9)


def test_deflated_cg_matches_dense_solve(small_system, rng):
    _, system, astar = small_system
    defl = build_deflator(system, 1e-3, astar=astar)
    b = rng.standard_normal(astar.shape[0])
    x, report = deflated_cg(astar, b, defl, SolverConfig(tol=1e-12, maxit=2000))
    ref = np.linalg.solve(astar.toarray(), b)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-7
    assert report.converged


def test_deflated_cg_zero_rhs(small_system):
    _, system, astar = small_system
    defl = build_deflator(system, 1e-3, astar=astar)
    x, report = deflated_cg(astar, np.zeros(astar.shape[0]), defl)
    assert report.iterations == 0 and report.converged
    assert np.all(x == 0.0)


def test_deflated_cg_dt_robust_iterations(bench_system, rng):
    space, system = bench_system
    b = rng.uniform(0.0, 1.0, space.total_dofs)
    counts = []
    for dt in (1e-7, 1e-8):
        astar = build_system(system.m, system.a, dt)
        defl = build_deflator(system, dt, astar=astar)
        _, report = deflated_cg(CsrOperator(astar), b, defl,
                                SolverConfig(tol=1e-8, maxit=5000))
        assert report.converged
        counts.append(report.iterations)
    assert abs(counts[1] - counts[0]) <= 0.10 * counts[0]


def test_deflation_projector_algebra(small_system, rng):
    """Projector identities of the deflation operator (criterion-7 algebra
    at module scale): idempotence, A*-orthogonality, PSD."""
    _, system, astar = small_system
    defl = build_deflator(system, 1e-3, astar=astar)
    n = astar.shape[0]

    def project(u):  # (I - pi) u
        return u - defl.projection_correction(u)

    for _ in range(20):
        u = rng.standard_normal(n)
        w = rng.standard_normal(defl.scalar_dofs)
        once = project(u)
        assert np.linalg.norm(project(once) - once) <= 1e-12 * np.linalg.norm(u)
        ortho = float((astar @ once) @ defl.v(w))
        assert abs(ortho) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(w)
        assert float((astar @ once) @ once) >= -1e-10 * float(u @ u)


def test_deflator_mismatched_operator(small_system):
    _, system, astar = small_system
    defl = build_deflator(system, 1e-3, astar=astar)
    with pytest.raises(ValueError):
        deflated_cg(sparse.eye(8, format="csr"), np.ones(8), defl)


# -- solver equivalence --------------------------------------------------------

def test_all_solvers_agree_with_dense(small_system, rng):
    space, system, astar = small_system
    ref = None
    b = rng.standard_normal(astar.shape[0])
    ref = np.linalg.solve(astar.toarray(), b)
    cfg = SolverConfig(tol=1e-12, maxit=5000)
    defl = build_deflator(system, 1e-3, astar=astar)
    sols = {
        "cg": cg(astar, b, cfg)[0],
        "dcg": deflated_cg(astar, b, defl, cfg)[0],
        "pcg-bj": pcg(astar, b, build_block_jacobi(astar, space, "component"), cfg)[0],
        "pcg-cbj": pcg(astar, b, build_block_jacobi(astar, space, "collective"), cfg)[0],
    }
    for name, x in sols.items():
        rel = np.linalg.norm(x - ref) / np.linalg.norm(ref)
        assert rel < 10 * cfg.tol * 1e4, name  # kappa(A*) ~ 1e4 at dt=1e-3


# -- condition number estimation ------------------------------------------------

def test_condition_number_diagonal():
    a = sparse.diags(np.arange(1.0, 11.0)).tocsr()
    est = estimate_condition_number(a, tol=1e-6)
    assert est.converged
    assert est.kappa == pytest.approx(10.0, rel=0.01)


def test_condition_number_dense_method(small_system):
    _, _, astar = small_system
    est = estimate_condition_number(astar, method="dense")
    ev = sla.eigvalsh(astar.toarray())
    assert est.kappa == pytest.approx(ev[-1] / ev[0], rel=1e-12)


def test_condition_number_vs_dense_oracle(small_system):
    _, system, _ = small_system
    for dt in (1e-6, 1e-8):
        astar = build_system(system.m, system.a, dt)
        est = estimate_condition_number(astar, tol=1e-5)
        ev = sla.eigvalsh(astar.toarray())
        assert est.converged
        assert est.kappa == pytest.approx(ev[-1] / ev[0], rel=1e-3)


def test_condition_number_dt_scaling(small_system):
    _, system, _ = small_system
    ks = [estimate_condition_number(build_system(system.m, system.a, dt), tol=1e-5).kappa
          for dt in (1e-9, 1e-10)]
    assert 8.0 <= ks[1] / ks[0] <= 12.0


def test_preconditioned_condition_number_vs_dense(small_system):
    space, system, astar = small_system
    cbj = build_block_jacobi(astar, space, "collective")
    n = astar.shape[0]
    pmat = np.empty((n, n))
    eye = np.eye(n)
    for i in range(n):
        pmat[:, i] = cbj.apply(eye[:, i])
    ev = sla.eigh(astar.toarray(), np.linalg.inv(pmat), eigvals_only=True)
    est = estimate_condition_number(astar, preconditioner=cbj, tol=1e-6)
    assert est.converged
    assert est.kappa == pytest.approx(ev[-1] / ev[0], rel=1e-4)


def test_preconditioned_plateau(bench_system):
    space, system = bench_system
    ks = []
    for dt in (1e-8, 1e-9):
        astar = build_system(system.m, system.a, dt)
        cbj = build_block_jacobi(astar, space, "collective")
        ks.append(estimate_condition_number(
            CsrOperator(astar), n=astar.shape[0], preconditioner=cbj, tol=1e-3).kappa)
    assert abs(ks[1] - ks[0]) <= 0.05 * ks[0]


def test_condition_number_flags_unconverged(small_system, rng):
    _, _, astar = small_system
    apply_only = CsrOperator(astar).matvec  # bare callable: shift-free path
    est = estimate_condition_number(apply_only, n=astar.shape[0], tol=1e-12, maxit=4)
    assert not est.converged


def test_condition_number_requires_size_for_callable():
    with pytest.raises(ValueError):
        estimate_condition_number(lambda x: x)


# -- operator I/O ---------------------------------------------------------------

def test_operator_round_trip(tmp_path, small_system):
    _, _, astar = small_system
    path = tmp_path / "astar.mtx"
    save_operator(path, astar)
    back = load_operator(path)
    assert np.abs((back - astar).toarray()).max() < 1e-15
