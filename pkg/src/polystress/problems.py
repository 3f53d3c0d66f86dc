"""Problem data for the pseudo-stress formulation, and manufactured solutions.

The unknown is the pseudo-stress tensor sigma = mu grad(u) - p I.  Boundary
data prescribe the row-wise divergence of sigma on the Dirichlet part and
the traction sigma.n on the Neumann part.  Manufactured solutions are
derived symbolically from a sympy expression for sigma(x, y, t).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

X, Y, T = sp.symbols("x y t")


@dataclass
class ProblemData:
    """Callable data of the evolution problem.

    source(x, y, t) -> (npts, 2, 2): tensor source term
    dirichlet(x, y, t) -> (npts, 2): prescribed divergence on the Dirichlet boundary
    neumann(x, y, t, nx, ny) -> (npts, 2): prescribed traction on the Neumann boundary
    sigma0(x, y) -> (npts, 2, 2): initial pseudo-stress field
    mu: viscosity (> 0)
    """

    source: callable
    dirichlet: callable
    neumann: callable
    sigma0: callable
    mu: float = 1.0


def zero_data(mu: float = 1.0) -> ProblemData:
    def tensor(x, y, t=None):
        return np.zeros((np.size(x), 2, 2))

    def vector(x, y, t):
        return np.zeros((np.size(x), 2))

    def traction(x, y, t, nx, ny):
        return np.zeros((np.size(x), 2))

    return ProblemData(source=tensor, dirichlet=vector, neumann=traction,
                       sigma0=lambda x, y: tensor(x, y), mu=mu)


def _lambdify_scalar(expr):
    f = sp.lambdify((X, Y, T), expr, modules="numpy")

    def g(x, y, t):
        out = f(np.asarray(x, dtype=float), np.asarray(y, dtype=float), t)
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x))

    return g


def _lambdify_tensor(mat):
    comps = [[_lambdify_scalar(mat[r, c]) for c in range(2)] for r in range(2)]

    def g(x, y, t):
        out = np.empty((np.size(x), 2, 2))
        for r in range(2):
            for c in range(2):
                out[:, r, c] = comps[r][c](x, y, t)
        return out

    return g


def _lambdify_vector(vec):
    comps = [_lambdify_scalar(vec[r]) for r in range(2)]

    def g(x, y, t):
        out = np.empty((np.size(x), 2))
        for r in range(2):
            out[:, r] = comps[r](x, y, t)
        return out

    return g


@dataclass
class ManufacturedSolution:
    """Exact solution plus the problem data it manufactures."""

    name: str
    data: ProblemData
    sigma: callable        # (x, y, t) -> (npts, 2, 2)
    div_sigma: callable    # (x, y, t) -> (npts, 2)
    sigma_expr: sp.Matrix


def manufacture(sigma_expr: sp.Matrix, mu: float = 1.0, name: str = "custom") -> ManufacturedSolution:
    """Derive source and boundary data from an exact pseudo-stress tensor.

    Given sigma(x, y, t) as a 2x2 sympy Matrix, the source is
    mu^-1 d/dt dev(sigma) - grad(div sigma), the Dirichlet datum is
    div sigma, the traction datum is sigma.n, and the initial field is
    sigma at t = 0.
    """
    sigma_expr = sp.Matrix(sigma_expr)
    dev = sigma_expr - sp.Rational(1, 2) * sigma_expr.trace() * sp.eye(2)
    div = sp.Matrix([sigma_expr[r, 0].diff(X) + sigma_expr[r, 1].diff(Y)
                     for r in range(2)])
    grad_div = sp.Matrix([[div[r].diff(X), div[r].diff(Y)] for r in range(2)])
    source_expr = dev.diff(T) / mu - grad_div

    sigma_fun = _lambdify_tensor(sigma_expr)
    div_fun = _lambdify_vector(div)
    source_fun = _lambdify_tensor(source_expr)

    def neumann(x, y, t, nx, ny):
        vals = sigma_fun(x, y, t)
        n = np.column_stack([np.broadcast_to(nx, np.shape(x)),
                             np.broadcast_to(ny, np.shape(x))])
        return np.einsum("qrc,qc->qr", vals, n)

    data = ProblemData(
        source=source_fun,
        dirichlet=div_fun,
        neumann=neumann,
        sigma0=lambda x, y: sigma_fun(x, y, 0.0),
        mu=mu,
    )
    return ManufacturedSolution(name, data, sigma_fun, div_fun, sigma_expr)


def trig_solution(mu: float = 1.0) -> ManufacturedSolution:
    """Smooth non-polynomial field for spatial convergence studies."""
    g = 1 + T / 2
    expr = g * sp.Matrix([
        [sp.sin(sp.pi * X) * sp.cos(sp.pi * Y), X**2 * Y + sp.sin(sp.pi * Y)],
        [sp.cos(sp.pi * X) * sp.sin(sp.pi * Y), X * Y**2 + sp.cos(sp.pi * X)],
    ])
    return manufacture(expr, mu=mu, name="trig")


def linear_in_space_solution(mu: float = 1.0) -> ManufacturedSolution:
    """Degree-1 polynomial in space with an exponential time factor; the
    spatial discretisation reproduces it exactly, isolating the time error."""
    expr = sp.exp(T) * sp.Matrix([
        [1 + 2 * X - Y, X + Y],
        [X - Y, 1 - X + 2 * Y],
    ])
    return manufacture(expr, mu=mu, name="linear_in_space")


def steady_polynomial_solution(degree: int, mu: float = 1.0) -> ManufacturedSolution:
    """Time-independent polynomial field of the given total degree; the
    discrete evolution keeps its projection fixed up to solver tolerance."""
    if degree == 1:
        base = sp.Matrix([[1 + X, X - Y], [2 * Y, 1 - X + Y]])
    else:
        base = sp.Matrix([
            [1 + X * Y, X**2 - Y],
            [Y**2 + X, X**2 - Y**2],
        ])
    return manufacture(base, mu=mu, name=f"steady_p{degree}")


NAMED_SOLUTIONS = {
    "trig": trig_solution,
    "linear_in_space": linear_in_space_solution,
}
