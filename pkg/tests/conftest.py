"""Shared oracles: closed-form problem data and brute-force tensor-grid quadrature.

Nothing here goes through the package's separable machinery or its own
Gauss-Legendre generator; grids come from numpy's ``leggauss``.
"""

import math

import numpy as np
import pytest

PI = math.pi


def amplitudes(label, M, alpha=2.0):
    m = np.arange(1, M + 1, dtype=float)
    if label == "example1":
        return (1 + m) ** -alpha
    if label == "example2":
        return (1 + m) ** -2.0
    return 0.5 * np.exp(-m)


def closed_form(label, M, Y, X, alpha=2.0):
    """a, a_x, u, u_x, u_xx, f at points (Y: n x M, X: n) from the published formulas.

    The load's leading term uses prod_i sin(pi y_i / 2); the printed sum over i
    is inconsistent with the stated exact solution.
    """
    Y = np.atleast_2d(Y)
    amp = amplitudes(label, M, alpha)
    m = np.arange(1, M + 1)
    S = np.prod(np.sin(PI * Y / 2), axis=1)
    u = np.sin(PI * X) * S
    u_x = PI * np.cos(PI * X) * S
    u_xx = -PI**2 * u
    if label == "example1":
        a = 1 + Y @ amp
        a_x = np.zeros_like(X)
        f = a * PI**2 * np.sin(PI * X) * S
    else:
        sinm = np.sin(np.outer(X, m) * PI)
        cosm = np.cos(np.outer(X, m) * PI)
        a = 1 + np.sum(amp * sinm * Y, axis=1)
        a_x = np.sum(amp * m * PI * cosm * Y, axis=1)
        f = PI**2 * np.sin(PI * X) * S
        f = f + PI**2 * np.sum(amp * sinm * Y, axis=1) * np.sin(PI * X) * S
        f = f - PI**2 * np.sum(amp * m * cosm * Y, axis=1) * np.cos(PI * X) * S
    return dict(a=a, a_x=a_x, u=u, u_x=u_x, u_xx=u_xx, f=f)


def tensor_grid(M, n=40):
    """Points (y_1..y_M, x) and weights (density 1/2 per y folded in) of an n^(M+1) Gauss grid."""
    gx, gw = np.polynomial.legendre.leggauss(n)
    axes = [gx] * M + [(gx + 1) / 2]
    wts = [gw / 2] * M + [gw / 2]  # rho = 1/2 on [-1,1]; dx = 1/2 dxi on [0,1]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    w = np.ones(pts.shape[0])
    for t, wt in enumerate(wts):
        shape = [1] * (M + 1)
        shape[t] = n
        w *= np.broadcast_to(wt.reshape(shape), (n,) * (M + 1)).ravel()
    return pts, w


def model_values(model, tables, pts):
    """Psi, Psi_x, Psi_xx of a TNN at points, from its normalized factor evaluations."""
    from tnn_spde.tnn import eval_factors

    x_dim = model.ndim - 1
    prod = np.ones((pts.shape[0], model.p))
    for t in range(x_dim):
        prod *= eval_factors(model, tables, t, pts[:, t])[0]
    fx = eval_factors(model, tables, x_dim, pts[:, x_dim], 2)
    return [(prod * f) @ model.c for f in fx]


def dense_losses(model, tables, label, M, n=40):
    pts, w = tensor_grid(M, n)
    psi, psi_x, psi_xx = model_values(model, tables, pts)
    cf = closed_form(label, M, pts[:, :M], pts[:, M])
    weak = np.sum(w * (0.5 * cf["a"] * psi_x**2 - cf["f"] * psi))
    strong = np.sum(w * (cf["a_x"] * psi_x + cf["a"] * psi_xx + cf["f"]) ** 2)
    return float(weak), float(strong)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
