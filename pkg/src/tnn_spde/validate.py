"""Self-checks behind ``tnn-spde validate``: quadrature, jets, oracles, gradients, invariants.

Each check returns a :class:`CheckResult`; ``run_suites`` runs a selection and
never raises for a failed check, only for broken inputs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .diffnet import NetArchitecture, backward_params, forward_jet, init_subnetwork
from .loss import assemble, loss_gradient_check
from .metrics import error_report
from .problem import make_problem, ellipticity_lower_bound
from .quad import Interval, composite_rule, gauss_legendre_rule, integrate
from .tnn import DimSpec, TNNModel, build_factors, eval_factors, model_for_problem

PI = math.pi


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.suite}/{self.name}: {self.value:.3e} (tol {self.tolerance:.1e}, {self.seconds:.2f}s)"


def _check(suite, name, value, tol, t0):
    value = float(value)
    return CheckResult(suite, name, value, tol, bool(np.isfinite(value) and value <= tol), time.perf_counter() - t0)


def desk_rules(spec, n_sub=50, n_pts=8):
    return [composite_rule(I, n_sub, n_pts) for I in spec.domains]


def exact_solution_model(spec) -> TNNModel:
    """Rank-one model equal to sin(pi x) prod_m sin(pi y_m / 2), without boundary factors.

    Each subnetwork is one sine unit with weight pi/2 (parametric) or pi (spatial)
    and a unit linear readout; after normalization the factors are sin(pi y/2)
    and sqrt(2) sin(pi x), so c = 1/sqrt(2).
    """
    arch = NetArchitecture(hidden_layers=1, width=1, p=1)
    dims = [DimSpec(spec.role(t), spec.domains[t], False, arch) for t in range(spec.ndim)]
    model = TNNModel(dims)
    for t, net in enumerate(model.subnets):
        net.weights[0][...] = PI / 2 if spec.role(t) == "parametric" else PI
        net.weights[1][...] = 1.0
        net.biases[0][...] = 0.0
        net.biases[1][...] = 0.0
    model.c[...] = 1.0 / math.sqrt(2.0)
    return model


def dense_loss(model, spec, rules, form, n=40):
    """Loss by brute-force tensor-product Gauss quadrature over all dimensions.

    Factor normalization uses the norms from ``rules`` (the model's definition);
    the integral itself uses an ``n``-point rule per dimension. Only sensible for
    small ``spec.ndim``.
    """
    tables = build_factors(model, rules, [2 if spec.role(t) == "spatial" else 0 for t in range(spec.ndim)])
    base_x, base_w = gauss_legendre_rule(n)
    axes, wts = [], []
    for I in spec.domains:
        axes.append(I.lo + (base_x + 1.0) * I.length / 2)
        wts.append(base_w * I.length / 2)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    w = np.ones(pts.shape[0])
    for t in range(spec.ndim):
        w *= _axis_values(wts[t], t, spec.ndim, n) * spec.density[t](pts[:, t])

    x_dim = spec.M  # d = 1
    prod0 = np.ones((pts.shape[0], model.p))
    for t in range(spec.ndim):
        if t != x_dim:
            prod0 *= eval_factors(model, tables, t, pts[:, t])[0]
    fx = eval_factors(model, tables, x_dim, pts[:, x_dim], 2)
    psi = (prod0 * fx[0]) @ model.c
    psi_x = (prod0 * fx[1]) @ model.c
    psi_xx = (prod0 * fx[2]) @ model.c
    a = spec.diffusion(pts)
    a_x = spec.diffusion_grad[0](pts)
    f = spec.load(pts)
    if form == "weak":
        return float(np.sum(w * (0.5 * a * psi_x**2 - f * psi)))
    return float(np.sum(w * (a_x * psi_x + a * psi_xx + f) ** 2))


def _axis_values(values, t, ndim, n):
    shape = [1] * ndim
    shape[t] = n
    return np.broadcast_to(np.reshape(values, shape), (n,) * ndim).ravel()


def pde_identity_residual(spec, n_points=1000, seed=0) -> float:
    """max |a u_xx + a_x u_x + f| over random interior points."""
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(I.lo, I.hi, n_points) for I in spec.domains])
    x_dim = spec.M
    u_x = spec.exact.partial(x_dim)
    u_xx = u_x.partial(x_dim)
    res = spec.diffusion(pts) * u_xx(pts) + spec.diffusion_grad[0](pts) * u_x(pts) + spec.load(pts)
    return float(np.max(np.abs(res)))


# suites

def suite_quadrature():
    out = []
    t0 = time.perf_counter()
    r = composite_rule(Interval(0.0, 1.0), 200, 16)
    out.append(_check("quadrature", "sin(pi x) on 200x16", abs(integrate(r, np.sin(PI * r.nodes)) - 2 / PI), 1e-14, t0))
    t0 = time.perf_counter()
    r = composite_rule(Interval(0.0, 1.0), 1, 16)
    out.append(_check("quadrature", "x^31 single panel (rel)", abs(integrate(r, r.nodes**31) * 32 - 1.0), 1e-13, t0))
    t0 = time.perf_counter()
    worst = 0.0
    for n_pts in (1, 2, 5, 8, 16):
        for n_sub in (1, 3):
            r = composite_rule(Interval(-0.5, 2.0), n_sub, n_pts)
            for k in range(2 * n_pts):
                exact = (2.0 ** (k + 1) - (-0.5) ** (k + 1)) / (k + 1)
                worst = max(worst, abs(integrate(r, r.nodes**k) - exact) / max(abs(exact), 1e-300))
    out.append(_check("quadrature", "monomial exactness (rel)", worst, 1e-13, t0))
    return out


def suite_jets(seed=0):
    t0 = time.perf_counter()
    net = init_subnetwork(NetArchitecture(3, 16, 4), seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, 7)
    jet = forward_jet(net, x, 2)
    h = 1e-4
    vp, vm = forward_jet(net, x + h).value, forward_jet(net, x - h).value
    d1 = (vp - vm) / (2 * h)
    d2 = (vp - 2 * jet.value + vm) / h**2
    dev1 = np.max(np.abs(d1 - jet.d1)) / np.max(np.abs(jet.d1))
    dev2 = np.max(np.abs(d2 - jet.d2)) / np.max(np.abs(jet.d2))
    out = [_check("jets", "d1 vs finite differences", dev1, 1e-5, t0),
           _check("jets", "d2 vs finite differences", dev2, 1e-5, t0)]

    t0 = time.perf_counter()
    adj = [rng.standard_normal(jet.value.shape) for _ in range(3)]
    g = backward_params(net, x, adj, jet)
    idx = rng.choice(net.params.size, 50, replace=False)
    worst = 0.0
    step = 1e-6
    for i in idx:
        old = net.params[i]
        vals = []
        for s in (step, -step):
            net.params[i] = old + s
            j = forward_jet(net, x, 2)
            vals.append(sum(float(np.sum(a * j[k])) for k, a in enumerate(adj)))
        net.params[i] = old
        fd = (vals[0] - vals[1]) / (2 * step)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-3 * np.max(np.abs(g))))
    out.append(_check("jets", "parameter gradient vs finite differences", worst, 1e-6, t0))
    return out


def suite_oracle(seed=3):
    out = []
    for label in ("example1", "example2"):
        spec = make_problem(label, 2)
        rules = desk_rules(spec, 10, 8)
        model = model_for_problem(spec, NetArchitecture(2, 10, 3), seed)
        for form in ("weak", "strong"):
            t0 = time.perf_counter()
            val = assemble(model, spec, rules, form, need_grad=False).value
            ref = dense_loss(model, spec, rules, form)
            out.append(_check("oracle", f"{label} {form} vs dense 40^3 grid (rel)", abs(val - ref) / abs(ref), 1e-10, t0))
    return out


def suite_gradient(seed=1):
    out = []
    spec = make_problem("example1", 2)
    rules = desk_rules(spec, 10, 8)
    model = model_for_problem(spec, NetArchitecture(2, 10, 3), seed)
    for form, tol in (("weak", 1e-6), ("strong", 1e-5)):
        t0 = time.perf_counter()
        dev = loss_gradient_check(model, spec, rules, form, n_probes=50, seed=seed)
        out.append(_check("gradient", f"{form} form, 50 probes", dev, tol, t0))
    return out


def suite_minimum():
    out = []
    for M in (1, 2, 5):
        spec = make_problem("example1", M)
        rules = desk_rules(spec)
        model = exact_solution_model(spec)
        t0 = time.perf_counter()
        weak = assemble(model, spec, rules, "weak", need_grad=False).value
        out.append(_check("minimum", f"weak at truth, M={M}", abs(weak + PI**2 / 4 * 2.0**-M), 1e-9, t0))
        t0 = time.perf_counter()
        strong = assemble(model, spec, rules, "strong", need_grad=False).value
        out.append(_check("minimum", f"strong at truth, M={M}", strong, 1e-12, t0))
    return out


def suite_problem():
    out = []
    for label in ("example1", "example2", "example3"):
        t0 = time.perf_counter()
        spec = make_problem(label, 10)
        out.append(_check("problem", f"{label} PDE identity, 1000 points", pde_identity_residual(spec), 1e-10, t0))
    t0 = time.perf_counter()
    lb = ellipticity_lower_bound(make_problem("example1", 10))
    out.append(_check("problem", "example1 M=10 ellipticity bound vs 0.441968", abs(lb - 0.441968), 1e-5, t0))
    return out


def suite_metrics():
    out = []
    spec = make_problem("example1", 2)
    rules = desk_rules(spec)
    model = exact_solution_model(spec)
    t0 = time.perf_counter()
    rep = error_report(model, spec, rules)
    out.append(_check("metrics", "e_l2 at truth", rep.e_l2, 1e-9, t0))
    out.append(_check("metrics", "e_h1 at truth", rep.e_h1, 1e-9, t0))
    t0 = time.perf_counter()
    trial = model_for_problem(spec, NetArchitecture(2, 10, 3), 5)
    r1 = error_report(trial, spec, rules)
    trial.c[...] *= 10.0
    r2 = error_report(trial, spec, rules)
    dev = max(abs(r1.e_l2 - r2.e_l2), abs(r1.e_h1 - r2.e_h1))
    out.append(_check("metrics", "scale invariance under c -> 10c", dev, 1e-12, t0))
    return out


SUITES = {
    "quadrature": suite_quadrature,
    "jets": suite_jets,
    "oracle": suite_oracle,
    "gradient": suite_gradient,
    "minimum": suite_minimum,
    "problem": suite_problem,
    "metrics": suite_metrics,
}


def run_suites(names=None) -> list[CheckResult]:
    results = []
    for name in names or SUITES:
        results.extend(SUITES[name]())
    return results
