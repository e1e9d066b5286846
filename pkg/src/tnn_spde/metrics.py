"""Relative projection errors of a TNN against the separable exact solution.

Both the model and the exact solution are separable, so every inner product
over Gamma x D reduces to products of 1-D quadrature sums. The projection
error is ``<u,u> - <u,Psi>^2 / <Psi,Psi>``, a difference of nearly equal
numbers once Psi is accurate; the contractions are therefore carried out in
extended precision (``np.longdouble``) from the float64 factor tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .tnn import FactorTables, TNNModel, build_factors

XP = np.longdouble


@dataclass
class ErrorReport:
    e_l2: float
    e_h1: float
    uv_l2: float
    vv_l2: float
    uu_l2: float
    uv_h1: float
    vv_h1: float
    uu_h1: float
    f_l2: float
    f_h1: float
    e_h1_full: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class _Separable1D:
    """Caches 1-D jets of separable terms and measure weights at rule nodes."""

    def __init__(self, spec, rules):
        self.spec = spec
        self.rules = rules
        self.measure = [(r.weights * rho(r.nodes)).astype(XP) for r, rho in zip(rules, spec.density)]
        self._cache = {}

    def jet(self, t, func, k):
        key = (t, func)
        if key not in self._cache:
            self._cache[key] = [a.astype(XP) for a in func.jet(self.rules[t].nodes, 1)]
        return self._cache[key][k]

    def self_inner(self, sep, deriv_dim=None):
        """sum_{r,s} coef_r coef_s prod_t int f_r f_s rho, optionally differentiated in one dim."""
        total = XP(0)
        for r in sep:
            for s in sep:
                val = XP(r.coef) * XP(s.coef)
                for t in range(self.spec.ndim):
                    k = 1 if t == deriv_dim else 0
                    val *= np.sum(self.measure[t] * self.jet(t, r.factors[t], k) * self.jet(t, s.factors[t], k))
                total += val
        return total


def _model_inner_products(model, tables, ops, exact, deriv_dim):
    spec = ops.spec
    p = model.p
    c = model.c.astype(XP)
    had = np.ones((p, p), dtype=XP)
    for t in range(spec.ndim):
        k = 1 if t == deriv_dim else 0
        f = tables.jets[t][k].astype(XP)
        had *= (f * ops.measure[t][:, None]).T @ f
    vv = c @ had @ c
    uv = XP(0)
    for term in exact:
        mom = np.full(p, XP(term.coef))
        for t in range(spec.ndim):
            k = 1 if t == deriv_dim else 0
            f = tables.jets[t][k].astype(XP)
            mom *= (ops.measure[t] * ops.jet(t, term.factors[t], k)) @ f
        uv += mom @ c
    return uv, vv


def _data_norms(spec, rules):
    cache = spec.__dict__.setdefault("_metric_data", {})
    key = tuple(id(r) for r in rules)
    entry = cache.get(key)
    if entry is None or any(a is not b for a, b in zip(entry[0].rules, rules)):
        ops = _Separable1D(spec, list(rules))
        uu, ff = ops.self_inner(spec.exact), ops.self_inner(spec.load)
        uu1 = sum((ops.self_inner(spec.exact, i) for i in spec.spatial_dims), XP(0))
        ff1 = sum((ops.self_inner(spec.load, i) for i in spec.spatial_dims), XP(0))
        entry = (ops, (uu, ff, uu1, ff1))
        cache[key] = entry
    return entry


def error_report(model: TNNModel, spec, rules, tables: FactorTables | None = None) -> ErrorReport:
    """All projection-error quantities for the current model."""
    if spec.exact is None:
        raise InvalidArgumentError(f"{spec.label}: no exact solution available")
    if tables is None or any(tables.order(t) < 1 for t in spec.spatial_dims):
        tables = build_factors(model, rules, [1 if spec.role(t) == "spatial" else 0 for t in range(spec.ndim)])
    ops, (uu, ff, uu1, ff1) = _data_norms(spec, rules)

    uv, vv = _model_inner_products(model, tables, ops, spec.exact, None)
    uv1 = vv1 = XP(0)
    for i in spec.spatial_dims:
        a, b = _model_inner_products(model, tables, ops, spec.exact, i)
        uv1 += a
        vv1 += b
    for name, v in (("<Psi,Psi>_L2", vv), ("<grad Psi,grad Psi>", vv1)):
        if not v >= 1e-14:
            raise NumericFailureError(f"degenerate model: {name} = {float(v):.3e}")
    res_l2 = max(uu - uv * uv / vv, XP(0))
    res_h1 = max(uu1 - uv1 * uv1 / vv1, XP(0))
    # full-norm variant: same H1-seminorm projection, L2 part of its residual added
    alpha = uv1 / vv1
    res_h1_l2 = max(uu - 2 * alpha * uv + alpha * alpha * vv, XP(0))
    e_l2 = float(np.sqrt(res_l2) / np.sqrt(ff))
    e_h1 = float(np.sqrt(res_h1) / np.sqrt(ff1))
    e_h1_full = float(np.sqrt(res_h1 + res_h1_l2) / np.sqrt(ff1))
    return ErrorReport(
        e_l2=e_l2, e_h1=e_h1,
        uv_l2=float(uv), vv_l2=float(vv), uu_l2=float(uu),
        uv_h1=float(uv1), vv_h1=float(vv1), uu_h1=float(uu1),
        f_l2=float(np.sqrt(ff)), f_h1=float(np.sqrt(ff1)),
        e_h1_full=e_h1_full,
    )


def projection_error_l2(model: TNNModel, spec, rules, tables=None) -> float:
    return error_report(model, spec, rules, tables).e_l2


def projection_error_h1(model: TNNModel, spec, rules, tables=None, full_norm: bool = False) -> float:
    """Gradient-seminorm projection error; ``full_norm`` adds the L2 part of the same residual."""
    r = error_report(model, spec, rules, tables)
    return r.e_h1_full if full_norm else r.e_h1
