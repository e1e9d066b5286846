"""Ritz and residual losses assembled from per-dimension Gram matrices and moments.

Every integral over the full (M + d)-dimensional box is a sum of terms

    kappa * c^T (G_1 * G_2 * ... * G_T) c      (quadratic in Psi)
    kappa * c . (m_1 * m_2 * ... * m_T)        (linear in Psi)
    kappa * prod_t s_t                          (data only)

with ``*`` the entrywise product and each factor a 1-D quadrature sum on one
dimension. The set of terms depends only on the problem, the rules and the
loss form, so it is compiled once into a plan; each evaluation recomputes the
distinct 1-D integrals from fresh factor tables and contracts them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .separable import product
from .tnn import FactorTables, TNNModel, backward_factors, build_factors

FORMS = ("weak", "strong")
_CHUNK_ELEMENTS = 2_000_000


@dataclass
class LossReport:
    value: float
    grad: np.ndarray
    term_breakdown: dict
    p: int
    offsets: np.ndarray = field(repr=False)

    @property
    def grad_c(self) -> np.ndarray:
        return self.grad[:self.p]

    @property
    def grad_subnets(self) -> list[np.ndarray]:
        return [self.grad[self.offsets[t + 1]:self.offsets[t + 2]] for t in range(len(self.offsets) - 2)]


class _Block:
    """A family of quadratic or linear terms sharing one contraction pattern."""

    def __init__(self, name: str, kind: str):
        self.name = name
        self.kind = kind
        self.kappa: list[float] = []
        self.ids: list[list[int]] = []

    def freeze(self):
        self.kappa = np.asarray(self.kappa, dtype=np.float64)
        self.ids = np.asarray(self.ids, dtype=np.intp).reshape(len(self.kappa), -1)


class LossPlan:
    """Compiled term structure of one loss form for a problem and its rules."""

    def __init__(self, spec, rules, form: str):
        if form not in FORMS:
            raise InvalidArgumentError(f"unknown loss form {form!r}; expected 'weak' or 'strong'")
        if len(rules) != spec.ndim:
            raise InvalidArgumentError(f"expected {spec.ndim} rules, got {len(rules)}")
        self.spec = spec
        self.rules = list(rules)
        self.form = form
        self.measure = [r.weights * rho(r.nodes) for r, rho in zip(rules, spec.density)]
        self._values: dict = {}
        # canonical grams (t, key, a, b) with a <= b, and views possibly transposed
        self.grams: list[tuple] = []
        self._gram_index: dict = {}
        self.views: list[tuple[int, bool]] = []
        self._view_index: dict = {}
        self.moments: list[tuple] = []
        self._moment_index: dict = {}
        self.blocks: list[_Block] = []
        self.constants: dict[str, float] = {}
        self.orders = [0] * spec.ndim
        if form == "weak":
            self._compile_weak()
        else:
            self._compile_strong()
        for b in self.blocks:
            b.freeze()
        self.blocks = [b for b in self.blocks if len(b.kappa)]

    # registration helpers

    def _weights(self, t, func):
        key = (t, func)
        if key not in self._values:
            self._values[key] = self.measure[t] * func(self.rules[t].nodes)
        return self._values[key]

    def _gram(self, t, func, a, b) -> int:
        vkey = (t, func, a, b)
        if vkey in self._view_index:
            return self._view_index[vkey]
        lo, hi = min(a, b), max(a, b)
        ckey = (t, func, lo, hi)
        if ckey not in self._gram_index:
            self._gram_index[ckey] = len(self.grams)
            self.grams.append((t, self._weights(t, func), lo, hi))
        self._view_index[vkey] = len(self.views)
        self.views.append((self._gram_index[ckey], a > b))
        return self._view_index[vkey]

    def _moment(self, t, func, a) -> int:
        key = (t, func, a)
        if key not in self._moment_index:
            self._moment_index[key] = len(self.moments)
            self.moments.append((t, self._weights(t, func), a))
        return self._moment_index[key]

    def _scalar(self, t, func) -> float:
        return float(np.sum(self._weights(t, func)))

    # term compilation

    def _compile_weak(self):
        spec = self.spec
        for i in spec.spatial_dims:
            self.orders[i] = 1
        energy = _Block("energy", "quadratic")
        for q in spec.diffusion:
            for i in spec.spatial_dims:
                energy.kappa.append(0.5 * q.coef)
                energy.ids.append([
                    self._gram(t, h, 1 if t == i else 0, 1 if t == i else 0) for t, h in enumerate(q.factors)
                ])
        load = _Block("load", "linear")
        for r in spec.load:
            load.kappa.append(-r.coef)
            load.ids.append([self._moment(t, h, 0) for t, h in enumerate(r.factors)])
        self.blocks = [energy, load]

    def _model_terms(self):
        """Residual terms acting on Psi: (coef, per-dim handles, per-dim derivative orders)."""
        spec = self.spec
        out = []
        for i, grad_a in zip(spec.spatial_dims, spec.diffusion_grad):
            for q in grad_a:
                out.append((q.coef, q.factors, tuple(1 if t == i else 0 for t in range(spec.ndim))))
            for q in spec.diffusion:
                out.append((q.coef, q.factors, tuple(2 if t == i else 0 for t in range(spec.ndim))))
        return out

    def _compile_strong(self):
        spec = self.spec
        for i in spec.spatial_dims:
            self.orders[i] = 2
        terms = self._model_terms()
        mm = _Block("residual:model-model", "quadratic")
        for ia, (ca, ha, oa) in enumerate(terms):
            for ib in range(ia, len(terms)):
                cb, hb, ob = terms[ib]
                mm.kappa.append(ca * cb * (1.0 if ia == ib else 2.0))
                mm.ids.append([self._gram(t, product(ha[t], hb[t]), oa[t], ob[t]) for t in range(spec.ndim)])
        ml = _Block("residual:model-load", "linear")
        for ca, ha, oa in terms:
            for r in spec.load:
                ml.kappa.append(2.0 * ca * r.coef)
                ml.ids.append([self._moment(t, product(ha[t], r.factors[t]), oa[t]) for t in range(spec.ndim)])
        self.blocks = [mm, ml]
        total = 0.0
        loads = list(spec.load)
        for ir, r in enumerate(loads):
            for js in range(ir, len(loads)):
                s = loads[js]
                val = r.coef * s.coef * (1.0 if ir == js else 2.0)
                for t in range(spec.ndim):
                    val *= self._scalar(t, product(r.factors[t], s.factors[t]))
                total += val
        self.constants["residual:load-load"] = total

    # evaluation

    def evaluate(self, model: TNNModel, tables: FactorTables | None = None, need_grad: bool = True) -> LossReport:
        if model.ndim != self.spec.ndim:
            raise InvalidArgumentError(f"model has {model.ndim} dimensions, problem has {self.spec.ndim}")
        if tables is None:
            tables = build_factors(model, self.rules, self.orders)
        for t, o in enumerate(self.orders):
            if tables.order(t) < o:
                raise InvalidArgumentError(f"{self.form} loss needs derivative order {o} on dimension {t}")
        p = model.p
        c = model.c
        canon = np.empty((len(self.grams), p, p))
        for j, (t, w, a, b) in enumerate(self.grams):
            canon[j] = (tables.jets[t][a] * w[:, None]).T @ tables.jets[t][b]
        stack = np.empty((len(self.views), p, p))
        for i, (j, tr) in enumerate(self.views):
            stack[i] = canon[j].T if tr else canon[j]
        mstack = np.empty((len(self.moments), p))
        for j, (t, w, a) in enumerate(self.moments):
            mstack[j] = w @ tables.jets[t][a]

        breakdown = dict(self.constants)
        grad_c = np.zeros(p)
        gbar = np.zeros_like(stack)
        mbar = np.zeros_like(mstack)
        for block in self.blocks:
            if block.kind == "quadratic":
                val = _quadratic(block, stack, c, grad_c, gbar if need_grad else None)
            else:
                val = _linear(block, mstack, c, grad_c, mbar if need_grad else None)
            breakdown[block.name] = val
        value = float(sum(breakdown.values()))
        if not np.isfinite(value):
            bad = [k for k, v in breakdown.items() if not np.isfinite(v)]
            raise NumericFailureError(f"non-finite {self.form} loss", where=", ".join(bad))

        grad = np.zeros(model.n_params)
        if need_grad:
            grad[:p] = grad_c
            grad += self._backward(model, tables, gbar, mbar)
            if not np.all(np.isfinite(grad)):
                raise NumericFailureError(f"non-finite {self.form} loss gradient")
        return LossReport(value, grad, breakdown, p, model.offsets)

    def _backward(self, model, tables, gbar, mbar):
        cbar = np.zeros((len(self.grams),) + gbar.shape[1:])
        for i, (j, tr) in enumerate(self.views):
            cbar[j] += gbar[i].T if tr else gbar[i]
        adj: dict[int, list] = {}

        def add(t, k, v):
            slots = adj.setdefault(t, [None] * (tables.order(t) + 1))
            slots[k] = v if slots[k] is None else slots[k] + v

        for j, (t, w, a, b) in enumerate(self.grams):
            fa, fb = tables.jets[t][a], tables.jets[t][b]
            add(t, a, w[:, None] * (fb @ cbar[j].T))
            add(t, b, w[:, None] * (fa @ cbar[j]))
        for j, (t, w, a) in enumerate(self.moments):
            add(t, a, np.multiply.outer(w, mbar[j]))
        return backward_factors(model, tables, adj)


def _excl_products(h):
    """Products over axis 1 excluding each index, via prefix and suffix cumulative products."""
    n, T = h.shape[:2]
    pre = np.empty_like(h)
    suf = np.empty_like(h)
    pre[:, 0] = 1.0
    suf[:, T - 1] = 1.0
    if T > 1:
        np.cumprod(h[:, :-1], axis=1, out=pre[:, 1:])
        np.cumprod(h[:, :0:-1], axis=1, out=suf[:, T - 2::-1])
    return pre, suf


def _chunks(n, per_item):
    step = max(1, _CHUNK_ELEMENTS // max(per_item, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def _quadratic(block, stack, c, grad_c, gbar):
    p = c.shape[0]
    T = block.ids.shape[1]
    total = 0.0
    cc = np.multiply.outer(c, c)
    for sl in _chunks(len(block.kappa), T * p * p):
        ids, kappa = block.ids[sl], block.kappa[sl]
        g = stack[ids]
        pre, suf = _excl_products(g)
        full = pre[:, -1] * g[:, -1]
        hc = full @ c
        total += float(kappa @ (hc @ c))
        grad_c += kappa @ hc + (kappa[:, None] * (full.transpose(0, 2, 1) @ c)).sum(axis=0)
        if gbar is not None:
            contrib = (kappa[:, None, None, None] * cc) * pre * suf
            np.add.at(gbar, ids.ravel(), contrib.reshape(-1, p, p))
    return total


def _linear(block, mstack, c, grad_c, mbar):
    total = 0.0
    m = mstack[block.ids]
    pre, suf = _excl_products(m)
    full = pre[:, -1] * m[:, -1]
    total = float(block.kappa @ (full @ c))
    grad_c += block.kappa @ full
    if mbar is not None:
        contrib = (block.kappa[:, None, None] * c) * pre * suf
        np.add.at(mbar, block.ids.ravel(), contrib.reshape(-1, c.shape[0]))
    return total


def loss_plan(spec, rules, form: str) -> LossPlan:
    """Plan for (spec, rules, form), cached on the problem object."""
    cache = spec.__dict__.setdefault("_loss_plans", {})
    key = (form, tuple(id(r) for r in rules))
    entry = cache.get(key)
    if entry is None or any(a is not b for a, b in zip(entry.rules, rules)):
        entry = LossPlan(spec, rules, form)
        cache[key] = entry
    return entry


def assemble_weak(model: TNNModel, spec, rules, tables: FactorTables | None = None, need_grad=True) -> LossReport:
    """Ritz energy 1/2 int a |grad_x Psi|^2 rho - int f Psi rho, with its exact gradient."""
    return loss_plan(spec, rules, "weak").evaluate(model, tables, need_grad)


def assemble_strong(model: TNNModel, spec, rules, tables: FactorTables | None = None, need_grad=True) -> LossReport:
    """Residual int (div(a grad_x Psi) + f)^2 rho, including the constant int f^2 rho."""
    return loss_plan(spec, rules, "strong").evaluate(model, tables, need_grad)


def assemble(model, spec, rules, form: str, tables=None, need_grad=True) -> LossReport:
    return loss_plan(spec, rules, form).evaluate(model, tables, need_grad)


def loss_gradient_check(model: TNNModel, spec, rules, form: str = "weak", n_probes: int = 50,
                        step: float = 1e-5, seed: int = 0, indices=None) -> float:
    """Worst relative deviation between assembled and central-difference gradient entries.

    Entries are compared as |g - fd| / max(|g|, |fd|, 1e-3 * max|g|), so that
    probes landing on near-zero entries are judged against the gradient scale.
    """
    if n_probes < 1:
        raise InvalidArgumentError("n_probes must be at least 1")
    plan = loss_plan(spec, rules, form)
    report = plan.evaluate(model)
    g = report.grad
    if indices is None:
        rng = np.random.default_rng(seed)
        indices = rng.choice(model.n_params, size=min(n_probes, model.n_params), replace=False)
    scale = 1e-3 * float(np.max(np.abs(g)))
    theta0 = model.theta.copy()
    worst = 0.0
    try:
        for i in indices:
            model.theta[i] = theta0[i] + step
            fp = plan.evaluate(model, need_grad=False).value
            model.theta[i] = theta0[i] - step
            fm = plan.evaluate(model, need_grad=False).value
            model.theta[i] = theta0[i]
            fd = (fp - fm) / (2.0 * step)
            denom = max(abs(g[i]), abs(fd), scale, 1e-300)
            worst = max(worst, abs(g[i] - fd) / denom)
    finally:
        model.theta[...] = theta0
    return worst
