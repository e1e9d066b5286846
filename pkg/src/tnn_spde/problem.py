"""Parametric elliptic benchmark problems with separable data.

Dimensions are ordered as the ``M`` parametric coordinates ``y_1..y_M``
followed by the ``d`` spatial coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NonCoerciveProblemError
from .quad import Interval
from .separable import Const, Cos, Func1D, One, Power, SeparableFunction, Sin, product, term

PI = math.pi
EXAMPLES = ("example1", "example2", "example3")


@dataclass
class ProblemSpec:
    """Data of -div(a grad u) = f on Gamma x D with separable a, f, u."""

    M: int
    d: int
    domains: list[Interval]
    density: list[Func1D]
    diffusion: SeparableFunction
    diffusion_grad: list[SeparableFunction]
    load: SeparableFunction
    exact: SeparableFunction | None
    label: str
    params: dict = field(default_factory=dict)

    @property
    def ndim(self) -> int:
        return self.M + self.d

    @property
    def spatial_dims(self) -> range:
        return range(self.M, self.M + self.d)

    @property
    def parametric_dims(self) -> range:
        return range(self.M)

    def role(self, t: int) -> str:
        return "parametric" if t < self.M else "spatial"

    def density_integrals(self, rules) -> np.ndarray:
        """Integral of each dimension's density weight (1 for spatial dims)."""
        return np.array([float(r.weights @ rho(r.nodes)) for r, rho in zip(rules, self.density)])


def _check_M(M):
    if isinstance(M, bool) or int(M) != M or M < 1:
        raise InvalidArgumentError(f"M must be a positive integer, got {M}")
    return int(M)


def _base(M: int, label: str, diffusion_terms, load_terms, params) -> ProblemSpec:
    n = M + 1
    diffusion = SeparableFunction(diffusion_terms, n)
    exact = SeparableFunction([term(1.0, n, {**{m: Sin(PI / 2) for m in range(M)}, M: Sin(PI)})], n)
    return ProblemSpec(
        M=M,
        d=1,
        domains=[Interval(-1.0, 1.0)] * M + [Interval(0.0, 1.0)],
        density=[Const(0.5)] * M + [One()],
        diffusion=diffusion,
        diffusion_grad=[diffusion.partial(M)],
        load=SeparableFunction(load_terms, n),
        exact=exact,
        label=label,
        params=params,
    )


def _solution_factors(M, extra=None):
    placed = {m: Sin(PI / 2) for m in range(M)}
    placed[M] = Sin(PI)
    placed.update(extra or {})
    return placed


def make_example1(M: int, alpha: float = 2.0) -> ProblemSpec:
    """Spatially constant coefficients a_m = (1+m)^-alpha."""
    M = _check_M(M)
    if not math.isfinite(alpha):
        raise InvalidArgumentError("alpha must be finite")
    n = M + 1
    amp = [(1.0 + m) ** (-alpha) for m in range(1, M + 1)]
    diffusion = [term(1.0, n)] + [term(amp[m], n, {m: Power(1)}) for m in range(M)]
    # f = a * pi^2 * u, distributed over the terms of a
    load = [term(PI**2, n, _solution_factors(M))]
    load += [term(PI**2 * amp[m], n, _solution_factors(M, {m: Power(1) * Sin(PI / 2)})) for m in range(M)]
    return _base(M, "example1", diffusion, load, {"alpha": float(alpha)})


def _variable_example(M, label, amp):
    n = M + 1
    diffusion = [term(1.0, n)] + [term(amp[m - 1], n, {m - 1: Power(1), M: Sin(m * PI)}) for m in range(1, M + 1)]
    load = [term(PI**2, n, _solution_factors(M))]
    for m in range(1, M + 1):
        ys = Power(1) * Sin(PI / 2)
        load.append(term(PI**2 * amp[m - 1], n, _solution_factors(M, {m - 1: ys, M: product(Sin(m * PI), Sin(PI))})))
        load.append(term(-m * PI**2 * amp[m - 1], n, _solution_factors(M, {m - 1: ys, M: product(Cos(m * PI), Cos(PI))})))
    return _base(M, label, diffusion, load, {})


def make_example2(M: int) -> ProblemSpec:
    """Coefficients a_m(x) = (1+m)^-2 sin(m pi x)."""
    M = _check_M(M)
    return _variable_example(M, "example2", [(1.0 + m) ** -2 for m in range(1, M + 1)])


def make_example3(M: int) -> ProblemSpec:
    """Exponentially decaying coefficients a_m(x) = 0.5 exp(-m) sin(m pi x)."""
    M = _check_M(M)
    return _variable_example(M, "example3", [0.5 * math.exp(-m) for m in range(1, M + 1)])


def make_problem(label: str, M: int, alpha: float = 2.0) -> ProblemSpec:
    if label == "example1":
        return make_example1(M, alpha)
    if label == "example2":
        return make_example2(M)
    if label == "example3":
        return make_example3(M)
    raise InvalidArgumentError(f"unknown example {label!r}; expected one of {', '.join(EXAMPLES)}")


def ellipticity_lower_bound(spec: ProblemSpec, n_grid: int = 10_001) -> float:
    """Certified lower bound of a_M over the parameter box, by sampled sup-norms.

    Terms without parametric dependence form the mean field, whose minimum is
    sampled on the spatial grid; every other term is bounded by its coefficient
    times the sampled maxima of its factors. Assumes at most one spatial dimension
    carries a non-constant mean.
    """
    mean = np.inf
    mean_total = None
    spread = 0.0
    grids = [np.linspace(I.lo, I.hi, n_grid) for I in spec.domains]
    for tm in spec.diffusion:
        if all(isinstance(tm.factors[t], One) for t in spec.parametric_dims):
            vals = np.full(n_grid, tm.coef)
            for t in spec.spatial_dims:
                vals = vals * tm.factors[t](grids[t])
            mean_total = vals if mean_total is None else mean_total + vals
        else:
            bound = abs(tm.coef)
            for t, f in enumerate(tm.factors):
                bound *= float(np.max(np.abs(f(grids[t]))))
            spread += bound
    if mean_total is not None:
        mean = float(np.min(mean_total))
    else:
        mean = 0.0
    lower = mean - spread
    if not lower > 0.0:
        raise NonCoerciveProblemError(f"{spec.label}: diffusion lower bound {lower:.6g} is not positive")
    return lower
