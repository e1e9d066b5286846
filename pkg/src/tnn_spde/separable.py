"""Closed-form one-dimensional functions and rank-r separable sums of their products.

One-dimensional handles are frozen dataclasses, so equal handles hash equal.
The loss assembly relies on this to share per-dimension integrals between
terms whose weight functions coincide.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from .errors import InvalidArgumentError


class Func1D:
    """A scalar function of one variable with closed-form derivatives up to order 2."""

    def jet(self, x: np.ndarray, order: int = 0) -> list[np.ndarray]:
        raise NotImplementedError

    def derivative(self) -> list[tuple[float, "Func1D"]]:
        """First derivative as a list of (coefficient, handle) pairs."""
        raise NotImplementedError

    def __call__(self, x):
        return self.jet(np.asarray(x, dtype=np.float64), 0)[0]

    def __mul__(self, other: "Func1D") -> "Func1D":
        return product(self, other)


@dataclass(frozen=True)
class One(Func1D):
    def jet(self, x, order=0):
        out = [np.ones_like(x, dtype=np.float64)]
        out += [np.zeros_like(x, dtype=np.float64)] * order
        return out

    def derivative(self):
        return []

    def __repr__(self):
        return "1"


@dataclass(frozen=True)
class Const(Func1D):
    value: float

    def jet(self, x, order=0):
        out = [np.full(np.shape(x), self.value, dtype=np.float64)]
        out += [np.zeros_like(x, dtype=np.float64)] * order
        return out

    def derivative(self):
        return []

    def __repr__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Power(Func1D):
    k: int

    def jet(self, x, order=0):
        k = self.k
        out = [x**k]
        if order >= 1:
            out.append(k * x ** (k - 1) if k >= 1 else np.zeros_like(x))
        if order >= 2:
            out.append(k * (k - 1) * x ** (k - 2) if k >= 2 else np.zeros_like(x))
        return out

    def derivative(self):
        if self.k == 0:
            return []
        return [(float(self.k), Power(self.k - 1) if self.k > 1 else One())]

    def __repr__(self):
        return "t" if self.k == 1 else f"t^{self.k}"


@dataclass(frozen=True)
class Sin(Func1D):
    freq: float

    def jet(self, x, order=0):
        a = self.freq * x
        s = np.sin(a)
        out = [s]
        if order >= 1:
            out.append(self.freq * np.cos(a))
        if order >= 2:
            out.append(-self.freq**2 * s)
        return out

    def derivative(self):
        return [(self.freq, Cos(self.freq))]

    def __repr__(self):
        return f"sin({self.freq:.6g}t)"


@dataclass(frozen=True)
class Cos(Func1D):
    freq: float

    def jet(self, x, order=0):
        a = self.freq * x
        c = np.cos(a)
        out = [c]
        if order >= 1:
            out.append(-self.freq * np.sin(a))
        if order >= 2:
            out.append(-self.freq**2 * c)
        return out

    def derivative(self):
        return [(-self.freq, Sin(self.freq))]

    def __repr__(self):
        return f"cos({self.freq:.6g}t)"


@dataclass(frozen=True)
class Product(Func1D):
    """Product of two or more non-constant handles in canonical (sorted) order."""

    factors: tuple

    def jet(self, x, order=0):
        acc = self.factors[0].jet(x, order)
        for f in self.factors[1:]:
            g = f.jet(x, order)
            new = [acc[0] * g[0]]
            if order >= 1:
                new.append(acc[1] * g[0] + acc[0] * g[1])
            if order >= 2:
                new.append(acc[2] * g[0] + 2.0 * acc[1] * g[1] + acc[0] * g[2])
            acc = new
        return acc

    def derivative(self):
        out = []
        for i, f in enumerate(self.factors):
            rest = self.factors[:i] + self.factors[i + 1:]
            for coef, df in f.derivative():
                out.append((coef, product(df, *rest)))
        return out

    def __repr__(self):
        return "*".join(repr(f) for f in self.factors)


def product(*funcs: Func1D) -> Func1D:
    """Canonical product: flattens, folds constants, drops ones, sorts factors."""
    scale = 1.0
    factors = []
    for f in funcs:
        if isinstance(f, Product):
            factors.extend(f.factors)
        elif isinstance(f, Const):
            scale *= f.value
        elif not isinstance(f, One):
            factors.append(f)
    factors.sort(key=lambda f: (type(f).__name__, repr(astuple(f))))
    if scale != 1.0:
        factors.insert(0, Const(scale))
    if not factors:
        return One()
    if len(factors) == 1:
        return factors[0]
    return Product(tuple(factors))


@dataclass(frozen=True)
class SeparableTerm:
    coef: float
    factors: tuple  # one Func1D per dimension

    def value(self, points: np.ndarray) -> np.ndarray:
        out = np.full(points.shape[0], self.coef, dtype=np.float64)
        for t, f in enumerate(self.factors):
            out *= f(points[:, t])
        return out


class SeparableFunction:
    """Sum of ``coef * prod_t factors[t](z_t)`` over terms."""

    def __init__(self, terms, ndim: int):
        self.ndim = ndim
        self.terms: list[SeparableTerm] = []
        for term in terms:
            if len(term.factors) != ndim:
                raise InvalidArgumentError(
                    f"term has {len(term.factors)} factors, expected one per dimension ({ndim})"
                )
            if term.coef != 0.0:
                self.terms.append(term)

    @property
    def rank(self) -> int:
        return len(self.terms)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.ndim:
            raise InvalidArgumentError(f"points must have {self.ndim} columns, got {points.shape[1]}")
        out = np.zeros(points.shape[0])
        for term in self.terms:
            out += term.value(points)
        return out

    def partial(self, dim: int) -> "SeparableFunction":
        """Derivative with respect to coordinate ``dim``, again in separable form."""
        terms = []
        for term in self.terms:
            for coef, df in term.factors[dim].derivative():
                factors = term.factors[:dim] + (df,) + term.factors[dim + 1:]
                terms.append(SeparableTerm(term.coef * coef, factors))
        return SeparableFunction(terms, self.ndim)

    def __repr__(self):
        return f"SeparableFunction(rank={self.rank}, ndim={self.ndim})"


def unit_factors(ndim: int) -> list:
    return [One()] * ndim


def term(coef: float, ndim: int, placed: dict | None = None) -> SeparableTerm:
    """Build a term from ``{dim: handle}`` placements; unplaced dimensions get ``One``."""
    factors = unit_factors(ndim)
    for dim, f in (placed or {}).items():
        factors[dim] = f
    if not math.isfinite(coef):
        raise InvalidArgumentError("non-finite term coefficient")
    return SeparableTerm(float(coef), tuple(factors))
