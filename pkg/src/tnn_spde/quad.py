"""Gauss-Legendre rules on intervals and weighted node sums."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

MAX_GAUSS_POINTS = 64


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)) or not lo < hi:
            raise InvalidArgumentError(f"degenerate interval ({self.lo}, {self.hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


@dataclass(frozen=True, eq=False)
class Rule1D:
    """Nodes and positive weights of a quadrature rule on ``interval``."""

    nodes: np.ndarray
    weights: np.ndarray
    interval: Interval
    n_sub: int = field(default=1)
    n_pts: int = field(default=0)

    def __len__(self) -> int:
        return self.nodes.shape[0]


def _legendre_pair(n, x):
    """Return (P_n(x), P_{n-1}(x)) by the three-term recurrence."""
    p0 = np.ones_like(x)
    p1 = x.copy()
    for j in range(2, n + 1):
        p0, p1 = p1, ((2 * j - 1) * x * p1 - (j - 1) * p0) / j
    return p1, p0


@functools.lru_cache(maxsize=None)
def _legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(1, n + 1)
    x = np.cos(np.pi * (k - 0.25) / (n + 0.5))
    for _ in range(100):
        pn, pm = _legendre_pair(n, x)
        dx = pn / (n * (x * pn - pm) / (x * x - 1.0))
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    pn, pm = _legendre_pair(n, x)
    dp = n * (x * pn - pm) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    x, w = x[::-1], w[::-1]
    # symmetrize the reference rule
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    if n % 2 == 1:
        x[n // 2] = 0.0
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the ``n``-point Gauss-Legendre nodes and weights on [-1, 1].

    Nodes are sorted increasingly. The rule integrates polynomials of
    degree ``2n - 1`` exactly.
    """
    if isinstance(n, bool) or int(n) != n or not 1 <= n <= MAX_GAUSS_POINTS:
        raise InvalidArgumentError(f"number of Gauss points must be in [1, {MAX_GAUSS_POINTS}], got {n}")
    return _legendre_rule(int(n))


@functools.lru_cache(maxsize=256)
def _composite(lo: float, hi: float, n_sub: int, n_pts: int) -> Rule1D:
    x, w = gauss_legendre_rule(n_pts)
    edges = np.linspace(lo, hi, n_sub + 1)
    left, right = edges[:-1, None], edges[1:, None]
    half = 0.5 * (right - left)
    nodes = (0.5 * (left + right) + half * x[None, :]).ravel()
    weights = (half * w[None, :]).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return Rule1D(nodes, weights, Interval(lo, hi), n_sub, n_pts)


def composite_rule(interval: Interval, n_sub: int, n_pts: int) -> Rule1D:
    """Composite Gauss-Legendre rule on ``n_sub`` equal panels of ``interval``."""
    if not isinstance(interval, Interval):
        interval = Interval(*interval)
    if isinstance(n_sub, bool) or int(n_sub) != n_sub or n_sub < 1:
        raise InvalidArgumentError(f"n_sub must be a positive integer, got {n_sub}")
    gauss_legendre_rule(n_pts)
    return _composite(interval.lo, interval.hi, int(n_sub), int(n_pts))


def integrate(rule: Rule1D, values) -> float:
    values = np.asarray(values)
    if values.shape != rule.nodes.shape:
        raise InvalidArgumentError(
            f"expected {rule.nodes.shape[0]} values at the nodes, got shape {values.shape}"
        )
    return float(rule.weights @ values)
