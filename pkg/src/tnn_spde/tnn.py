"""Normalized tensor neural network: factor tables, Gram/moment contractions, evaluation.

The model is

    Psi(z) = sum_k c_k prod_t phihat_{t,k}(z_t),

where ``phihat_{t,k}`` is column ``k`` of dimension ``t``'s subnetwork output,
multiplied by ``(z-lo)(hi-z)`` on spatial dimensions, then divided by its
quadrature L2 norm on the dimension's interval. All trainable parameters,
``c`` first, live in one flat vector ``model.theta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffnet import Jet, NetArchitecture, Subnetwork, backward_params, forward_jet, init_subnetwork
from .errors import DegenerateFactorError, InvalidArgumentError
from .quad import Interval, Rule1D

NORM_FLOOR = 1e-12
CHECKPOINT_FORMAT = "tnn-spde-checkpoint/1"


@dataclass(frozen=True)
class DimSpec:
    role: str  # "parametric" or "spatial"
    interval: Interval
    boundary: bool = False
    arch: NetArchitecture = field(default_factory=NetArchitecture)

    def __post_init__(self):
        if self.role not in ("parametric", "spatial"):
            raise InvalidArgumentError(f"unknown dimension role {self.role!r}")


class TNNModel:
    def __init__(self, dims: list[DimSpec], theta: np.ndarray | None = None):
        if not dims:
            raise InvalidArgumentError("a model needs at least one dimension")
        p = dims[0].arch.p
        if any(dim.arch.p != p for dim in dims):
            raise InvalidArgumentError("all subnetworks must share the output dimension p")
        self.dims = list(dims)
        self.p = p
        sizes = [p] + [dim.arch.n_params for dim in dims]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        if theta is None:
            theta = np.zeros(self.offsets[-1])
            theta[:p] = 1.0
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.offsets[-1],):
            raise InvalidArgumentError(f"theta must have length {self.offsets[-1]}, got {theta.shape}")
        self.theta = theta
        self.c = theta[:p]
        self.subnets = [
            Subnetwork(dim.arch, theta[self.offsets[t + 1]:self.offsets[t + 2]]) for t, dim in enumerate(dims)
        ]

    @classmethod
    def initialize(cls, dims: list[DimSpec], seed: int) -> "TNNModel":
        """Random subnetworks (independent streams per dimension) and c = 1."""
        model = cls(dims)
        streams = np.random.SeedSequence(seed).spawn(len(dims))
        for net, ss in zip(model.subnets, streams):
            init_subnetwork(net.arch, np.random.default_rng(ss), out=net.params)
        return model

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "TNNModel":
        return TNNModel(self.dims, self.theta.copy())

    def subnet_slice(self, t: int) -> slice:
        return slice(self.offsets[t + 1], self.offsets[t + 2])

    def parameter_blocks(self) -> list[tuple[str, slice]]:
        blocks = [("c", slice(0, self.p))]
        blocks += [(f"subnet[{t}]", self.subnet_slice(t)) for t in range(self.ndim)]
        return blocks


def model_for_problem(spec, arch: NetArchitecture, seed: int, boundary: bool = True) -> TNNModel:
    """Model with one subnetwork per problem dimension; spatial dims carry the boundary factor."""
    dims = [
        DimSpec(spec.role(t), spec.domains[t], boundary=boundary and spec.role(t) == "spatial", arch=arch)
        for t in range(spec.ndim)
    ]
    return TNNModel.initialize(dims, seed)


def _boundary_jet(interval: Interval, x: np.ndarray):
    lo, hi = interval.lo, interval.hi
    g = (x - lo) * (hi - x)
    g1 = (lo + hi) - 2.0 * x
    return g, g1, -2.0


@dataclass
class FactorTables:
    """Normalized factor jets per dimension at that dimension's rule nodes.

    ``jets[t][k]`` is the N_t x p table of the k-th input derivative;
    ``norms[t]`` holds the column norms used for normalization.
    """

    jets: list[list[np.ndarray]]
    norms: list[np.ndarray]
    rules: list[Rule1D]
    orders: list[int]
    _raw: list = field(default_factory=list, repr=False)

    def order(self, t: int) -> int:
        return self.orders[t]

    def factor(self, t: int, k: int = 0) -> np.ndarray:
        if k > self.orders[t]:
            raise InvalidArgumentError(f"dimension {t} holds derivatives up to order {self.orders[t]}, not {k}")
        return self.jets[t][k]


def build_factors(model: TNNModel, rules: list[Rule1D], max_order) -> FactorTables:
    """Evaluate, boundary-adjust and L2-normalize every dimension's factors."""
    if len(rules) != model.ndim:
        raise InvalidArgumentError(f"expected {model.ndim} rules, got {len(rules)}")
    if isinstance(max_order, int):
        max_order = [max_order] * model.ndim
    jets, norms, raw = [], [], []
    for t, (dim, net, rule) in enumerate(zip(model.dims, model.subnets, rules)):
        order = int(max_order[t])
        x = rule.nodes
        jet = forward_jet(net, x, order)
        cols = jet.orders()
        g = None
        if dim.boundary:
            g = _boundary_jet(dim.interval, x)
            cols = _apply_boundary(cols, g)
        sq = rule.weights @ (cols[0] * cols[0])
        s = np.sqrt(sq)
        if np.any(~(s >= NORM_FLOOR)):
            bad = np.flatnonzero(~(s >= NORM_FLOOR))
            raise DegenerateFactorError(
                f"factor columns {bad.tolist()} of dimension {t} have norm below {NORM_FLOOR}", where=f"dim {t}"
            )
        inv = 1.0 / s
        jets.append([col * inv for col in cols])
        norms.append(s)
        raw.append((jet, cols, g))
    return FactorTables(jets, norms, list(rules), list(max_order), raw)


def _apply_boundary(cols, g):
    g0, g1, g2 = g
    out = [cols[0] * g0[:, None]]
    if len(cols) > 1:
        out.append(cols[1] * g0[:, None] + cols[0] * g1[:, None])
    if len(cols) > 2:
        out.append(cols[2] * g0[:, None] + 2.0 * cols[1] * g1[:, None] + cols[0] * g2)
    return out


def backward_factors(model: TNNModel, tables: FactorTables, adjoints: dict) -> np.ndarray:
    """Pull adjoints on normalized factor tables back to the flat parameter vector.

    ``adjoints`` maps dimension index to a list of N x p arrays (or None),
    indexed by derivative order. The ``c`` block of the result is zero.
    """
    grad = np.zeros(model.n_params)
    for t, adj in adjoints.items():
        jet, cols, g = tables._raw[t]
        rule = tables.rules[t]
        s = tables.norms[t]
        inv = 1.0 / s
        order = max(k for k, a in enumerate(adj) if a is not None)
        # normalized F_k = B_k / s, s = sqrt(sum_n w_n B_0^2)
        bbar = []
        sbar = np.zeros(model.p)
        for k in range(order + 1):
            a = adj[k]
            if a is None:
                bbar.append(None)
                continue
            bbar.append(a * inv)
            sbar -= np.einsum("ij,ij->j", a, cols[k]) * (inv * inv)
        contrib = rule.weights[:, None] * cols[0] * (sbar * inv)
        bbar[0] = contrib if bbar[0] is None else bbar[0] + contrib
        if g is not None:
            bbar = _boundary_backward(bbar, g)
        grad[model.subnet_slice(t)] += backward_params(model.subnets[t], rule.nodes, bbar, jet)
    return grad


def _boundary_backward(bbar, g):
    g0, g1, g2 = g
    n = len(bbar)
    out = [None] * n
    def acc(k, v):
        out[k] = v if out[k] is None else out[k] + v
    if bbar[0] is not None:
        acc(0, bbar[0] * g0[:, None])
    if n > 1 and bbar[1] is not None:
        acc(1, bbar[1] * g0[:, None])
        acc(0, bbar[1] * g1[:, None])
    if n > 2 and bbar[2] is not None:
        acc(2, bbar[2] * g0[:, None])
        acc(1, 2.0 * bbar[2] * g1[:, None])
        acc(0, bbar[2] * g2)
    return out


def _weight_vector(tables: FactorTables, t: int, weight_values) -> np.ndarray:
    w = np.asarray(weight_values, dtype=np.float64)
    rule = tables.rules[t]
    if w.shape != rule.weights.shape:
        raise InvalidArgumentError(f"expected {rule.weights.shape[0]} weight values for dimension {t}, got {w.shape}")
    return rule.weights * w


def gram(tables: FactorTables, t: int, weight_values, order_pair=(0, 0)) -> np.ndarray:
    """G[k, l] = sum_n w_n weight_n F^(a)[n, k] F^(b)[n, l] on dimension ``t``."""
    a, b = order_pair
    w = _weight_vector(tables, t, weight_values)
    fa, fb = tables.factor(t, a), tables.factor(t, b)
    return (fa * w[:, None]).T @ fb


def moment(tables: FactorTables, t: int, weight_values, order: int = 0) -> np.ndarray:
    """m[k] = sum_n w_n weight_n F^(order)[n, k] on dimension ``t``."""
    w = _weight_vector(tables, t, weight_values)
    return w @ tables.factor(t, order)


def eval_factors(model: TNNModel, tables: FactorTables, t: int, x, order: int = 0) -> list[np.ndarray]:
    """Normalized, boundary-adjusted factor jets of dimension ``t`` at arbitrary points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    dim = model.dims[t]
    if np.any(x < dim.interval.lo) or np.any(x > dim.interval.hi):
        raise InvalidArgumentError(f"point outside dimension {t}'s interval {dim.interval}")
    cols = forward_jet(model.subnets[t], x, order).orders()
    if dim.boundary:
        cols = _apply_boundary(cols, _boundary_jet(dim.interval, x))
    inv = 1.0 / tables.norms[t]
    return [col * inv for col in cols]


def eval_points(model: TNNModel, tables: FactorTables, z) -> np.ndarray:
    """Psi at each row of ``z`` (shape n x ndim), normalizing with ``tables.norms``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != model.ndim:
        raise InvalidArgumentError(f"points must have {model.ndim} coordinates, got {z.shape[1]}")
    prod = np.ones((z.shape[0], model.p))
    for t in range(model.ndim):
        prod *= eval_factors(model, tables, t, z[:, t])[0]
    return prod @ model.c


def eval_point(model: TNNModel, tables: FactorTables, z) -> float:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.ndim,):
        raise InvalidArgumentError(f"point must have {model.ndim} coordinates, got shape {z.shape}")
    return float(eval_points(model, tables, z[None, :])[0])


# checkpoints

def _array_doc(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def checkpoint_dict(model: TNNModel) -> dict:
    dims = []
    for t, (dim, net) in enumerate(zip(model.dims, model.subnets)):
        arch = dim.arch
        dims.append({
            "role": dim.role,
            "interval": [dim.interval.lo, dim.interval.hi],
            "boundary": dim.boundary,
            "architecture": {
                "hidden_layers": arch.hidden_layers,
                "width": arch.width,
                "p": arch.p,
                "activation": arch.activation,
            },
            "weights": [_array_doc(w) for w in net.weights],
            "biases": [_array_doc(b) for b in net.biases],
        })
    return {"format": CHECKPOINT_FORMAT, "p": model.p, "c": _array_doc(model.c), "dims": dims}


def save_checkpoint(model: TNNModel, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(model), fh, indent=1)
        fh.write("\n")


def model_from_dict(doc: dict) -> TNNModel:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"unrecognized checkpoint format {doc.get('format')!r}")
    dims = []
    for d in doc["dims"]:
        dims.append(DimSpec(d["role"], Interval(*d["interval"]), bool(d["boundary"]), NetArchitecture(**d["architecture"])))
    model = TNNModel(dims)
    model.c[...] = np.asarray(doc["c"]["data"]).reshape(doc["c"]["shape"])
    for net, d in zip(model.subnets, doc["dims"]):
        for dst, src in zip(net.weights + net.biases, d["weights"] + d["biases"]):
            arr = np.asarray(src["data"], dtype=np.float64).reshape(src["shape"])
            if arr.shape != dst.shape:
                raise InvalidArgumentError(f"checkpoint array shape {arr.shape} does not match {dst.shape}")
            dst[...] = arr
    return model


def load_checkpoint(path) -> TNNModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
