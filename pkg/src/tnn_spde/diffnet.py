"""Scalar-input sine networks with input-derivative jets and exact parameter gradients.

Each subnetwork maps one coordinate to ``p`` outputs through sine hidden layers
and a linear output layer. Because the input is a scalar, the first and second
input derivatives can be carried forward alongside the values (Taylor mode),
and the parameter gradient of any linear functional of those three tables is
obtained by one reverse sweep over the same graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

try:  # vectorized sin/cos kernels, several times faster than numpy's on CPU
    import torch
except ImportError:  # pragma: no cover
    torch = None

ACTIVATIONS = ("sine",)


def sincos(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise (sin z, cos z) as float64 arrays."""
    if torch is None:
        return np.sin(z), np.cos(z)
    zt = torch.from_numpy(np.ascontiguousarray(z))
    return torch.sin(zt).numpy(), torch.cos(zt).numpy()


@dataclass(frozen=True)
class NetArchitecture:
    hidden_layers: int = 3
    width: int = 100
    p: int = 50
    activation: str = "sine"

    def __post_init__(self):
        for name in ("hidden_layers", "width", "p"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {value}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unsupported activation {self.activation!r}; only 'sine' is available")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) per affine layer, output layer last."""
        dims = [1] + [self.width] * self.hidden_layers + [self.p]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())


class Subnetwork:
    """Parameters of one scalar-input subnetwork.

    ``params`` is a flat float64 vector; ``weights`` and ``biases`` are views
    into it, so an optimizer updating the flat vector in place updates the
    network. Passing a view of a larger buffer lets a whole model share one
    parameter vector.
    """

    def __init__(self, arch: NetArchitecture, params: np.ndarray | None = None):
        self.arch = arch
        if params is None:
            params = np.zeros(arch.n_params)
        if params.shape != (arch.n_params,) or params.dtype != np.float64:
            raise InvalidArgumentError(
                f"parameter vector must be float64 of length {arch.n_params}, got {params.dtype} {params.shape}"
            )
        self.params = params
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        for fan_out, fan_in in arch.layer_shapes():
            self.weights.append(params[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in))
            offset += fan_out * fan_in
            self.biases.append(params[offset:offset + fan_out])
            offset += fan_out

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def __repr__(self):
        return f"Subnetwork({self.arch})"


def init_subnetwork(arch: NetArchitecture, seed, out: np.ndarray | None = None) -> Subnetwork:
    """Weights from U(-sqrt(1/fan_in), sqrt(1/fan_in)); biases start at zero.

    With zero biases a sine network is an odd function of its input, so the
    initial factors already overlap strongly with odd targets. Random bias
    ranges (fan-in or U(-pi, pi)) leave per-dimension overlaps well below one,
    and their product across many dimensions is too small for the optimizer
    to pick up. ``seed`` may be an int, a SeedSequence or a Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    net = Subnetwork(arch, out)
    for w, b in zip(net.weights, net.biases):
        bound = np.sqrt(1.0 / w.shape[1])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = 0.0
    if not np.all(np.isfinite(net.params)):
        raise InvalidArgumentError("non-finite parameters after initialization")
    return net


@dataclass
class Jet:
    """Values and input-derivatives of all outputs at a set of nodes.

    ``value``, ``d1`` and ``d2`` are N x p; derivatives beyond ``order`` are None.
    """

    value: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None
    order: int = 0
    _tape: list | None = field(default=None, repr=False)

    def __getitem__(self, k: int) -> np.ndarray:
        if k > self.order:
            raise InvalidArgumentError(f"jet of order {self.order} has no derivative of order {k}")
        return (self.value, self.d1, self.d2)[k]

    def orders(self) -> list[np.ndarray]:
        return [self[k] for k in range(self.order + 1)]


def _check_nodes(nodes) -> np.ndarray:
    x = np.asarray(nodes, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidArgumentError(f"nodes must be one-dimensional, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("non-finite node coordinate")
    return x


def forward_jet(net: Subnetwork, nodes, max_order: int = 0) -> Jet:
    """Evaluate the network and its input-derivatives up to ``max_order`` (0, 1 or 2)."""
    if max_order not in (0, 1, 2):
        raise InvalidArgumentError(f"max_order must be 0, 1 or 2, got {max_order}")
    x = _check_nodes(nodes)
    last = net.n_layers - 1
    inputs, acts = [], []

    w0 = net.weights[0][:, 0]
    z = np.multiply.outer(x, w0)
    z += net.biases[0]
    z1 = np.broadcast_to(w0, z.shape) if max_order >= 1 else None
    z2 = None  # second derivative of the first pre-activation is zero
    for layer in range(1, last + 1):
        s, c = sincos(z)
        acts.append((s, c, z1, z2))
        h = s
        h1 = c * z1 if max_order >= 1 else None
        h2 = None
        if max_order >= 2:
            h2 = -s * (z1 * z1)
            if z2 is not None:
                h2 += c * z2
        inputs.append((h, h1, h2))
        wt = net.weights[layer].T
        z = h @ wt
        z += net.biases[layer]
        z1 = h1 @ wt if max_order >= 1 else None
        z2 = h2 @ wt if max_order >= 2 else None
    return Jet(z, z1, z2, max_order, [inputs, acts])


def backward_params(net: Subnetwork, nodes, adjoints, jet: Jet | None = None) -> np.ndarray:
    """Gradient w.r.t. the flat parameter vector of sum_k <adjoints[k], jet[k]>.

    ``adjoints`` is a sequence of N x p arrays (or None) indexed by derivative
    order. Passing the ``jet`` returned by ``forward_jet`` for the same nodes
    reuses its tape instead of recomputing the forward sweep.
    """
    x = _check_nodes(nodes)
    adjoints = list(adjoints)
    order = len(adjoints) - 1
    if not 0 <= order <= 2:
        raise InvalidArgumentError("adjoints must cover derivative orders 0..k with k <= 2")
    for k, a in enumerate(adjoints):
        if a is not None and np.shape(a) != (x.shape[0], net.arch.p):
            raise InvalidArgumentError(
                f"adjoint of order {k} has shape {np.shape(a)}, expected {(x.shape[0], net.arch.p)}"
            )
    if jet is None or jet.order < order or jet.value.shape[0] != x.shape[0]:
        jet = forward_jet(net, x, order)
    inputs, acts = jet._tape
    grad = np.zeros_like(net.params)
    g = Subnetwork(net.arch, grad)

    shape = (x.shape[0], net.arch.p)
    adjoints = [np.zeros(shape) if a is None else np.asarray(a, dtype=np.float64) for a in adjoints]
    zb = adjoints[0]
    zb1 = adjoints[1] if order >= 1 else None
    zb2 = adjoints[2] if order >= 2 else None
    for layer in range(net.n_layers - 1, 0, -1):
        h, h1, h2 = inputs[layer - 1]
        w = net.weights[layer]
        gw = zb.T @ h
        if zb1 is not None:
            gw += zb1.T @ h1
        if zb2 is not None:
            gw += zb2.T @ h2
        g.weights[layer][...] = gw
        g.biases[layer][...] = zb.sum(axis=0)
        hb = zb @ w
        hb1 = zb1 @ w if zb1 is not None else None
        hb2 = zb2 @ w if zb2 is not None else None
        zb, zb1, zb2 = _sine_backward(acts[layer - 1], hb, hb1, hb2)
    # first layer: z = x w + b, z1 = w, z2 = 0
    gw0 = zb.T @ x
    if zb1 is not None:
        gw0 += zb1.sum(axis=0)
    g.weights[0][:, 0] = gw0
    g.biases[0][...] = zb.sum(axis=0)
    return grad


def _sine_backward(act, hb, hb1, hb2):
    """Pull adjoints on (sin z, (sin z)', (sin z)'') back to (z, z', z'')."""
    s, c, z1, z2 = act
    zb = hb * c
    zb1 = zb2 = None
    if hb1 is not None:
        zb -= hb1 * s * z1
        zb1 = hb1 * c
    if hb2 is not None:
        t = hb2 * z1
        zb -= c * (t * z1)
        zb1 -= 2.0 * s * t
        if z2 is not None:
            zb -= hb2 * s * z2
            zb2 = hb2 * c
    return zb, zb1, zb2
