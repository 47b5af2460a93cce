"""Small dense feedforward networks with hand-coded backprop.

The model is a plain list of (weight matrix, bias, activation) layers;
no autodiff, no GPU.  What matters here is the *group view*: every
hidden output channel maps to the set of coordinates that become jointly
removable when that channel is pruned (its weight row, its bias entry,
and the next layer's matching input column).  Zeroing a full group
leaves the network function untouched by anything that channel does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import Rng, as_vec

__all__ = [
    "ShapeMismatch",
    "BadGroup",
    "Layer",
    "Network",
    "GradSnapshot",
    "GroupIndex",
    "ParamSet",
    "forward",
    "backward",
    "sgd_pre_update",
    "SgdOptimizer",
    "group_view",
    "read_group",
    "write_group",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("relu", "identity", "softmax")


class ShapeMismatch(ValueError):
    pass


class BadGroup(ValueError):
    pass


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise ShapeMismatch(f"layer arrays disagree: w{self.w.shape} b{self.b.shape}")
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")


@dataclass
class Network:
    """Feedforward stack; adjacent layer dimensions must chain."""

    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.w.shape[1] != prev.w.shape[0]:
                raise ShapeMismatch(
                    f"layer chain broken: {prev.w.shape} -> {nxt.w.shape}"
                )

    @classmethod
    def init(cls, rng: Rng, widths: list[int], out_act: str = "softmax") -> "Network":
        """He-scaled random init for ``widths = [in, hidden..., out]``."""
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            std = np.sqrt(2.0 / fan_in)
            w = rng.normal(fan_out * fan_in, 0.0, std).reshape(fan_out, fan_in)
            b = np.zeros(fan_out)
            act = out_act if i == len(widths) - 2 else "relu"
            layers.append(Layer(w, b, act))
        return cls(layers)

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].w.shape[1]] + [l.w.shape[0] for l in self.layers]

    def copy(self) -> "Network":
        return Network([Layer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])

    def num_params(self) -> int:
        return sum(l.w.size + l.b.size for l in self.layers)


@dataclass
class GradSnapshot:
    """Per-coordinate gradients aligned with a Network's layout."""

    layers: list[Layer]
    batch_id: int = 0


@dataclass
class _Arrays:
    w: np.ndarray
    b: np.ndarray


class ParamSet:
    """Bare per-layer (w, b) arrays sharing a Network's group addressing.

    Wraps existing arrays without copying, so group writes mutate the
    originals (used for tentative updates and momentum buffers alike).
    """

    def __init__(self, pairs):
        self.layers = [_Arrays(np.asarray(w), np.asarray(b)) for w, b in pairs]


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layers[0].w.shape[1]:
        raise ShapeMismatch(
            f"batch has {x.shape[1] if x.ndim == 2 else '?'} features, "
            f"network expects {net.layers[0].w.shape[1]}"
        )
    return x


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _run(net: Network, x: np.ndarray):
    """Forward pass keeping pre- and post-activations for backprop."""
    pre, post = [], [x]
    a = x
    for layer in net.layers:
        z = a @ layer.w.T + layer.b
        pre.append(z)
        if layer.act == "relu":
            a = np.maximum(z, 0.0)
        elif layer.act == "softmax":
            a = _softmax(z)
        else:
            a = z
        post.append(a)
    return pre, post


def forward(net: Network, batch) -> np.ndarray:
    """Outputs for a samples x features batch (softmax rows sum to 1)."""
    x = _check_batch(net, batch)
    _, post = _run(net, x)
    return post[-1]


def backward(net: Network, batch, labels, batch_id: int = 0):
    """Mean-reduced cross-entropy loss and exact gradients.

    The final layer's pre-activations are treated as logits; the loss is
    computed through log-sum-exp so finite-difference checks stay sharp.
    """
    x = _check_batch(net, batch)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.shape[0] != x.shape[0]:
        raise ShapeMismatch("labels and batch length differ")
    classes = net.layers[-1].w.shape[0]
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ShapeMismatch("label outside class range")

    pre, post = _run(net, x)
    n = x.shape[0]
    logits = pre[-1]
    lse = logits.max(axis=1)
    lse = lse + np.log(np.exp(logits - lse[:, None]).sum(axis=1))
    loss = float(np.mean(lse - logits[np.arange(n), y]))

    probs = _softmax(logits)
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads = []
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in = post[i]
        gw = delta.T @ a_in
        gb = delta.sum(axis=0)
        grads.append(Layer(gw, gb, layer.act))
        if i > 0:
            delta = delta @ layer.w
            if net.layers[i - 1].act == "relu":
                delta = delta * (pre[i - 1] > 0.0)
    grads.reverse()
    return loss, GradSnapshot(grads, batch_id=batch_id)


def sgd_pre_update(weights, grad, lr: float, l2_coeff: float = 0.0) -> np.ndarray:
    """Tentative step x - lr*(g + l2*x); never mutates its inputs."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if l2_coeff < 0:
        raise ValueError("l2_coeff must be nonnegative")
    x = as_vec(weights)
    g = as_vec(grad)
    if x.shape != g.shape:
        raise ShapeMismatch("weights and grad shapes differ")
    return x - lr * (g + l2_coeff * x)


class SgdOptimizer:
    """SGD with optional momentum and coupled L2 penalty.

    ``pre_update`` returns fresh tentative arrays and never touches the
    network; the caller decides what actually gets written (that split
    is what lets the decay scheduler project or veto individual groups).
    """

    def __init__(self, lr: float, momentum: float = 0.0, l2_coeff: float = 0.0):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if l2_coeff < 0:
            raise ValueError("l2_coeff must be nonnegative")
        self.lr = lr
        self.momentum = momentum
        self.l2_coeff = l2_coeff
        self.vel: list[tuple[np.ndarray, np.ndarray]] | None = None

    def pre_update(self, net: Network, grads: GradSnapshot):
        """List of tentative (w, b) arrays, one pair per layer."""
        if len(grads.layers) != len(net.layers):
            raise ShapeMismatch("gradient snapshot does not match network")
        out = []
        if self.momentum > 0.0 and self.vel is None:
            self.vel = [
                (np.zeros_like(l.w), np.zeros_like(l.b)) for l in net.layers
            ]
        for i, (layer, g) in enumerate(zip(net.layers, grads.layers)):
            dw = g.w + self.l2_coeff * layer.w
            db = g.b + self.l2_coeff * layer.b
            if self.momentum > 0.0:
                vw, vb = self.vel[i]
                vw *= self.momentum
                vw += dw
                vb *= self.momentum
                vb += db
                dw, db = vw, vb
            out.append((layer.w - self.lr * dw, layer.b - self.lr * db))
        return out


@dataclass(frozen=True)
class GroupIndex:
    """One prunable hidden channel and the coordinates it owns.

    ``layer_id``/``channel_id`` locate the channel; the group covers the
    channel's row of its own weight matrix, its bias entry, and column
    ``channel_id`` of the next layer's matrix (``next_out`` rows).
    """

    group_id: int
    layer_id: int
    channel_id: int
    in_dim: int
    next_out: int

    @property
    def size(self) -> int:
        return self.in_dim + 1 + self.next_out

    def coords(self):
        """Explicit (kind, layer, ...) coordinate tuples, row/bias first."""
        own = [("w", self.layer_id, self.channel_id, j) for j in range(self.in_dim)]
        own.append(("b", self.layer_id, self.channel_id))
        coupled = [
            ("w", self.layer_id + 1, r, self.channel_id) for r in range(self.next_out)
        ]
        return own + coupled


def group_view(net: Network) -> list[GroupIndex]:
    """One group per hidden output channel; output channels never prune."""
    if len(net.layers) < 2:
        raise ValueError("need at least two layers to form channel groups")
    groups = []
    gid = 0
    for li in range(len(net.layers) - 1):
        layer = net.layers[li]
        nxt = net.layers[li + 1]
        for ch in range(layer.w.shape[0]):
            groups.append(
                GroupIndex(
                    group_id=gid,
                    layer_id=li,
                    channel_id=ch,
                    in_dim=layer.w.shape[1],
                    next_out=nxt.w.shape[0],
                )
            )
            gid += 1
    return groups


def _check_group(params, g: GroupIndex):
    layers = params.layers
    if not 0 <= g.layer_id < len(layers) - 1:
        raise BadGroup(f"layer {g.layer_id} out of range")
    layer, nxt = layers[g.layer_id], layers[g.layer_id + 1]
    if not 0 <= g.channel_id < layer.w.shape[0]:
        raise BadGroup(f"channel {g.channel_id} out of range")
    if g.in_dim != layer.w.shape[1] or g.next_out != nxt.w.shape[0]:
        raise BadGroup("group shape does not match parameters")
    return layer, nxt


def read_group(params, g: GroupIndex) -> np.ndarray:
    """Concatenated [own row, bias, next column] as one flat vector.

    Works on anything with ``.layers[i].w/.b`` (networks, gradient
    snapshots).
    """
    layer, nxt = _check_group(params, g)
    return np.concatenate(
        [layer.w[g.channel_id, :], layer.b[g.channel_id : g.channel_id + 1],
         nxt.w[:, g.channel_id]]
    )


def write_group(params, g: GroupIndex, vec) -> None:
    """Inverse of read_group; write(read(g)) leaves params bit-identical."""
    layer, nxt = _check_group(params, g)
    v = np.asarray(vec, dtype=np.float64).ravel()
    if v.shape[0] != g.size:
        raise BadGroup(f"group vector has {v.shape[0]} entries, expected {g.size}")
    layer.w[g.channel_id, :] = v[: g.in_dim]
    layer.b[g.channel_id] = v[g.in_dim]
    nxt.w[:, g.channel_id] = v[g.in_dim + 1 :]


def _f17(x: float) -> str:
    # 17 significant digits: lossless round-trip for binary64
    return format(float(x), ".17g")


def save_checkpoint(net: Network, path) -> None:
    """Write the JSON checkpoint format (format_version 1)."""
    chunks = []
    for layer in net.layers:
        rows, cols = layer.w.shape
        weights = ", ".join(_f17(v) for v in layer.w.ravel())
        bias = ", ".join(_f17(v) for v in layer.b)
        chunks.append(
            '{"rows": %d, "cols": %d, "weights": [%s], "bias": [%s], "act": "%s"}'
            % (rows, cols, weights, bias, layer.act)
        )
    doc = '{"layers": [\n' + ",\n".join(chunks) + '\n], "format_version": 1}\n'
    with open(path, "w") as f:
        f.write(doc)


def load_checkpoint(path) -> Network:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    layers = []
    for spec in doc["layers"]:
        rows, cols = int(spec["rows"]), int(spec["cols"])
        w = np.array(spec["weights"], dtype=np.float64)
        if w.size != rows * cols:
            raise ValueError("weight count does not match rows*cols")
        b = np.array(spec["bias"], dtype=np.float64)
        if b.size != rows:
            raise ValueError("bias count does not match rows")
        layers.append(Layer(w.reshape(rows, cols), b, spec["act"]))
    return Network(layers)
