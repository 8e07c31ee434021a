"""Two-layer LSTM network with a scalar output head, and its exact gradients.

Parameter layout
----------------
Each layer packs its four gates along the leading axis in the fixed order
(i, f, g, o): `w_ih` is (4p, d), `w_hh` is (4p, p), and the two bias vectors
are (4p,). The initial hidden and cell states (h0, c0) are learnable and live
on the layer. The head maps the top layer's hidden state to a scalar through
a leaky rectifier (negative slope 0.01) or the identity.

The candidate gate g uses tanh by default; `candidate_activation="sigmoid"`
switches it to a sigmoid for comparison runs.

All arithmetic is float64. The backward pass returns the exact gradient of

    mean((yhat - y)^2) + lam/2 * sum(theta^2)

with respect to every learnable parameter, including h0, c0, and the head.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .kernels import lstm_layer_backward, lstm_layer_forward

GATE_ORDER = "ifgo"
CHECKPOINT_FORMAT_VERSION = 1
LRELU_SLOPE = 0.01


def sigmoid(x):
    """Numerically stable logistic function, saturating cleanly for |x| >> 1."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def lrelu(x):
    """Leaky rectifier: x for x > 0, 0.01*x otherwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, x, LRELU_SLOPE * x)
    if out.ndim == 0:
        return float(out)
    return out


def _lrelu_grad(z):
    return np.where(z > 0, 1.0, LRELU_SLOPE)


@dataclass
class LstmLayerParams:
    """Learnable parameters of one LSTM layer (gate order i, f, g, o)."""

    w_ih: np.ndarray  # (4p, d)
    w_hh: np.ndarray  # (4p, p)
    b_ih: np.ndarray  # (4p,)
    b_hh: np.ndarray  # (4p,)
    h0: np.ndarray  # (p,)
    c0: np.ndarray  # (p,)

    @property
    def hidden_size(self):
        return self.h0.shape[0]

    @property
    def input_size(self):
        return self.w_ih.shape[1]

    def validate(self):
        p = self.hidden_size
        d = self.input_size
        if self.w_ih.shape != (4 * p, d):
            raise DataError(f"w_ih shape {self.w_ih.shape}, expected {(4 * p, d)}")
        if self.w_hh.shape != (4 * p, p):
            raise DataError(f"w_hh shape {self.w_hh.shape}, expected {(4 * p, p)}")
        for name in ("b_ih", "b_hh"):
            if getattr(self, name).shape != (4 * p,):
                raise DataError(f"{name} shape {getattr(self, name).shape}, expected {(4 * p,)}")
        if self.c0.shape != (p,):
            raise DataError(f"c0 shape {self.c0.shape}, expected {(p,)}")
        for name in ("w_ih", "w_hh", "b_ih", "b_hh", "h0", "c0"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"non-finite entries in {name}")

    def copy(self):
        return LstmLayerParams(
            self.w_ih.copy(), self.w_hh.copy(), self.b_ih.copy(),
            self.b_hh.copy(), self.h0.copy(), self.c0.copy(),
        )


@dataclass
class OutputHead:
    """Affine map from the top hidden state to a scalar, plus activation."""

    bias: np.ndarray  # shape (1,)
    weights: np.ndarray  # (p,)
    activation: str = "lrelu"  # "lrelu" | "identity"

    def validate(self, p):
        if self.weights.shape != (p,):
            raise DataError(f"head weights shape {self.weights.shape}, expected {(p,)}")
        if self.bias.shape != (1,):
            raise DataError(f"head bias shape {self.bias.shape}, expected (1,)")
        if self.activation not in ("lrelu", "identity"):
            raise DataError(f"unknown head activation {self.activation!r}")

    def copy(self):
        return OutputHead(self.bias.copy(), self.weights.copy(), self.activation)


@dataclass
class NetworkParams:
    """All learnable parameters of the two-layer network."""

    layer1: LstmLayerParams
    layer2: LstmLayerParams
    head: OutputHead
    candidate_activation: str = "tanh"  # "tanh" | "sigmoid"

    @property
    def hidden_size(self):
        return self.layer1.hidden_size

    @property
    def input_size(self):
        return self.layer1.input_size

    def validate(self):
        self.layer1.validate()
        self.layer2.validate()
        p = self.layer1.hidden_size
        if self.layer2.input_size != p or self.layer2.hidden_size != p:
            raise DataError(
                f"layer2 must be {p}->{p}, got {self.layer2.input_size}->{self.layer2.hidden_size}"
            )
        self.head.validate(p)
        if self.candidate_activation not in ("tanh", "sigmoid"):
            raise DataError(f"unknown candidate activation {self.candidate_activation!r}")

    def copy(self):
        return NetworkParams(
            self.layer1.copy(), self.layer2.copy(), self.head.copy(), self.candidate_activation
        )

    def arrays(self):
        """Yield (name, array) for every learnable array, in a fixed order.

        The order is relied on by the optimizer state and the gradient
        checker; keep it stable.
        """
        for prefix, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for name in ("w_ih", "w_hh", "b_ih", "b_hh", "h0", "c0"):
                yield f"{prefix}.{name}", getattr(layer, name)
        yield "head.bias", self.head.bias
        yield "head.weights", self.head.weights


@dataclass
class LayerCache:
    """Forward intermediates of one layer, consumed by the backward pass."""

    x: np.ndarray
    hfull: np.ndarray
    cfull: np.ndarray
    gi: np.ndarray
    gf: np.ndarray
    gg: np.ndarray
    go: np.ndarray

    @property
    def hidden_seq(self):
        return self.hfull[1:]


@dataclass
class ForwardCaches:
    layer1: LayerCache
    layer2: LayerCache
    z: np.ndarray  # head pre-activation, (T,)


def init_params(seed, d, p, candidate_activation="tanh", head_activation="lrelu"):
    """Seeded uniform [-1/sqrt(p), 1/sqrt(p)] weights and biases, zero h0/c0."""
    if d < 1 or p < 1:
        raise DataError(f"d and p must be >= 1, got d={d}, p={p}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(p)

    def u(*shape):
        return rng.uniform(-bound, bound, shape)

    def make_layer(din):
        return LstmLayerParams(
            w_ih=u(4 * p, din),
            w_hh=u(4 * p, p),
            b_ih=u(4 * p),
            b_hh=u(4 * p),
            h0=np.zeros(p),
            c0=np.zeros(p),
        )

    layer1 = make_layer(d)
    layer2 = make_layer(p)
    head = OutputHead(bias=u(1), weights=u(p), activation=head_activation)
    net = NetworkParams(layer1, layer2, head, candidate_activation)
    net.validate()
    return net


def lstm_cell_forward(layer, x, h_prev, c_prev, candidate_activation="tanh"):
    """Single LSTM step; returns (h, c, gate_cache).

    gate_cache is the (i, f, g, o) tuple of gate activations for this step.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    h_prev = np.ascontiguousarray(h_prev, dtype=np.float64)
    c_prev = np.ascontiguousarray(c_prev, dtype=np.float64)
    p = layer.hidden_size
    if x.shape != (layer.input_size,) or h_prev.shape != (p,) or c_prev.shape != (p,):
        raise DataError(
            f"cell input shapes {x.shape}/{h_prev.shape}/{c_prev.shape} do not match "
            f"layer dims d={layer.input_size}, p={p}"
        )
    hfull, cfull, gi, gf, gg, go = lstm_layer_forward(
        layer.w_ih, layer.w_hh, layer.b_ih, layer.b_hh,
        h_prev, c_prev, x.reshape(1, -1), candidate_activation == "tanh",
    )
    return hfull[1], cfull[1], (gi[0], gf[0], gg[0], go[0])


def network_forward(net, inputs, state0=None):
    """Run the full network over a (T, d) input sequence.

    Returns (predictions, caches): predictions is the (T,) output series,
    caches holds everything `network_backward` needs. state0, when given,
    is ((h1, c1), (h2, c2)) and overrides the learnable initial states.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError(f"inputs must be a nonempty (T, d) sequence, got shape {x.shape}")
    if x.shape[1] != net.input_size:
        raise DataError(f"input width {x.shape[1]} does not match network d={net.input_size}")
    if state0 is None:
        s1 = (net.layer1.h0, net.layer1.c0)
        s2 = (net.layer2.h0, net.layer2.c0)
    else:
        s1, s2 = state0
    tanh_g = net.candidate_activation == "tanh"

    out1 = lstm_layer_forward(
        net.layer1.w_ih, net.layer1.w_hh, net.layer1.b_ih, net.layer1.b_hh,
        np.ascontiguousarray(s1[0], dtype=np.float64),
        np.ascontiguousarray(s1[1], dtype=np.float64),
        np.ascontiguousarray(x), tanh_g,
    )
    cache1 = LayerCache(x, *out1)
    h1 = np.ascontiguousarray(cache1.hidden_seq)
    out2 = lstm_layer_forward(
        net.layer2.w_ih, net.layer2.w_hh, net.layer2.b_ih, net.layer2.b_hh,
        np.ascontiguousarray(s2[0], dtype=np.float64),
        np.ascontiguousarray(s2[1], dtype=np.float64),
        h1, tanh_g,
    )
    cache2 = LayerCache(h1, *out2)
    z = float(net.head.bias[0]) + cache2.hidden_seq @ net.head.weights
    predictions = lrelu(z) if net.head.activation == "lrelu" else z.copy()
    return predictions, ForwardCaches(cache1, cache2, z)


def network_backward(net, inputs, targets, caches, lam=0.0):
    """Exact gradients of MSE + (lam/2)*||theta||^2 via BPTT.

    `caches` must come from a `network_forward` call on the same net and
    inputs. Returns a NetworkParams-shaped gradient object.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    T = caches.z.shape[0]
    if x.shape[0] != T or y.shape[0] != T:
        raise DataError(
            f"inputs ({x.shape[0]}), targets ({y.shape[0]}) and cache ({T}) lengths differ"
        )
    tanh_g = net.candidate_activation == "tanh"

    z = caches.z
    yhat = lrelu(z) if net.head.activation == "lrelu" else z
    dyhat = 2.0 * (yhat - y) / T
    dz = dyhat * _lrelu_grad(z) if net.head.activation == "lrelu" else dyhat

    h2 = caches.layer2.hidden_seq
    d_head_w = h2.T @ dz
    d_head_b = np.array([dz.sum()])
    dh2 = np.ascontiguousarray(np.outer(dz, net.head.weights))

    c2 = caches.layer2
    dw_ih2, dw_hh2, db2, dh02, dc02, dh1 = lstm_layer_backward(
        net.layer2.w_ih, net.layer2.w_hh, c2.x, c2.hfull, c2.cfull,
        c2.gi, c2.gf, c2.gg, c2.go, dh2, tanh_g,
    )
    c1 = caches.layer1
    dw_ih1, dw_hh1, db1, dh01, dc01, _ = lstm_layer_backward(
        net.layer1.w_ih, net.layer1.w_hh, np.ascontiguousarray(c1.x), c1.hfull, c1.cfull,
        c1.gi, c1.gf, c1.gg, c1.go, np.ascontiguousarray(dh1), tanh_g,
    )

    grads = NetworkParams(
        layer1=LstmLayerParams(dw_ih1, dw_hh1, db1.copy(), db1.copy(), dh01, dc01),
        layer2=LstmLayerParams(dw_ih2, dw_hh2, db2.copy(), db2.copy(), dh02, dc02),
        head=OutputHead(d_head_b, d_head_w, net.head.activation),
        candidate_activation=net.candidate_activation,
    )
    if lam != 0.0:
        for (_, g), (_, w) in zip(grads.arrays(), net.arrays()):
            g += lam * w
    return grads


def params_to_dict(net):
    """JSON-ready dict with explicit dimensions and format metadata."""
    def layer_dict(layer):
        return {
            "w_ih": layer.w_ih.tolist(),
            "w_hh": layer.w_hh.tolist(),
            "b_ih": layer.b_ih.tolist(),
            "b_hh": layer.b_hh.tolist(),
            "h0": layer.h0.tolist(),
            "c0": layer.c0.tolist(),
        }

    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "gate_order": GATE_ORDER,
        "input_size": net.input_size,
        "hidden_size": net.hidden_size,
        "candidate_activation": net.candidate_activation,
        "head_activation": net.head.activation,
        "layer1": layer_dict(net.layer1),
        "layer2": layer_dict(net.layer2),
        "head": {"bias": float(net.head.bias[0]), "weights": net.head.weights.tolist()},
    }


def params_from_dict(data):
    version = data.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format_version {version!r}")
    if data.get("gate_order") != GATE_ORDER:
        raise DataError(f"unsupported gate order {data.get('gate_order')!r}")

    def layer_from(ld):
        return LstmLayerParams(
            w_ih=np.array(ld["w_ih"], dtype=np.float64),
            w_hh=np.array(ld["w_hh"], dtype=np.float64),
            b_ih=np.array(ld["b_ih"], dtype=np.float64),
            b_hh=np.array(ld["b_hh"], dtype=np.float64),
            h0=np.array(ld["h0"], dtype=np.float64),
            c0=np.array(ld["c0"], dtype=np.float64),
        )

    net = NetworkParams(
        layer1=layer_from(data["layer1"]),
        layer2=layer_from(data["layer2"]),
        head=OutputHead(
            bias=np.array([data["head"]["bias"]], dtype=np.float64),
            weights=np.array(data["head"]["weights"], dtype=np.float64),
            activation=data.get("head_activation", "lrelu"),
        ),
        candidate_activation=data.get("candidate_activation", "tanh"),
    )
    net.validate()
    if net.input_size != data["input_size"] or net.hidden_size != data["hidden_size"]:
        raise DataError("checkpoint declared dimensions disagree with stored arrays")
    return net


def save_params(net, path):
    """Write a value-exact structured-text checkpoint (JSON)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(net), fh)
        fh.write("\n")


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))
