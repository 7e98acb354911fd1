"""Feed-forward generator networks ``G: R^s -> R^n``.

A network is an ordered list of affine layers, each followed by an
element-wise 1-Lipschitz activation.  Derivatives are computed layer by layer
from cached pre-activations; there is no general autodiff tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InvalidArgumentError, NumericError, ParseError

__all__ = [
    "ACTIVATION_KINDS",
    "Activation",
    "MlpLayer",
    "MlpGenerator",
    "forward",
    "vjp",
    "forward_batch",
    "backward_batch",
    "lipschitz_bound",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
]

ACTIVATION_KINDS = ("relu", "sigmoid", "tanh", "identity")


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


@dataclass(frozen=True)
class Activation:
    kind: str

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise InvalidArgumentError(f"unknown activation {self.kind!r}")

    @property
    def lipschitz(self) -> float:
        return 1.0

    def __call__(self, a: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(a, 0.0)
        if self.kind == "sigmoid":
            return _sigmoid(a)
        if self.kind == "tanh":
            return np.tanh(a)
        return a.copy()

    def derivative(self, a: np.ndarray, out: np.ndarray) -> np.ndarray:
        """Elementwise derivative given pre-activation ``a`` and output ``out``.

        The relu derivative at exactly zero is taken as 0.
        """
        if self.kind == "relu":
            return (a > 0).astype(np.float64)
        if self.kind == "sigmoid":
            return out * (1.0 - out)
        if self.kind == "tanh":
            return 1.0 - out * out
        return np.ones_like(a)


@dataclass(frozen=True)
class MlpLayer:
    W: np.ndarray
    b: np.ndarray
    act: Activation

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if W.ndim != 2:
            raise InvalidArgumentError(f"layer weight must be 2-d, got shape {W.shape}")
        if b.shape != (W.shape[0],):
            raise InvalidArgumentError(f"bias of length {b.shape[0]} does not match {W.shape[0]} rows")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvalidArgumentError("layer parameters must be finite")
        act = self.act if isinstance(self.act, Activation) else Activation(self.act)
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "act", act)

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


class MlpGenerator:
    """Immutable multilayer perceptron ``z -> phi_d(W_d ... phi_1(W_1 z + b_1) ... + b_d)``."""

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers:
            raise InvalidArgumentError("a generator needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].n_in != layers[i - 1].n_out:
                raise InvalidArgumentError(
                    f"layer {i} expects input of size {layers[i].n_in} but layer {i - 1} "
                    f"outputs {layers[i - 1].n_out}"
                )
        self.layers = layers

    @property
    def s(self) -> int:
        return self.layers[0].n_in

    @property
    def n(self) -> int:
        return self.layers[-1].n_out

    @property
    def d(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> list[int]:
        return [self.s] + [layer.n_out for layer in self.layers]

    @property
    def w_max(self) -> float:
        return max(float(np.max(np.abs(layer.W))) if layer.W.size else 0.0 for layer in self.layers)

    @classmethod
    def from_arrays(cls, weights, biases, activations):
        return cls(MlpLayer(W, b, Activation(a)) for W, b, a in zip(weights, biases, activations))

    def __call__(self, z):
        return forward(self, z)

    def __repr__(self):
        acts = ",".join(layer.act.kind for layer in self.layers)
        return f"MlpGenerator(widths={self.widths}, activations=[{acts}])"


def forward_batch(G: MlpGenerator, Z: np.ndarray):
    """Forward pass on a batch (rows of ``Z``).

    Returns the output batch and a cache ``[(input, pre_activation, output), ...]``
    consumed by :func:`backward_batch`.
    """
    h = np.asarray(Z, dtype=np.float64)
    cache = []
    for i, layer in enumerate(G.layers):
        with np.errstate(over="ignore", invalid="ignore"):
            a = h @ layer.W.T + layer.b
            out = layer.act(a)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"non-finite activation in layer {i}")
        cache.append((h, a, out))
        h = out
    return h, cache


def backward_batch(G: MlpGenerator, cache, cotangent: np.ndarray, param_grads: bool = False):
    """Reverse pass: pull a batch of output cotangents back to the input.

    With ``param_grads`` also returns ``[(dW, db), ...]`` summed over the batch.
    """
    g = np.asarray(cotangent, dtype=np.float64)
    grads = [None] * G.d
    for i in range(G.d - 1, -1, -1):
        layer = G.layers[i]
        h_in, a, out = cache[i]
        delta = g * layer.act.derivative(a, out)
        if param_grads:
            grads[i] = (delta.T @ h_in, delta.sum(axis=0))
        g = delta @ layer.W
    if param_grads:
        return g, grads
    return g


def _check_vec(v, size, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (size,):
        raise InvalidArgumentError(f"{what} must have shape ({size},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"{what} has non-finite entries")
    return v


def forward(G: MlpGenerator, z) -> np.ndarray:
    z = _check_vec(z, G.s, "latent z")
    out, _ = forward_batch(G, z[None, :])
    return out[0]


def vjp(G: MlpGenerator, z, cotangent) -> np.ndarray:
    """``J_G(z)^T cotangent``."""
    z = _check_vec(z, G.s, "latent z")
    cotangent = _check_vec(cotangent, G.n, "cotangent")
    _, cache = forward_batch(G, z[None, :])
    return backward_batch(G, cache, cotangent[None, :])[0]


def lipschitz_bound(G: MlpGenerator) -> float:
    """``(L * N * w_max) ** d`` with ``N`` the widest layer (input included)."""
    L = max(layer.act.lipschitz for layer in G.layers)
    N = max(G.widths)
    return float((L * N * G.w_max) ** G.d)


FORMAT_VERSION = 1


def _num_list(values) -> str:
    return "[" + ", ".join(format(float(v), ".17g") for v in np.ravel(values)) + "]"


def model_to_text(G: MlpGenerator) -> str:
    layer_txt = []
    for layer in G.layers:
        layer_txt.append(
            "    {"
            f'"rows": {layer.n_out}, "cols": {layer.n_in}, "activation": "{layer.act.kind}",\n'
            f'     "W": {_num_list(layer.W)},\n'
            f'     "b": {_num_list(layer.b)}}}'
        )
    return (
        "{\n"
        f'  "format_version": {FORMAT_VERSION},\n'
        f'  "s": {G.s},\n'
        f'  "n": {G.n},\n'
        '  "layers": [\n' + ",\n".join(layer_txt) + "\n  ]\n}\n"
    )


def model_to_dict(G: MlpGenerator) -> dict:
    return json.loads(model_to_text(G))


def _field(obj, key, where, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is int and (not isinstance(value, int) or isinstance(value, bool)):
        raise ParseError(f"{where}.{key}: expected integer, got {value!r}")
    if kind is list and not isinstance(value, list):
        raise ParseError(f"{where}.{key}: expected array")
    if kind is str and not isinstance(value, str):
        raise ParseError(f"{where}.{key}: expected string, got {value!r}")
    return value


def model_from_dict(doc: dict) -> MlpGenerator:
    version = _field(doc, "format_version", "model", int)
    if version != FORMAT_VERSION:
        raise ParseError(f"model.format_version: unsupported version {version}")
    s = _field(doc, "s", "model", int)
    n = _field(doc, "n", "model", int)
    raw_layers = _field(doc, "layers", "model", list)
    if not raw_layers:
        raise ParseError("model.layers: empty layer list")
    layers = []
    prev = s
    for i, raw in enumerate(raw_layers):
        where = f"layers[{i}]"
        rows = _field(raw, "rows", where, int)
        cols = _field(raw, "cols", where, int)
        act = _field(raw, "activation", where, str)
        if act not in ACTIVATION_KINDS:
            raise ParseError(f"{where}.activation: unknown activation {act!r}")
        if cols != prev:
            raise ParseError(f"{where}.cols: expected {prev} (previous layer output), got {cols}")
        W = _field(raw, "W", where, list)
        b = _field(raw, "b", where, list)
        if len(W) != rows * cols:
            raise ParseError(f"{where}.W: expected {rows * cols} numbers, got {len(W)}")
        if len(b) != rows:
            raise ParseError(f"{where}.b: expected {rows} numbers, got {len(b)}")
        try:
            W_arr = np.array(W, dtype=np.float64).reshape(rows, cols)
            b_arr = np.array(b, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{where}: non-numeric entry ({exc})") from None
        if not (np.all(np.isfinite(W_arr)) and np.all(np.isfinite(b_arr))):
            raise ParseError(f"{where}: non-finite parameter")
        layers.append(MlpLayer(W_arr, b_arr, Activation(act)))
        prev = rows
    if prev != n:
        raise ParseError(f"model.n: declared {n} but last layer outputs {prev}")
    return MlpGenerator(layers)


def save_model(G: MlpGenerator, path) -> None:
    Path(path).write_text(model_to_text(G))


def load_model(path) -> MlpGenerator:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return model_from_dict(doc)

