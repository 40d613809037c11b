"""Dense networks, a GRU cell, and the mean-squared-error loss."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ArgumentError, DimensionError
from . import tensor as T
from .params import ParameterSet
from .tensor import Tensor, as_tensor

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


def mse(predicted, actual) -> Tensor:
    """(1/n) * sum((predicted - actual)^2) over every element."""
    predicted, actual = as_tensor(predicted), as_tensor(actual)
    if predicted.shape != actual.shape:
        raise DimensionError(f"mse shapes differ: {predicted.shape} vs {actual.shape}")
    if predicted.size == 0:
        raise DimensionError("mse of empty arrays")
    diff = predicted - actual
    return T.tsum(T.square(diff)) * (1.0 / predicted.size)


class Mlp:
    """Fully connected network ``x -> act(x W0 + b0) -> ... -> out_act(x Wn + bn)``.

    Weights live in ``params`` under ``{prefix}l{i}.W`` / ``{prefix}l{i}.b``; a
    shared ParameterSet may be passed so several heads train under one optimizer.
    """

    def __init__(self, layer_dims: Sequence[int], hidden_activation: str = "tanh",
                 output_activation: str = "identity", params: ParameterSet | None = None,
                 prefix: str = "", seed: int = 0, init: str = "xavier"):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or any(d <= 0 for d in layer_dims):
            raise ArgumentError(f"layer_dims must be >= 2 positive ints, got {layer_dims}")
        if hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ArgumentError(f"hidden activation {hidden_activation!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ArgumentError(f"output activation {output_activation!r}")
        self.layer_dims = layer_dims
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.params = params if params is not None else ParameterSet(seed)
        self.prefix = prefix
        self.names = []
        for i, (din, dout) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            w, b = f"{prefix}l{i}.W", f"{prefix}l{i}.b"
            self.params.add(w, (din, dout), init=init)
            self.params.add(b, (dout,), init="zeros")
            self.names.append((w, b))

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def num_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def __call__(self, x) -> Tensor:
        return mlp_forward(self, x)

    def predict(self, x) -> np.ndarray:
        """Tape-free forward pass for evaluation."""
        h = np.asarray(x, dtype=np.float64)
        self._check_input(h.shape)
        last = len(self.names) - 1
        for i, (w, b) in enumerate(self.names):
            h = h @ self.params[w].array + self.params[b].array
            if i < last:
                h = np.tanh(h) if self.hidden_activation == "tanh" else np.maximum(h, 0.0)
            elif self.output_activation == "tanh":
                h = np.tanh(h)
        return h

    def _check_input(self, shape) -> None:
        if len(shape) == 0 or shape[-1] != self.in_dim:
            raise DimensionError(f"Mlp expects last dim {self.in_dim}, got shape {shape}")


def mlp_forward(net: Mlp, x) -> Tensor:
    """Forward pass recording the tape; accepts one vector or a batch of rows."""
    h = as_tensor(x)
    net._check_input(h.shape)
    act = T.tanh if net.hidden_activation == "tanh" else T.relu
    last = len(net.names) - 1
    for i, (w, b) in enumerate(net.names):
        h = h @ net.params.tensor(w) + net.params.tensor(b)
        if i < last:
            h = act(h)
        elif net.output_activation == "tanh":
            h = T.tanh(h)
    return h


class GruCell:
    """Gated recurrent unit.

    u = sigmoid(x Wu + h Uu + bu), r = sigmoid(x Wr + h Ur + br),
    c = tanh(x Wc + (r * h) Uc + bc), h' = (1 - u) * h + u * c.
    """

    GATES = ("u", "r", "c")

    def __init__(self, input_dim: int, hidden_dim: int, params: ParameterSet | None = None,
                 prefix: str = "", seed: int = 0, init: str = "xavier"):
        if input_dim <= 0 or hidden_dim <= 0:
            raise ArgumentError("GRU dims must be positive")
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        self.params = params if params is not None else ParameterSet(seed)
        self.prefix = prefix
        for g in self.GATES:
            self.params.add(f"{prefix}W{g}", (input_dim, hidden_dim), init=init)
            self.params.add(f"{prefix}U{g}", (hidden_dim, hidden_dim), init=init)
            self.params.add(f"{prefix}b{g}", (hidden_dim,), init="zeros")

    def num_params(self) -> int:
        i, h = self.input_dim, self.hidden_dim
        return 3 * (i * h + h * h + h)

    def p(self, kind: str, gate: str) -> Tensor:
        return self.params.tensor(f"{self.prefix}{kind}{gate}")

    def a(self, kind: str, gate: str) -> np.ndarray:
        return self.params[f"{self.prefix}{kind}{gate}"].array

    def predict_step(self, hidden: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Tape-free GRU step for evaluation."""
        _check_gru_dims(self, np.shape(hidden), np.shape(x))
        sig = T._sigmoid
        u = sig(x @ self.a("W", "u") + hidden @ self.a("U", "u") + self.a("b", "u"))
        r = sig(x @ self.a("W", "r") + hidden @ self.a("U", "r") + self.a("b", "r"))
        c = np.tanh(x @ self.a("W", "c") + (r * hidden) @ self.a("U", "c") + self.a("b", "c"))
        return (1.0 - u) * hidden + u * c


def _check_gru_dims(cell: GruCell, hshape, xshape) -> None:
    if len(hshape) == 0 or hshape[-1] != cell.hidden_dim:
        raise DimensionError(f"hidden must end in {cell.hidden_dim}, got {hshape}")
    if len(xshape) == 0 or xshape[-1] != cell.input_dim:
        raise DimensionError(f"input must end in {cell.input_dim}, got {xshape}")
    if hshape[:-1] != xshape[:-1]:
        raise DimensionError(f"batch shapes differ: {hshape} vs {xshape}")


def gru_step(cell: GruCell, hidden, x) -> Tensor:
    """One recorded GRU step; differentiable in the cell parameters, hidden, and x."""
    hidden, x = as_tensor(hidden), as_tensor(x)
    _check_gru_dims(cell, hidden.shape, x.shape)
    u = T.sigmoid(x @ cell.p("W", "u") + hidden @ cell.p("U", "u") + cell.p("b", "u"))
    r = T.sigmoid(x @ cell.p("W", "r") + hidden @ cell.p("U", "r") + cell.p("b", "r"))
    c = T.tanh(x @ cell.p("W", "c") + (r * hidden) @ cell.p("U", "c") + cell.p("b", "c"))
    return (1.0 - u) * hidden + u * c


def gru_sequence(cell: GruCell, xs, hidden=None) -> Tensor:
    """Final hidden state after running ``cell`` over xs (batch, length, input_dim).

    Recorded as a single tape node with a hand-written backward-through-time, which
    is far cheaper than unrolling ``gru_step``; the two agree to rounding.
    """
    xs = as_tensor(xs)
    if xs.ndim != 3 or xs.shape[1] == 0:
        raise DimensionError(f"sequence batch must be (batch, length>0, input), got {xs.shape}")
    B, L, _ = xs.shape
    h0 = as_tensor(np.zeros((B, cell.hidden_dim)) if hidden is None else hidden)
    _check_gru_dims(cell, h0.shape, xs.shape[::2])
    keys = [(k, g) for k in ("W", "U", "b") for g in cell.GATES]
    ptens = [cell.p(k, g) for k, g in keys]
    P = {kg: t.value for kg, t in zip(keys, ptens)}
    X = xs.value
    sig = T._sigmoid
    # input projections for every step at once
    xw = {g: X @ P["W", g] + P["b", g] for g in cell.GATES}
    H = np.empty((L + 1, B, cell.hidden_dim))
    H[0] = h0.value
    Us, Rs, Cs = (np.empty((L, B, cell.hidden_dim)) for _ in range(3))
    for t in range(L):
        h = H[t]
        u = sig(xw["u"][:, t] + h @ P["U", "u"])
        r = sig(xw["r"][:, t] + h @ P["U", "r"])
        c = np.tanh(xw["c"][:, t] + (r * h) @ P["U", "c"])
        Us[t], Rs[t], Cs[t] = u, r, c
        H[t + 1] = (1.0 - u) * h + u * c

    def grad_fn(g):
        grads = {kg: np.zeros_like(v) for kg, v in P.items()}
        dA = {gate: np.empty((B, L, cell.hidden_dim)) for gate in cell.GATES}
        dh = g
        for t in range(L - 1, -1, -1):
            h, u, r, c = H[t], Us[t], Rs[t], Cs[t]
            dac = dh * u * (1.0 - c * c)
            dau = dh * (c - h) * u * (1.0 - u)
            drh = dac @ P["U", "c"].T
            dar = drh * h * r * (1.0 - r)
            grads["U", "c"] += (r * h).T @ dac
            grads["U", "u"] += h.T @ dau
            grads["U", "r"] += h.T @ dar
            dh = (dh * (1.0 - u) + drh * r + dau @ P["U", "u"].T + dar @ P["U", "r"].T)
            dA["u"][:, t], dA["r"][:, t], dA["c"][:, t] = dau, dar, dac
        dx = np.zeros_like(X)
        flat_x = X.reshape(B * L, -1)
        for gate in cell.GATES:
            flat = dA[gate].reshape(B * L, -1)
            grads["W", gate] += flat_x.T @ flat
            grads["b", gate] += flat.sum(axis=0)
            dx += dA[gate] @ P["W", gate].T
        return (*(grads[kg] for kg in keys), dx, dh)

    return T._node(H[L], (*ptens, xs, h0), grad_fn)
