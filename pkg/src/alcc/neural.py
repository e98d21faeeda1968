"""Small dense networks in float64 with hand-written backprop.

Batches are row-major: inputs have shape (batch, n_in) or (n_in,), and each
weight matrix maps a row vector, ``W[l]`` has shape (n_in, n_out).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class NetworkSpec:
    layer_widths: tuple
    hidden_activation: str = "relu"
    output_activation: str = "identity"
    init_seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("need input, at least one hidden layer, and output widths")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation != "relu":
            raise ValueError("only relu hidden layers are supported")
        if self.output_activation not in ("tanh", "identity"):
            raise ValueError(f"output activation must be tanh or identity, got {self.output_activation!r}")

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]


@dataclass
class NetworkParams:
    weights: list
    biases: list

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list:
        """Weights and biases interleaved layer by layer (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def shapes(self) -> list:
        return [a.shape for a in self.arrays()]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(spec: NetworkSpec) -> NetworkParams:
    """Glorot-uniform weights, zero biases, reproducible from ``spec.init_seed``."""
    rng = np.random.default_rng(spec.init_seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        limit = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return NetworkParams(weights, biases)


def check_params(params: NetworkParams, spec: NetworkSpec) -> None:
    expected = []
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        expected.extend([(n_in, n_out), (n_out,)])
    if params.shapes() != expected:
        raise ValueError(f"parameter shapes {params.shapes()} do not match spec {expected}")


def _as_batch(params: NetworkParams, spec: NetworkSpec, x) -> tuple:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != spec.n_in:
        raise ValueError(f"input width {x.shape} does not match network input {spec.n_in}")
    if len(params.weights) != len(spec.layer_widths) - 1:
        raise ValueError("parameter depth does not match spec")
    return xb, single


def forward_cache(params: NetworkParams, spec: NetworkSpec, x) -> tuple:
    """Forward pass keeping the per-layer inputs needed by :func:`backward`."""
    h, single = _as_batch(params, spec, x)
    layer_inputs = []
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(h)
        z = h @ w + b
        if l < last:
            h = np.maximum(z, 0.0)
        elif spec.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    return (h[0] if single else h), (layer_inputs, h, single)


def forward(params: NetworkParams, spec: NetworkSpec, x) -> np.ndarray:
    return forward_cache(params, spec, x)[0]


def backward(params: NetworkParams, spec: NetworkSpec, x, upstream, cache=None) -> tuple:
    """Reverse-mode gradients of ``sum(upstream * forward(x))``.

    Returns ``(param_grads, input_grad)``; gradients are summed over the batch.
    """
    if cache is None:
        _, cache = forward_cache(params, spec, x)
    layer_inputs, out, single = cache
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if single and g.ndim == 1 else g
    if g.shape != out.shape:
        raise ValueError(f"upstream gradient shape {g.shape} does not match output {out.shape}")
    if spec.output_activation == "tanh":
        g = g * (1.0 - out * out)
    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        h = layer_inputs[l]
        gw[l] = h.T @ g
        gb[l] = g.sum(axis=0)
        g = g @ params.weights[l].T
        if l > 0:
            # ReLU derivative, taken as 0 at the kink.
            g = g * (h > 0.0)
    return NetworkParams(gw, gb), (g[0] if single else g)


# ------------------------------------------------------------------ optimiser


@dataclass
class OptimizerState:
    learning_rate: float
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def make_optimizer(params: NetworkParams, learning_rate: float, kind: str = "adam") -> OptimizerState:
    if kind not in ("adam", "sgd"):
        raise ValueError(f"optimizer kind must be adam or sgd, got {kind!r}")
    arrays = params.arrays()
    return OptimizerState(
        learning_rate, kind, m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays]
    )


def optimizer_step(params: NetworkParams, grads: NetworkParams, state: OptimizerState) -> tuple:
    """One descent step, applied in place; returns ``(params, state)`` for convenience."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if [a.shape for a in p_arrays] != [a.shape for a in g_arrays]:
        raise ValueError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        raise ValueError("non-finite gradient")
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(p_arrays, g_arrays):
            p -= lr * g
        state.step += 1
        return params, state
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    scale = lr * math.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= scale * m / (np.sqrt(v) + state.eps * math.sqrt(1.0 - b2**t))
    return params, state
