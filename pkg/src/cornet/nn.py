"""Dense tanh networks without bias vectors, exact backprop, and Adam.

Networks follow the recursion ``f_1(x) = W_1 x``, ``f_k(x) = W_k tanh(f_{k-1}(x))``
with an optional sigmoid on the last layer.  There are no per-layer bias
vectors; callers that need affine capacity append a constant-1 feature to
the input (see :func:`add_intercept`).

All functions accept either a single input vector of shape ``(d,)`` or a
batch of row vectors of shape ``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputShapeError, NumericError

HIDDEN_ACTIVATIONS = ("tanh",)
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")
FORMAT_HEADER = "# cornet-layerstack v1"


@dataclass(frozen=True)
class LayerStack:
    """Weights of a feedforward network, one ``(out_k, in_k)`` matrix per layer."""

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        dims = tuple(int(k) for k in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise InputShapeError(f"layer_dims must hold >= 2 positive ints, got {dims}")
        weights = tuple(np.asarray(w, dtype=float) for w in self.weights)
        if len(weights) != len(dims) - 1:
            raise InputShapeError(f"{len(dims) - 1} weight matrices expected, got {len(weights)}")
        for k, w in enumerate(weights):
            if w.shape != (dims[k + 1], dims[k]):
                raise InputShapeError(
                    f"layer {k}: weight shape {w.shape} != {(dims[k + 1], dims[k])}")
            if not np.all(np.isfinite(w)):
                raise NumericError(f"layer {k}: non-finite weight entries")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation {self.output_activation!r}")
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def __call__(self, x):
        return forward(self, x)

    def with_weights(self, weights) -> "LayerStack":
        return LayerStack(self.layer_dims, tuple(weights),
                          self.hidden_activation, self.output_activation)

    def max_norm_1inf(self) -> float:
        """Largest ``max_i sum_j |W_ij|`` over the layers (diagnostic only)."""
        return max(norm_1inf(w) for w in self.weights)


@dataclass(frozen=True)
class GradientSet:
    """One gradient matrix per layer, shape-matched to the owning stack."""

    grads: tuple[np.ndarray, ...]

    def __iter__(self):
        return iter(self.grads)

    def __len__(self):
        return len(self.grads)

    def __getitem__(self, k):
        return self.grads[k]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads)

    def scaled(self, s: float) -> "GradientSet":
        return GradientSet(tuple(s * g for g in self.grads))

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(tuple(a + b for a, b in zip(self.grads, other.grads)))


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")

    @classmethod
    def for_stack(cls, stack: LayerStack, **kwargs) -> "OptimizerState":
        return cls(first_moment=[np.zeros_like(w) for w in stack.weights],
                   second_moment=[np.zeros_like(w) for w in stack.weights], **kwargs)


def norm_1inf(w: np.ndarray) -> float:
    return float(np.max(np.sum(np.abs(w), axis=1)))


def add_intercept(x: np.ndarray) -> np.ndarray:
    """Append a constant-1 column (or entry, for a single vector)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.append(x, 1.0)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def init_stack(layer_dims, rng: np.random.Generator, output_activation="identity") -> LayerStack:
    """Uniform ``[-1/sqrt(in_k), 1/sqrt(in_k)]`` initialization per layer."""
    dims = tuple(int(k) for k in layer_dims)
    weights = []
    for k in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[k])
        weights.append(rng.uniform(-bound, bound, size=(dims[k + 1], dims[k])))
    return LayerStack(dims, tuple(weights), "tanh", output_activation)


def _as_batch(stack: LayerStack, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != stack.input_dim:
        raise InputShapeError(
            f"input has shape {x.shape}, network expects {stack.input_dim} features")
    return xb, single


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(weights, output_activation, xb: np.ndarray):
    """Return layer inputs (one per layer) and the final output."""
    inputs = []
    a = xb
    last = len(weights) - 1
    for k, w in enumerate(weights):
        inputs.append(a)
        z = a @ w.T
        a = np.tanh(z) if k < last else z
    if output_activation == "sigmoid":
        a = _sigmoid(a)
    return inputs, a


def _backprop(weights, inputs, g):
    """Backward sweep from the last pre-activation gradient ``g``."""
    grads = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        a_in = inputs[k]
        grads[k] = g.T @ a_in
        g = g @ weights[k]
        if k > 0:
            g = g * (1.0 - a_in * a_in)
    return grads, g


def forward(stack: LayerStack, x):
    """Evaluate the network on one vector or on a batch of rows."""
    xb, single = _as_batch(stack, x)
    _, out = _forward_cache(stack.weights, stack.output_activation, xb)
    return out[0] if single else out


def backprop(stack: LayerStack, x, upstream, *, wrt_preactivation=False):
    """Reverse-mode pass returning ``(GradientSet, input_gradient)``.

    The gradients are those of ``sum(upstream * forward(x))``.  With
    ``wrt_preactivation=True`` the upstream is taken to be the gradient with
    respect to the last layer's pre-activation (useful for a sigmoid output
    trained with cross-entropy, where that gradient is simply ``p - label``).
    """
    xb, single = _as_batch(stack, x)
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if single else g
    if g.shape != (xb.shape[0], stack.output_dim):
        raise InputShapeError(f"upstream shape {np.shape(upstream)} does not match output")
    inputs, out = _forward_cache(stack.weights, stack.output_activation, xb)
    if stack.output_activation == "sigmoid" and not wrt_preactivation:
        g = g * out * (1.0 - out)
    grads, g = _backprop(stack.weights, inputs, g)
    dx = g[0] if single else g
    return GradientSet(tuple(grads)), dx


def backward(stack: LayerStack, x, upstream) -> GradientSet:
    """Gradient of ``upstream . forward(x)`` with respect to every weight matrix."""
    return backprop(stack, x, upstream)[0]


def reverse_gradient(upstream, scale: float):
    """Backward rule of a gradient reversal layer: ``-scale * upstream``.

    The forward rule is the identity, so only the backward rule needs code.
    """
    if scale < 0:
        raise ValueError("gradient reversal scale must be nonnegative")
    return -scale * np.asarray(upstream, dtype=float)


def _adam_inplace(state: OptimizerState, grads, params) -> None:
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.learning_rate:
            p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


def adam_step(state: OptimizerState, grads: GradientSet, stack: LayerStack):
    """Apply one bias-corrected Adam update; returns ``(new_stack, new_state)``.

    Inputs are left untouched.
    """
    if len(grads) != len(stack.weights) or any(
            g.shape != w.shape for g, w in zip(grads, stack.weights)):
        raise InputShapeError("gradient shapes do not match the stack")
    if not grads.is_finite():
        raise NumericError("non-finite gradient entries passed to adam_step")
    new_state = OptimizerState(state.learning_rate, state.beta1, state.beta2, state.epsilon,
                               [m.copy() for m in state.first_moment] or
                               [np.zeros_like(w) for w in stack.weights],
                               [v.copy() for v in state.second_moment] or
                               [np.zeros_like(w) for w in stack.weights],
                               state.step_count)
    weights = [w.copy() for w in stack.weights]
    _adam_inplace(new_state, grads.grads, weights)
    return stack.with_weights(weights), new_state


class Adam:
    """Mutable Adam driver over a list of arrays, used inside training loops."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = params
        self.state = OptimizerState(learning_rate, beta1, beta2, epsilon,
                                    [np.zeros_like(p) for p in params],
                                    [np.zeros_like(p) for p in params])

    def step(self, grads) -> None:
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient during training")
        _adam_inplace(self.state, grads, self.params)


# serialization -------------------------------------------------------------

def dumps_stack(stack: LayerStack) -> str:
    lines = [FORMAT_HEADER,
             "dims " + " ".join(str(k) for k in stack.layer_dims),
             f"hidden {stack.hidden_activation}",
             f"output {stack.output_activation}"]
    for w in stack.weights:
        for row in w:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads_stack(text: str) -> LayerStack:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ValueError("not a cornet-layerstack v1 document")
    meta = {}
    for ln in lines[1:4]:
        key, _, value = ln.partition(" ")
        meta[key] = value.strip()
    dims = tuple(int(k) for k in meta["dims"].split())
    rows = iter(lines[4:])
    weights = []
    for k in range(len(dims) - 1):
        w = np.array([[float(v) for v in next(rows).split()] for _ in range(dims[k + 1])])
        weights.append(w.reshape(dims[k + 1], dims[k]))
    return LayerStack(dims, tuple(weights), meta["hidden"], meta["output"])


def save_stack(stack: LayerStack, path) -> None:
    Path(path).write_text(dumps_stack(stack), encoding="utf-8")


def load_stack(path) -> LayerStack:
    return loads_stack(Path(path).read_text(encoding="utf-8"))
