"""Minimal deterministic neural substrate.

Dense matrices are plain 2-d float64 ``numpy`` arrays (row-major).  On top of
them this module provides fixed-topology MLPs with hand-written reverse-mode
gradients, the bias-corrected Adam update, diagonal-Gaussian densities and KL,
and the reparameterization sample.  Everything here is a pure function of its
inputs (and, where applicable, an explicit random stream).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingDivergenceError

Array = np.ndarray

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0

ACTIVATIONS = ("relu", "identity")


@dataclass
class MlpParams:
    """Weights and biases of a fully connected network.

    ``weights[i]`` has shape ``(layer_sizes[i], layer_sizes[i+1])``.  The
    hidden-layer activation applies to every layer except the last, which is
    always identity.
    """

    layer_sizes: list[int]
    weights: list[Array]
    biases: list[Array]
    activation: str = "relu"

    def validate(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("weights/biases count does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect:
                raise ShapeError(f"weights[{i}] has shape {w.shape}, expected {expect}")
            if b.shape != (self.layer_sizes[i + 1],):
                raise ShapeError(f"biases[{i}] has shape {b.shape}, expected ({expect[1]},)")

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class MlpGrads:
    """Per-parameter gradients, same shapes as the MlpParams they refer to."""

    weights: list[Array]
    biases: list[Array]


def mlp_init(layer_sizes: list[int], rng: np.random.Generator, activation: str = "relu") -> MlpParams:
    """Glorot-normal weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(scale * rng.standard_normal((fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    params = MlpParams(list(layer_sizes), weights, biases, activation)
    params.validate()
    return params


def _forward_cached(params: MlpParams, x: Array) -> tuple[Array, list[Array]]:
    """Forward pass keeping each layer's input (post-activation)."""
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last and params.activation == "relu":
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def mlp_forward(params: MlpParams, x: Array) -> Array:
    """Apply the network to a batch ``x`` of shape (n, layer_sizes[0])."""
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ShapeError(
            f"input has shape {x.shape}, expected (n, {params.layer_sizes[0]})"
        )
    out, _ = _forward_cached(params, x)
    return out


def _backward_cached(
    params: MlpParams, acts: list[Array], upstream_grad: Array
) -> tuple[MlpGrads, Array]:
    """Reverse pass given cached activations from ``_forward_cached``."""
    n_layers = len(params.weights)
    d_w: list[Array] = [None] * n_layers  # type: ignore[list-item]
    d_b: list[Array] = [None] * n_layers  # type: ignore[list-item]
    g = upstream_grad
    for i in range(n_layers - 1, -1, -1):
        inp = acts[i]
        d_w[i] = inp.T @ g
        d_b[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0 and params.activation == "relu":
            g = g * (acts[i] > 0.0)
    return MlpGrads(d_w, d_b), g


def mlp_backward(
    params: MlpParams, x: Array, upstream_grad: Array
) -> tuple[MlpGrads, Array]:
    """Gradients of ``sum(mlp_forward(params, x) * upstream_grad)``.

    Returns parameter gradients and the gradient w.r.t. the input batch.
    """
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ShapeError(f"input has shape {x.shape}, expected (n, {params.layer_sizes[0]})")
    out_dim = params.layer_sizes[-1]
    if upstream_grad.shape != (x.shape[0], out_dim):
        raise ShapeError(
            f"upstream grad has shape {upstream_grad.shape}, expected ({x.shape[0]}, {out_dim})"
        )
    _, acts = _forward_cached(params, x)
    return _backward_cached(params, acts, upstream_grad)


@dataclass
class OptState:
    """Adam accumulators for one MlpParams."""

    step: int
    first_moment: MlpGrads
    second_moment: MlpGrads
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: MlpParams, learning_rate: float = 1e-3) -> OptState:
    zeros = lambda arrs: [np.zeros_like(a) for a in arrs]
    return OptState(
        step=0,
        first_moment=MlpGrads(zeros(params.weights), zeros(params.biases)),
        second_moment=MlpGrads(zeros(params.weights), zeros(params.biases)),
        learning_rate=learning_rate,
    )


def adam_step(
    params: MlpParams, grads: MlpGrads, state: OptState
) -> tuple[MlpParams, OptState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    lr, b1, b2, eps = state.learning_rate, state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t

    def update(p: Array, g: Array, m: Array, v: Array, name: str):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {name}")
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * g * g
        p_new = p - lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + eps)
        return p_new, m_new, v_new

    new_w, new_mw, new_vw = [], [], []
    for i, (p, g, m, v) in enumerate(
        zip(params.weights, grads.weights, state.first_moment.weights, state.second_moment.weights)
    ):
        pn, mn, vn = update(p, g, m, v, f"weights[{i}]")
        new_w.append(pn)
        new_mw.append(mn)
        new_vw.append(vn)
    new_b, new_mb, new_vb = [], [], []
    for i, (p, g, m, v) in enumerate(
        zip(params.biases, grads.biases, state.first_moment.biases, state.second_moment.biases)
    ):
        pn, mn, vn = update(p, g, m, v, f"biases[{i}]")
        new_b.append(pn)
        new_mb.append(mn)
        new_vb.append(vn)

    new_params = MlpParams(list(params.layer_sizes), new_w, new_b, params.activation)
    new_state = OptState(
        step=t,
        first_moment=MlpGrads(new_mw, new_mb),
        second_moment=MlpGrads(new_vw, new_vb),
        learning_rate=lr,
        beta1=b1,
        beta2=b2,
        epsilon=eps,
    )
    return new_params, new_state


@dataclass
class GaussianHead:
    """Diagonal Gaussian given by per-dimension mean and log-variance.

    log_var is clamped to [LOG_VAR_MIN, LOG_VAR_MAX] on construction to keep
    densities and KL finite.
    """

    mean: Array
    log_var: Array

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_var = np.clip(np.asarray(self.log_var, dtype=float), LOG_VAR_MIN, LOG_VAR_MAX)
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(
                f"mean shape {self.mean.shape} != log_var shape {self.log_var.shape}"
            )


def gaussian_kl(q: GaussianHead, p: GaussianHead):
    """KL(q || p) for diagonal Gaussians, summed over the last axis.

    Scalar for vector heads, per-example vector for batched (n, d) heads.
    Non-negative by construction.
    """
    if q.mean.shape != p.mean.shape:
        raise ShapeError(f"KL between shapes {q.mean.shape} and {p.mean.shape}")
    diff = q.mean - p.mean
    term = np.exp(q.log_var - p.log_var) + diff * diff * np.exp(-p.log_var) - 1.0 + (
        p.log_var - q.log_var
    )
    return 0.5 * term.sum(axis=-1)


def gaussian_log_likelihood(x: Array, head: GaussianHead):
    """Sum of per-dimension Gaussian log densities of ``x`` under ``head``."""
    x = np.asarray(x, dtype=float)
    if x.shape != head.mean.shape:
        raise ShapeError(f"x shape {x.shape} != head shape {head.mean.shape}")
    diff = x - head.mean
    term = np.log(2.0 * np.pi) + head.log_var + diff * diff * np.exp(-head.log_var)
    return -0.5 * term.sum(axis=-1)


def reparameterize(head: GaussianHead, rng: np.random.Generator) -> Array:
    """Draw mean + exp(log_var / 2) * eps with eps standard normal."""
    eps = rng.standard_normal(head.mean.shape)
    return head.mean + np.exp(0.5 * head.log_var) * eps
