"""From-scratch MLP with ELU hidden layers, a diagonal-Gaussian policy head,
exact backpropagation, and an adaptive-moment optimizer.

No autodiff: `forward` caches exactly what `backward` needs, and the
gradients are analytic. All math is dtype-generic so the finite-difference
checks can run the same code in extended precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class MlpParams:
    """Weights/biases for an affine->ELU chain with a linear output layer.

    `log_std` is present on policy networks only; it is held fixed unless
    the training config opts into learning it.
    """

    weights: list            # weights[i]: (out, in)
    biases: list             # biases[i]: (out,)
    log_std: np.ndarray = None

    @property
    def sizes(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            log_std=None if self.log_std is None else self.log_std.astype(dtype),
        )

    def copy(self) -> "MlpParams":
        return self.astype(self.dtype)

    def flat(self) -> np.ndarray:
        parts = [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        if self.log_std is not None:
            parts.append(self.log_std.ravel())
        return np.concatenate(parts)


@dataclass
class GradientBundle:
    d_weights: list
    d_biases: list
    d_log_std: np.ndarray = None

    def flat(self) -> np.ndarray:
        parts = [w.ravel() for w in self.d_weights] + [b.ravel() for b in self.d_biases]
        if self.d_log_std is not None:
            parts.append(self.d_log_std.ravel())
        return np.concatenate(parts)

    def allfinite(self) -> bool:
        ok = all(np.isfinite(w).all() for w in self.d_weights)
        ok = ok and all(np.isfinite(b).all() for b in self.d_biases)
        if self.d_log_std is not None:
            ok = ok and bool(np.isfinite(self.d_log_std).all())
        return ok


def _orthogonal(rng, rows, cols, gain, dtype):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))      # fix the sign ambiguity for determinism
    q = q.T if rows < cols else q
    return np.ascontiguousarray((gain * q[:rows, :cols]).astype(dtype))


def init_mlp(sizes, rng, out_gain=1.0, log_std=None, dtype=np.float32) -> MlpParams:
    """Orthogonal init, gain sqrt(2) on hidden layers, `out_gain` on the
    output layer (0.01 for policies so initial torques sit near zero)."""
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        last = i == len(sizes) - 2
        gain = out_gain if last else np.sqrt(2.0)
        weights.append(_orthogonal(rng, sizes[i + 1], sizes[i], gain, dtype))
        biases.append(np.zeros(sizes[i + 1], dtype=dtype))
    ls = None
    if log_std is not None:
        ls = np.full(sizes[-1], float(log_std), dtype=dtype)
    return MlpParams(weights=weights, biases=biases, log_std=ls)


def elu(x):
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def forward(params: MlpParams, x):
    """Affine->ELU chain with a linear last layer.

    x: (in,) or (batch, in). Returns (output, cache); the cache holds the
    layer inputs and pre-activations needed for an exact backward pass.
    """
    squeeze = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=params.dtype))
    if h.shape[1] != params.sizes[0]:
        raise ValueError(f"input width {h.shape[1]} != expected {params.sizes[0]}")
    inputs, preacts = [], []
    n_layers = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W.T + b
        if i < n_layers - 1:
            preacts.append(z)
            h = elu(z)
        else:
            h = z
    cache = (inputs, preacts)
    return (h[0] if squeeze else h), cache


def backward(params: MlpParams, cache, grad_out) -> GradientBundle:
    """Exact parameter gradients given d(loss)/d(output), summed over the
    batch. grad_out: same shape as the forward output."""
    inputs, preacts = cache
    g = np.atleast_2d(np.asarray(grad_out, dtype=params.dtype))
    if g.shape[0] != inputs[0].shape[0]:
        raise ValueError("grad_out batch size does not match the forward cache")
    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        d_weights[i] = g.T @ inputs[i]
        d_biases[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i]) * elu_grad(preacts[i - 1])
    return GradientBundle(d_weights=d_weights, d_biases=d_biases)


# ---------------------------------------------------------------------------
# diagonal-Gaussian policy head


def log_prob(params: MlpParams, x, action):
    """Log density of `action` under N(forward(x), exp(log_std)^2), summed
    over action dimensions. Returns a scalar for 1-D input, else (batch,)."""
    mean, _ = forward(params, x)
    std = np.exp(params.log_std)
    z = (np.asarray(action, dtype=params.dtype) - mean) / std
    d = params.log_std.shape[0]
    return -0.5 * (z * z).sum(axis=-1) - params.log_std.sum() - 0.5 * d * LOG_2PI


def sample_actions(params: MlpParams, x, rng):
    """Draw actions and return (action, mean). Noise is std-normal scaled."""
    mean, _ = forward(params, x)
    std = np.exp(params.log_std)
    eps = rng.standard_normal(mean.shape)
    return mean + std * eps.astype(params.dtype), mean


def entropy(params: MlpParams) -> float:
    """Entropy of the (state-independent) diagonal Gaussian."""
    d = params.log_std.shape[0]
    return float(params.log_std.sum() + 0.5 * d * (1.0 + LOG_2PI))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment gradient descent over an MlpParams instance."""

    def __init__(self, params: MlpParams, beta1=0.9, beta2=0.999, eps=1e-8,
                 train_log_std=False):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.train_log_std = train_log_std
        self.t = 0
        zeros = lambda arrs: [np.zeros_like(a) for a in arrs]
        self.m_w, self.v_w = zeros(params.weights), zeros(params.weights)
        self.m_b, self.v_b = zeros(params.biases), zeros(params.biases)
        if params.log_std is not None and train_log_std:
            self.m_s = np.zeros_like(params.log_std)
            self.v_s = np.zeros_like(params.log_std)

    def step(self, params: MlpParams, grads: GradientBundle, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t

        def upd(p, g, m, v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

        for i in range(len(params.weights)):
            upd(params.weights[i], grads.d_weights[i], self.m_w[i], self.v_w[i])
            upd(params.biases[i], grads.d_biases[i], self.m_b[i], self.v_b[i])
        if self.train_log_std and grads.d_log_std is not None:
            upd(params.log_std, grads.d_log_std, self.m_s, self.v_s)
