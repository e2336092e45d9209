"""Dense linear algebra helpers, activations, losses and Adam.

Everything here is a thin, shape-checked layer over numpy. Arrays are
float64 and C-ordered (row-major) throughout.
"""

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul needs at least 1-d operands")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def log_softmax(x, axis=-1):
    """Stabilised ``x - logsumexp(x)`` along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError("log_softmax of an empty vector")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def nll_loss(log_probs, target):
    """Negative log likelihood of ``target``.

    ``log_probs`` may be a single vector with an integer target, or a
    ``(batch, n)`` matrix with one target per row; the batch form returns
    the per-sample losses.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    n = log_probs.shape[-1]
    target = np.asarray(target)
    if np.any(target < 0) or np.any(target >= n):
        raise IndexError(f"target {target} out of range for {n} classes")
    if log_probs.ndim == 1:
        return float(-log_probs[int(target)])
    return -np.take_along_axis(log_probs, target.reshape(-1, 1), axis=1)[:, 0]


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper):
        params = np.asarray(params)
        return cls(np.zeros_like(params, dtype=np.float64),
                   np.zeros_like(params, dtype=np.float64), **hyper)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Returns ``(params, state)`` for convenience.
    """
    if not (params.shape == grads.shape == state.first_moment.shape
            == state.second_moment.shape):
        raise ShapeError(f"adam shapes disagree: params {params.shape}, "
                         f"grads {grads.shape}, moments {state.first_moment.shape}")
    state.step_count += 1
    t = state.step_count
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


@dataclass
class Adam:
    """Adam over a dict of named parameter arrays."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, params, grads):
        for name, p in params.items():
            if name not in self.states:
                self.states[name] = AdamState.zeros_like(
                    p, learning_rate=self.learning_rate, beta1=self.beta1,
                    beta2=self.beta2, epsilon=self.epsilon)
            adam_step(p, grads[name], self.states[name])
