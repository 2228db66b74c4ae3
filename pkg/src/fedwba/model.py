"""Single-hidden-layer ReLU classifier over flat parameter vectors.

A particle is one flat vector laid out as ``[W1, b1, W2, b2]`` with ``W1`` of
shape (input_dim, hidden_dim) and ``W2`` of shape (hidden_dim, classes), both
row-major. Every function here also accepts a stack of particles of shape
(n, flat_len) and evaluates all of them in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MlpShape:
    input_dim: int
    hidden_dim: int
    classes: int

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "classes"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def flat_len(self) -> int:
        d, h, c = self.input_dim, self.hidden_dim, self.classes
        return d * h + h + h * c + c


def unflatten(shape: MlpShape, theta):
    """Split flat parameters into ``(W1, b1, W2, b2)`` views.

    Leading batch axes of ``theta`` are preserved.
    """
    theta = np.asarray(theta)
    if theta.shape[-1] != shape.flat_len:
        raise ValueError(
            f"expected {shape.flat_len} parameters, got {theta.shape[-1]}")
    d, h, c = shape.input_dim, shape.hidden_dim, shape.classes
    lead = theta.shape[:-1]
    o1 = d * h
    o2 = o1 + h
    o3 = o2 + h * c
    W1 = theta[..., :o1].reshape(lead + (d, h))
    b1 = theta[..., o1:o2]
    W2 = theta[..., o2:o3].reshape(lead + (h, c))
    b2 = theta[..., o3:]
    return W1, b1, W2, b2


def flatten(W1, b1, W2, b2) -> np.ndarray:
    W1, b1, W2, b2 = (np.asarray(p, dtype=np.float64) for p in (W1, b1, W2, b2))
    lead = W1.shape[:-2]
    parts = [p.reshape(lead + (-1,)) for p in (W1, b1, W2, b2)]
    return np.concatenate(parts, axis=-1)


def _check_inputs(shape, theta, x):
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters contain non-finite entries")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != shape.input_dim:
        raise ValueError(
            f"feature dimension {x.shape[-1]} does not match input_dim "
            f"{shape.input_dim}")
    return theta, x


def _hidden_and_logits(shape, theta, X):
    W1, b1, W2, b2 = unflatten(shape, theta)
    pre = np.matmul(X, W1) + b1[..., None, :]
    hidden = np.maximum(pre, 0.0)
    logits = np.matmul(hidden, W2) + b2[..., None, :]
    return pre, hidden, logits


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def forward(shape: MlpShape, theta, x) -> np.ndarray:
    """Class probabilities for one sample or a batch.

    ``theta`` may be one particle (flat_len,) or a stack (n, flat_len); ``x``
    may be one feature vector or a batch (s, input_dim). Output drops the
    axes that were absent on input.
    """
    theta, x = _check_inputs(shape, theta, x)
    single_x = x.ndim == 1
    X = x[None, :] if single_x else x
    _, _, logits = _hidden_and_logits(shape, theta, X)
    probs = np.exp(_log_softmax(logits))
    return probs[..., 0, :] if single_x else probs


def _check_labels(shape, X, y):
    y = np.asarray(y)
    if X.ndim != 2 or y.ndim != 1 or len(y) != X.shape[0]:
        raise ValueError("data must be a (s, input_dim) batch with s labels")
    if len(y) == 0:
        raise ValueError("empty batch")
    if y.min() < 0 or y.max() >= shape.classes:
        raise ValueError(f"labels must lie in [0, {shape.classes})")
    return y.astype(np.int64)


def log_likelihood(shape: MlpShape, theta, X, y):
    """Sum over the batch of ``log p(y_i | x_i, theta)``."""
    theta, X = _check_inputs(shape, theta, X)
    y = _check_labels(shape, X, y)
    _, _, logits = _hidden_and_logits(shape, theta, X)
    logp = _log_softmax(logits)
    return np.take_along_axis(logp, y[:, None], axis=-1)[..., 0].sum(axis=-1)


def grad_log_likelihood(shape: MlpShape, theta, X, y, return_value=False):
    """Exact gradient of :func:`log_likelihood` by backpropagation.

    The ReLU subgradient at zero is taken as zero. With ``return_value`` the
    log-likelihood is returned alongside the gradient.
    """
    theta, X = _check_inputs(shape, theta, X)
    y = _check_labels(shape, X, y)
    W1, _, W2, _ = unflatten(shape, theta)
    pre, hidden, logits = _hidden_and_logits(shape, theta, X)
    logp = _log_softmax(logits)
    delta = -np.exp(logp)
    rows = np.arange(len(y))
    delta[..., rows, y] += 1.0  # onehot - softmax

    dW2 = np.matmul(np.swapaxes(hidden, -1, -2), delta)
    db2 = delta.sum(axis=-2)
    dpre = np.matmul(delta, np.swapaxes(W2, -1, -2))
    dpre *= pre > 0
    dW1 = np.matmul(X.T, dpre)
    db1 = dpre.sum(axis=-2)
    grad = flatten(dW1, db1, dW2, db2)
    if return_value:
        value = logp[..., rows, y].sum(axis=-1)
        return grad, value
    return grad
