"""Small dense numerical helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_matrix(a, name: str = "array") -> np.ndarray:
    """Return ``a`` as a 2-D float64 array, rejecting non-finite entries."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def pairwise_sq_dists(a, b) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``a`` and ``b``.

    Parameters
    ----------
    a : array_like, shape (n, m)
    b : array_like, shape (p, m)

    Returns
    -------
    ndarray, shape (n, p)
        ``out[i, j] = sum_d (a[i, d] - b[j, d]) ** 2``, clipped at zero.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    out = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    # the expanded form can go slightly negative through cancellation
    np.maximum(out, 0.0, out=out)
    if a is b or (a.shape == b.shape and np.array_equal(a, b)):
        np.fill_diagonal(out, 0.0)
    return out


def median(values) -> float:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("median of empty input")
    return float(np.median(values))


def log_sum_exp(values, axis=None):
    """Overflow-safe ``log(sum(exp(values)))`` via max shifting."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("log_sum_exp of empty input")
    vmax = np.max(values, axis=axis, keepdims=True)
    vmax = np.where(np.isfinite(vmax), vmax, 0.0)
    out = np.log(np.sum(np.exp(values - vmax), axis=axis, keepdims=True)) + vmax
    if axis is None:
        return float(out.ravel()[0])
    return np.squeeze(out, axis=axis)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; the stream is fixed by the seed on every platform."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child generators from ``rng``.

    The parent stream advances by one draw, so repeated splits differ.
    """
    seeds = rng.integers(0, 2**63, size=n, dtype=np.int64)
    return [make_rng(np.random.SeedSequence(int(s))) for s in seeds]
