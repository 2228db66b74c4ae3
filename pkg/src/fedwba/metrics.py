"""Predictive evaluation of particle ensembles and analytic oracles."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import MlpShape, forward
from .numerics import as_matrix

N_BINS = 10


def predict_ensemble(particles, x, shape: MlpShape) -> np.ndarray:
    """Posterior predictive: uniform mixture of per-particle softmax outputs."""
    particles = as_matrix(particles, "particles")
    if particles.shape[1] != shape.flat_len:
        raise ValueError(
            f"particles have {particles.shape[1]} parameters, shape needs "
            f"{shape.flat_len}")
    return forward(shape, particles, x).mean(axis=0)


def _predictions(particles, dataset, shape):
    if len(dataset.labels) == 0:
        raise ValueError("empty dataset")
    probs = predict_ensemble(particles, dataset.features, shape)
    return probs, np.asarray(dataset.labels)


def accuracy_from_probs(probs, labels) -> float:
    # np.argmax returns the lowest index among ties
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def accuracy(particles, dataset, shape: MlpShape) -> float:
    probs, labels = _predictions(particles, dataset, shape)
    return accuracy_from_probs(probs, labels)


@dataclass(frozen=True)
class ReliabilityBins:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean_confidence: np.ndarray
    mean_accuracy: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_low", "bin_high", "count", "mean_conf", "mean_acc"])
            for b in range(len(self.counts)):
                writer.writerow([
                    repr(float(self.bin_edges[b])), repr(float(self.bin_edges[b + 1])),
                    int(self.counts[b]), repr(float(self.mean_confidence[b])),
                    repr(float(self.mean_accuracy[b]))])

    @classmethod
    def from_csv(cls, path) -> "ReliabilityBins":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        edges = [float(r["bin_low"]) for r in rows] + [float(rows[-1]["bin_high"])]
        return cls(np.array(edges), np.array([int(r["count"]) for r in rows]),
                   np.array([float(r["mean_conf"]) for r in rows]),
                   np.array([float(r["mean_acc"]) for r in rows]))


def ece_from_probs(probs, labels, bins: int = N_BINS):
    """Expected calibration error over equal-width confidence bins.

    Bin ``b`` covers ``(edge_b, edge_{b+1}]``; a confidence of exactly zero
    falls in the first bin. Empty bins contribute nothing.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty dataset")
    confidence = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, confidence, side="left") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=confidence, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    nonempty = counts > 0
    mean_conf = np.zeros(bins)
    mean_acc = np.zeros(bins)
    mean_conf[nonempty] = conf_sum[nonempty] / counts[nonempty]
    mean_acc[nonempty] = acc_sum[nonempty] / counts[nonempty]
    value = float(np.sum(counts / len(labels) * np.abs(mean_acc - mean_conf)))
    return value, ReliabilityBins(edges, counts, mean_conf, mean_acc)


def ece(particles, dataset, shape: MlpShape, bins: int = N_BINS):
    probs, labels = _predictions(particles, dataset, shape)
    return ece_from_probs(probs, labels, bins)


def gaussian_kl(mean_q, cov_q, mean_p, cov_p) -> float:
    """Closed-form ``KL(N(mean_q, cov_q) || N(mean_p, cov_p))``."""
    mean_q = np.atleast_1d(np.asarray(mean_q, dtype=np.float64))
    mean_p = np.atleast_1d(np.asarray(mean_p, dtype=np.float64))
    cov_q = np.atleast_2d(np.asarray(cov_q, dtype=np.float64))
    cov_p = np.atleast_2d(np.asarray(cov_p, dtype=np.float64))
    m = mean_q.size
    chol_p = np.linalg.cholesky(cov_p)
    diff = np.linalg.solve(chol_p, mean_p - mean_q)
    inv_p_cov_q = np.linalg.solve(cov_p, cov_q)
    _, logdet_p = np.linalg.slogdet(cov_p)
    sign_q, logdet_q = np.linalg.slogdet(cov_q)
    if sign_q <= 0:
        raise ValueError("fitted covariance is singular")
    return float(0.5 * (np.trace(inv_p_cov_q) + diff @ diff - m + logdet_p - logdet_q))


def gaussian_fit_kl(particles, true_mean, true_cov, jitter: float = 1e-6,
                    diagonal: bool = False) -> float:
    """KL from a moment-matched Gaussian fit of the particles to the truth.

    The fit uses the empirical (1/N) covariance of the particle measure plus
    ``jitter`` on the diagonal. ``diagonal=True`` keeps only the variances,
    which allows fewer particles than dimensions.
    """
    X = as_matrix(particles, "particles")
    n, m = X.shape
    mean = X.mean(axis=0)
    centred = X - mean
    if diagonal:
        cov = np.diag((centred ** 2).mean(axis=0))
    else:
        if n <= m and jitter == 0:
            raise ValueError("need more particles than dimensions for a full fit")
        cov = centred.T @ centred / n
    cov = cov + jitter * np.eye(m)
    return gaussian_kl(mean, cov, true_mean, true_cov)


def w2_to_point(particles, point) -> float:
    """W2 distance from the particle measure to a Dirac mass at ``point``."""
    X = as_matrix(particles, "particles")
    point = np.asarray(point, dtype=np.float64).ravel()
    if point.size != X.shape[1]:
        raise ValueError(f"point has dimension {point.size}, particles {X.shape[1]}")
    return float(np.sqrt(np.mean(np.sum((X - point) ** 2, axis=1))))
