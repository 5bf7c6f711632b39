"""Perceptual distance on L2-normalised embeddings and the triplet ranking loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12


class DegenerateEmbeddingError(FloatingPointError):
    """An embedding norm fell below ``EPS``; normalisation is undefined."""


@dataclass(frozen=True, eq=False)
class LossReport:
    loss: float
    per_triplet: np.ndarray
    active_count: int

    @property
    def n(self) -> int:
        return len(self.per_triplet)

    @property
    def satisfaction(self) -> float:
        """Fraction of triplets whose hinge is exactly zero."""
        return 1.0 - self.active_count / self.n


def _norms(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(~(norms > EPS)):
        raise DegenerateEmbeddingError(f"embedding norm below {EPS:g}")
    return norms


def normalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / _norms(x)


def perceptual_distance(xi, xj) -> float | np.ndarray:
    """Squared Euclidean distance between the unit-normalised inputs, in [0, 4].

    Broadcasts over leading axes.
    """
    diff = normalize(xi) - normalize(xj)
    return np.sum(diff * diff, axis=-1)


def _check_triplets(embeddings, triplets):
    x = np.asarray(embeddings, dtype=np.float64)
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if len(t) == 0:
        raise ValueError("triplet loss is undefined for an empty triplet list")
    if t.min() < 0 or t.max() >= len(x):
        raise IndexError("triplet index out of range")
    return x, t


def _hinge(u, t, alpha):
    d_ap = np.sum((u[t[:, 0]] - u[t[:, 1]]) ** 2, axis=1)
    d_an = np.sum((u[t[:, 0]] - u[t[:, 2]]) ** 2, axis=1)
    return d_ap - d_an + alpha


def triplet_loss(embeddings, triplets, alpha: float) -> LossReport:
    x, t = _check_triplets(embeddings, triplets)
    if alpha < 0:
        raise ValueError("margin must be non-negative")
    per = np.maximum(_hinge(normalize(x), t, alpha), 0.0)
    return LossReport(float(per.mean()), per, int(np.count_nonzero(per > 0)))


def triplet_loss_grad(embeddings, triplets, alpha: float):
    """Loss report plus d(loss)/d(embeddings), one row per embedding.

    Inactive triplets (hinge argument <= 0, kink included) contribute nothing.
    """
    x, t = _check_triplets(embeddings, triplets)
    if alpha < 0:
        raise ValueError("margin must be non-negative")
    norms = _norms(x)
    u = x / norms
    arg = _hinge(u, t, alpha)
    per = np.maximum(arg, 0.0)
    report = LossReport(float(per.mean()), per, int(np.count_nonzero(per > 0)))

    active = arg > 0
    ta = t[active]
    ua, up, un = u[ta[:, 0]], u[ta[:, 1]], u[ta[:, 2]]
    scale = 2.0 / len(t)
    g_u = np.zeros_like(u)
    # sequential scatter-add keeps the reduction order fixed
    np.add.at(g_u, ta[:, 0], scale * (un - up))
    np.add.at(g_u, ta[:, 1], scale * (up - ua))
    np.add.at(g_u, ta[:, 2], scale * (ua - un))
    # back through x -> x/|x|: (I - u u^T) g / |x|
    grad = (g_u - u * np.sum(u * g_u, axis=1, keepdims=True)) / norms
    return report, grad


def finite_diff_grad(embeddings, triplets, alpha: float, h: float = 1e-6) -> np.ndarray:
    """Central differences of :func:`triplet_loss`, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(embeddings, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = triplet_loss(x, triplets, alpha).loss
        x[idx] = orig - h
        down = triplet_loss(x, triplets, alpha).loss
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def hinge_margin_to_kink(embeddings, triplets, alpha: float) -> float:
    """Smallest |hinge argument| over all triplets; near zero means a subgradient point."""
    x, t = _check_triplets(embeddings, triplets)
    return float(np.min(np.abs(_hinge(normalize(x), t, alpha))))


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
