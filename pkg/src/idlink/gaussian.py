"""Closed-form geometry for diagonal Gaussian embeddings.

The squared 2-Wasserstein distance between N(mu1, diag(v1)) and
N(mu2, diag(v2)) reduces to

    ||mu1 - mu2||^2 + sum_j (sqrt(v1_j) - sqrt(v2_j))^2

which is the diagonal specialization of the general trace form
Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).

NumPy functions operate on :class:`GaussianEmbedding` values; the ``*_t``
twins operate on batched torch tensors and are differentiable (used by the
training losses). A variance floor of ``VARIANCE_FLOOR`` is applied uniformly
before any distance or divergence evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class GaussianEmbedding:
    """Diagonal Gaussian: mean vector and per-dimension variance vector."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.var, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        if mean.ndim != 1 or var.ndim != 1 or mean.shape != var.shape:
            raise ValueError("mean and var must be 1-d vectors of equal length")
        if not (np.isfinite(mean).all() and np.isfinite(var).all()):
            raise ValueError("mean and var must be finite")
        if (var <= 0).any():
            raise ValueError("variances must be strictly positive")

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def _check_dims(g1: GaussianEmbedding, g2: GaussianEmbedding) -> None:
    if g1.dim != g2.dim:
        raise ValueError(f"dimension mismatch: {g1.dim} vs {g2.dim}")


def w2_squared(g1: GaussianEmbedding, g2: GaussianEmbedding) -> float:
    """Squared 2-Wasserstein distance between two diagonal Gaussians."""
    _check_dims(g1, g2)
    v1 = np.maximum(g1.var, VARIANCE_FLOOR)
    v2 = np.maximum(g2.var, VARIANCE_FLOOR)
    mean_term = float(np.sum((g1.mean - g2.mean) ** 2))
    std_term = float(np.sum((np.sqrt(v1) - np.sqrt(v2)) ** 2))
    return mean_term + std_term


def kl_divergence(g1: GaussianEmbedding, g2: GaussianEmbedding) -> float:
    """KL(g1 || g2) for diagonal Gaussians (asymmetric)."""
    _check_dims(g1, g2)
    v1 = np.maximum(g1.var, VARIANCE_FLOOR)
    v2 = np.maximum(g2.var, VARIANCE_FLOOR)
    ratio = v1 / v2
    mahal = (g2.mean - g1.mean) ** 2 / v2
    return float(0.5 * np.sum(ratio + mahal - 1.0 + np.log(v2 / v1)))


def reparameterized_sample(g: GaussianEmbedding, eps: np.ndarray) -> np.ndarray:
    """mu + sqrt(var) * eps with eps standard normal."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != g.mean.shape:
        raise ValueError(f"dimension mismatch: eps {eps.shape} vs embedding {g.mean.shape}")
    return g.mean + np.sqrt(g.var) * eps


def w2_squared_t(mu1: torch.Tensor, var1: torch.Tensor, mu2: torch.Tensor, var2: torch.Tensor) -> torch.Tensor:
    """Batched differentiable squared W2; reduces over the last dimension."""
    v1 = torch.clamp(var1, min=VARIANCE_FLOOR)
    v2 = torch.clamp(var2, min=VARIANCE_FLOOR)
    mean_term = ((mu1 - mu2) ** 2).sum(dim=-1)
    std_term = ((torch.sqrt(v1) - torch.sqrt(v2)) ** 2).sum(dim=-1)
    return mean_term + std_term


def kl_divergence_t(mu1: torch.Tensor, var1: torch.Tensor, mu2: torch.Tensor, var2: torch.Tensor) -> torch.Tensor:
    """Batched differentiable KL(1 || 2); reduces over the last dimension."""
    v1 = torch.clamp(var1, min=VARIANCE_FLOOR)
    v2 = torch.clamp(var2, min=VARIANCE_FLOOR)
    return 0.5 * (v1 / v2 + (mu2 - mu1) ** 2 / v2 - 1.0 + torch.log(v2 / v1)).sum(dim=-1)


def reparameterized_sample_t(mu: torch.Tensor, var: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    if eps.shape != mu.shape:
        raise ValueError(f"dimension mismatch: eps {tuple(eps.shape)} vs mean {tuple(mu.shape)}")
    return mu + torch.sqrt(var) * eps


def pairwise_w2_squared(mu1: np.ndarray, var1: np.ndarray, mu2: np.ndarray, var2: np.ndarray) -> np.ndarray:
    """All-pairs squared W2 between two banks of diagonal Gaussians.

    Returns a (n1, n2) matrix; inputs are (n1, d) and (n2, d) arrays.
    """
    s1 = np.sqrt(np.maximum(var1, VARIANCE_FLOOR))
    s2 = np.sqrt(np.maximum(var2, VARIANCE_FLOOR))
    mean_term = (
        (mu1**2).sum(axis=1)[:, None] + (mu2**2).sum(axis=1)[None, :] - 2.0 * mu1 @ mu2.T
    )
    std_term = (s1**2).sum(axis=1)[:, None] + (s2**2).sum(axis=1)[None, :] - 2.0 * s1 @ s2.T
    return np.maximum(mean_term, 0.0) + np.maximum(std_term, 0.0)


def pairwise_kl(mu1: np.ndarray, var1: np.ndarray, mu2: np.ndarray, var2: np.ndarray) -> np.ndarray:
    """All-pairs KL(row || column) between two banks of diagonal Gaussians."""
    v1 = np.maximum(var1, VARIANCE_FLOOR)
    v2 = np.maximum(var2, VARIANCE_FLOOR)
    inv2 = 1.0 / v2
    ratio = v1 @ inv2.T
    mahal = (
        (mu1**2) @ inv2.T
        - 2.0 * mu1 @ (mu2 * inv2).T
        + np.ones((mu1.shape[0], 1)) @ ((mu2**2) * inv2).sum(axis=1)[None, :]
    )
    log_det = np.log(v2).sum(axis=1)[None, :] - np.log(v1).sum(axis=1)[:, None]
    d = mu1.shape[1]
    return 0.5 * (ratio + mahal - d + log_det)


def pairwise_sq_euclidean(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    out = (x1**2).sum(axis=1)[:, None] + (x2**2).sum(axis=1)[None, :] - 2.0 * x1 @ x2.T
    return np.maximum(out, 0.0)
