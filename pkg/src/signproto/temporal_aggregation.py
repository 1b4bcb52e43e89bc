"""Multi-scale temporal aggregation and attention pooling (A_phi)."""

from __future__ import annotations

import torch
from torch import nn

from .errors import DataError

BRANCH_KERNELS = (3, 5, 7)


class MultiScaleTemporal(nn.Module):
    """``H = Z + W [conv3(Z); conv5(Z); conv7(Z)] + b`` with length-preserving convolutions."""

    def __init__(self, d_model: int, kernels=BRANCH_KERNELS):
        super().__init__()
        self.kernels = tuple(kernels)
        self.branches = nn.ModuleList(nn.Conv1d(d_model, d_model, k, padding=k // 2) for k in self.kernels)
        self.merge = nn.Linear(len(self.kernels) * d_model, d_model)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 3:
            raise DataError(f"expected (B, T, D), got shape {tuple(z.shape)}")
        zt = z.transpose(1, 2)
        branches = torch.cat([conv(zt) for conv in self.branches], dim=1).transpose(1, 2)
        return z + self.merge(branches)


class AttentionPool(nn.Module):
    """Scores each frame with a D -> D/4 -> 1 perceptron and returns the softmax-weighted sum."""

    def __init__(self, d_model: int):
        super().__init__()
        if d_model % 4:
            raise DataError(f"d_model must be divisible by 4, got {d_model}")
        self.score = nn.Sequential(nn.Linear(d_model, d_model // 4), nn.ReLU(), nn.Linear(d_model // 4, 1))

    def scores(self, h: torch.Tensor) -> torch.Tensor:
        return self.score(h).squeeze(-1)

    def forward(self, h: torch.Tensor, return_weights: bool = False):
        weights = softmax_weights(self.scores(h))
        z = torch.einsum("bt,btd->bd", weights, h)
        return (z, weights) if return_weights else z


def softmax_weights(alpha: torch.Tensor) -> torch.Tensor:
    """Softmax over the last (time) axis with max subtraction."""
    shifted = alpha - alpha.max(dim=-1, keepdim=True).values.detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def weighted_pool(h: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Pool ``h (B, T, D)`` with raw frame scores ``alpha (B, T)``."""
    return torch.einsum("bt,btd->bd", softmax_weights(alpha), h)


class TemporalAggregator(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.msta = MultiScaleTemporal(d_model)
        self.pool = AttentionPool(d_model)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.pool(self.msta(z))
