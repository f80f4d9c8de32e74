"""Denoiser and inverse-dynamics networks.

The denoiser takes a noisy state sequence (categorical node/link channels as
one-hot bins, continuous chain features), a diffusion step and an optional
scalar condition, and emits three heads: clean-bin logits for the node and
link channels and a noise estimate for the feature channel.  The inverse
dynamics model maps a state pair to a pending-row anchor matrix.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import DiffuserConfig
from .data import StateLayout


class StepEmbedding(nn.Module):
    """Sinusoidal step embedding followed by a small MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim))

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(10_000.0) * torch.arange(half, dtype=torch.float32) / half)
        angles = k.float().unsqueeze(-1) * freqs
        emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)
        return self.net(emb)


class NoiseModel(nn.Module):
    """Three-headed denoiser over length-H state sequences."""

    def __init__(self, layout: StateLayout, cfg: DiffuserConfig):
        super().__init__()
        self.layout = layout
        self.bins = cfg.bins
        n = layout.nodes
        in_dim = (n + n * n) * cfg.bins + layout.feature_dim
        hidden = cfg.hidden
        self.column_in = nn.Linear(in_dim, hidden)
        self.step_embed = StepEmbedding(hidden)
        self.cond_embed = nn.Linear(1, hidden)
        self.null_token = nn.Parameter(torch.zeros(hidden))
        self.backbone = nn.ModuleList([
            nn.Conv1d(hidden, hidden, kernel_size=3, padding=1) for _ in range(3)
        ])
        self.act = nn.GELU()
        self.head_nodes = nn.Linear(hidden, n * cfg.bins)
        self.head_links = nn.Linear(hidden, n * n * cfg.bins)
        self.head_features = nn.Linear(hidden, layout.feature_dim)

    def forward(self, node_bins: torch.Tensor, link_bins: torch.Tensor,
                features: torch.Tensor, k: torch.Tensor,
                condition: torch.Tensor | None,
                null_mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """``node_bins`` (B, H, n) and ``link_bins`` (B, H, n^2) are integer bin
        indices; ``features`` is (B, H, feature_dim); ``k`` is (B,);
        ``condition`` is (B, 1), or None for the null token everywhere;
        ``null_mask`` (B,) swaps individual samples to the null token.
        """
        batch, horizon, n = node_bins.shape
        one_hot_nodes = nn.functional.one_hot(node_bins, self.bins).float().reshape(batch, horizon, -1)
        one_hot_links = nn.functional.one_hot(link_bins, self.bins).float().reshape(batch, horizon, -1)
        columns = torch.cat([one_hot_nodes, one_hot_links, features.float()], dim=-1)
        x = self.column_in(columns)
        context = self.step_embed(k)
        null = self.null_token.unsqueeze(0).expand(batch, -1)
        if condition is None:
            cond_part = null
        else:
            cond_part = self.cond_embed(condition.float())
            if null_mask is not None:
                cond_part = torch.where(null_mask.unsqueeze(-1), null, cond_part)
        x = x + (context + cond_part).unsqueeze(1)
        x = x.transpose(1, 2)  # (B, hidden, H) for the convolutions
        for conv in self.backbone:
            x = x + self.act(conv(x))
        x = x.transpose(1, 2)
        logits_nodes = self.head_nodes(x).reshape(batch, horizon, n, self.bins)
        logits_links = self.head_links(x).reshape(batch, horizon, n * n, self.bins)
        eps_features = self.head_features(x)
        return logits_nodes, logits_links, eps_features


class InverseDynamics(nn.Module):
    """Anchor-matrix regressor from a state pair."""

    def __init__(self, layout: StateLayout, cfg: DiffuserConfig):
        super().__init__()
        self.layout = layout
        dim = 2 * layout.state_dim
        hidden = cfg.inverse_hidden
        self.net = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(),
            nn.Linear(hidden, hidden), nn.GELU(),
            nn.Linear(hidden, layout.max_tracked * layout.nodes),
        )

    def forward(self, state: torch.Tensor, next_state: torch.Tensor) -> torch.Tensor:
        """Returns (B, m, n) scores in [0, 1]."""
        x = torch.cat([state.float(), next_state.float()], dim=-1)
        out = torch.sigmoid(self.net(x))
        return out.reshape(-1, self.layout.max_tracked, self.layout.nodes)
