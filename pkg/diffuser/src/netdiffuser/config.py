"""Configuration for the diffusion planner."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class DiffuserConfig:
    """Training and sampling knobs.

    ``steps`` is the diffusion step count K; ``guidance`` the scale w applied
    to the conditional/unconditional gap; ``temperature`` scales the reverse
    variance (below 1 favors high-likelihood samples); ``cond_dropout`` is the
    probability of replacing the condition with the null token during
    training; ``edge_loss_weight`` multiplies the link-channel loss;
    ``history`` is the observation queue length C and ``horizon`` the
    generated sequence length H.
    """

    steps: int = 50
    guidance: float = 1.5
    temperature: float = 0.5
    cond_dropout: float = 0.25
    edge_loss_weight: float = 1.0
    history: int = 4
    horizon: int = 16
    bins: int = 8
    hidden: int = 128
    inverse_hidden: int = 256
    defer_threshold: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ValueError("cond_dropout must be a probability")
        if not 0.0 <= self.temperature < 1.0:
            raise ValueError("temperature must be in [0, 1)")
        if self.history < 1 or self.horizon < 2:
            raise ValueError("history must be >= 1 and horizon >= 2")
        if self.history >= self.horizon:
            raise ValueError("history must be shorter than the horizon")
        if self.bins < 2:
            raise ValueError("need at least two quantization bins")
