"""Diffusion schedules: cosine variance steps and uniform categorical kernels.

Continuous channels follow the usual variance-preserving process with
per-step keep probabilities ``alphas[k]``; categorical channels use the
uniform-transition family (keep the category with probability ``alphas[k]``,
otherwise resample uniformly), whose multi-step products stay closed form.
Step indices run 1..K; index 0 means "clean".
"""

from __future__ import annotations

import numpy as np
import torch


def cosine_alpha_bar(steps: int, offset: float = 0.008) -> np.ndarray:
    """Cumulative keep probabilities, entry k for k noising steps (length K+1)."""
    k = np.arange(steps + 1, dtype=np.float64)
    f = np.cos((k / steps + offset) / (1 + offset) * np.pi / 2) ** 2
    return np.clip(f / f[0], 1e-8, 1.0)


class DiffusionSchedule:
    """Precomputed per-step and cumulative quantities for both channel kinds."""

    def __init__(self, steps: int):
        if steps < 1:
            raise ValueError("need at least one diffusion step")
        self.steps = steps
        self.alpha_bar = cosine_alpha_bar(steps)
        self.alphas = self.alpha_bar[1:] / self.alpha_bar[:-1]  # alphas[k-1] is step k

    def alpha(self, k: int) -> float:
        return float(self.alphas[k - 1])

    def bar(self, k: int) -> float:
        return float(self.alpha_bar[k])

    # --- categorical (uniform transition) ------------------------------

    def categorical_forward(self, clean: torch.Tensor, k: int, bins: int,
                            generator: torch.Generator) -> torch.Tensor:
        """Sample x_k given clean categories: keep with prob alpha_bar[k]."""
        keep = torch.rand(clean.shape, generator=generator) < self.bar(k)
        uniform = torch.randint(0, bins, clean.shape, generator=generator)
        return torch.where(keep, clean, uniform)

    def categorical_posterior(self, x_k: torch.Tensor, clean_probs: torch.Tensor,
                              k: int, bins: int) -> torch.Tensor:
        """Distribution of x_{k-1} given x_k and predicted clean probabilities.

        For the uniform kernel,
        ``q(x_{k-1}=j | x_k=i, x_0=c) ∝ (a δ_ij + (1-a)/B)(ā δ_jc + (1-ā)/B)``
        with ``a = alphas[k]`` and ``ā = alpha_bar[k-1]``; the clean category
        is marginalized under ``clean_probs``.
        """
        a = self.alpha(k)
        abar = self.bar(k - 1)
        one_hot_xk = torch.nn.functional.one_hot(x_k, bins).to(clean_probs.dtype)
        left = a * one_hot_xk + (1.0 - a) / bins                    # (.., B) over j
        right = abar * clean_probs + (1.0 - abar) / bins            # (.., B) over j
        probs = left * right
        return probs / probs.sum(dim=-1, keepdim=True)

    # --- continuous ------------------------------------------------------

    def gaussian_forward(self, clean: torch.Tensor, k: int,
                         generator: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
        noise = torch.randn(clean.shape, generator=generator, dtype=clean.dtype)
        bar = self.bar(k)
        return np.sqrt(bar) * clean + np.sqrt(1.0 - bar) * noise, noise

    def gaussian_step(self, x_k: torch.Tensor, predicted_noise: torch.Tensor, k: int,
                      temperature: float, generator: torch.Generator) -> torch.Tensor:
        """One reverse step; the added variance is scaled by ``temperature``."""
        a = self.alpha(k)
        bar_k = self.bar(k)
        bar_prev = self.bar(k - 1)
        mean = (x_k - (1.0 - a) / np.sqrt(1.0 - bar_k) * predicted_noise) / np.sqrt(a)
        if k == 1:
            return mean
        var = (1.0 - a) * (1.0 - bar_prev) / (1.0 - bar_k)
        noise = torch.randn(x_k.shape, generator=generator, dtype=x_k.dtype)
        return mean + temperature * np.sqrt(var) * noise
