"""Sequence generation and action extraction.

Sampling starts the categorical channels from the uniform prior and the
feature channel from a temperature-scaled Gaussian, then walks the reverse
process: at every step the observed history overwrites the leading columns,
the guided prediction ``eps_u + w * (eps_c - eps_u)`` combines the
conditional and unconditional heads, the discrete channels are re-sampled
from their posterior and the feature channel takes a low-temperature
Gaussian step.  The history clamp is applied to the final sequence as well,
so the leading columns of the output equal the observations bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .data import dequantize, quantize
from .training import ModelBundle


def forward_noise(states: np.ndarray, k: int, layout, schedule, bins: int,
                  generator: torch.Generator) -> np.ndarray:
    """Corrupt a clean state sequence to diffusion step ``k``.

    Node and link channels are quantized and each entry independently keeps
    its bin with the cumulative probability for ``k`` steps (or resamples
    uniformly); the feature channel gets the matching Gaussian noise.
    ``k = 0`` is the identity.
    """
    states = np.asarray(states, dtype=np.float64)
    if not 0 <= k <= schedule.steps:
        raise ValueError(f"step {k} outside [0, {schedule.steps}]")
    if k == 0:
        return states.copy()
    nodes, links, feats = layout.split(states)
    node_bins = schedule.categorical_forward(torch.from_numpy(quantize(nodes, bins)),
                                             k, bins, generator)
    link_bins = schedule.categorical_forward(torch.from_numpy(quantize(links, bins)),
                                             k, bins, generator)
    noisy_feats, _ = schedule.gaussian_forward(torch.from_numpy(feats.astype(np.float32)),
                                               k, generator)
    out = np.empty_like(states)
    n = layout.nodes
    out[..., :n] = dequantize(node_bins.numpy(), bins)
    out[..., n:n + n * n] = dequantize(link_bins.numpy(), bins)
    out[..., n + n * n:] = noisy_feats.numpy().astype(np.float64)
    return out


@dataclass
class StepRecord:
    """Per-step head outputs, kept when a trace is requested."""

    guided_nodes: np.ndarray
    guided_links: np.ndarray
    guided_features: np.ndarray
    unconditional_nodes: np.ndarray
    unconditional_links: np.ndarray
    unconditional_features: np.ndarray


def sample(bundle: ModelBundle, history: np.ndarray, target_return: float,
           generator: torch.Generator, guidance: float | None = None,
           trace: list[StepRecord] | None = None) -> np.ndarray:
    """Generate a horizon-length state sequence conditioned on the history.

    ``history`` is a (h, state_dim) array of observed states, newest last,
    with ``1 <= h <= min(history length C, horizon - 1)``.  Returns a
    (horizon, state_dim) array whose first ``h`` columns are the history,
    exactly.
    """
    cfg = bundle.config
    layout = bundle.layout
    schedule = bundle.schedule
    w = cfg.guidance if guidance is None else guidance
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[1] != layout.state_dim:
        raise ValueError(f"history must be (h, {layout.state_dim})")
    h = history.shape[0]
    if not 1 <= h <= min(cfg.history, cfg.horizon - 1):
        raise ValueError(f"history length {h} outside [1, {min(cfg.history, cfg.horizon - 1)}]")

    nodes_h, links_h, feats_h = layout.split(history)
    hist_node_bins = torch.from_numpy(quantize(nodes_h, cfg.bins))
    hist_link_bins = torch.from_numpy(quantize(links_h, cfg.bins))
    hist_feats = torch.from_numpy(feats_h.astype(np.float32))

    n = layout.nodes
    horizon = cfg.horizon
    node_bins = torch.randint(0, cfg.bins, (horizon, n), generator=generator)
    link_bins = torch.randint(0, cfg.bins, (horizon, n * n), generator=generator)
    feats = cfg.temperature * torch.randn((horizon, layout.feature_dim), generator=generator)

    y = torch.tensor([[target_return / bundle.label_scale]], dtype=torch.float32)

    null_mask = torch.tensor([True, False])
    y_pair = y.expand(2, 1)
    with torch.no_grad():
        for k in range(cfg.steps, 0, -1):
            node_bins[:h] = hist_node_bins
            link_bins[:h] = hist_link_bins
            feats[:h] = hist_feats

            nb = node_bins.unsqueeze(0).expand(2, -1, -1)
            lb = link_bins.unsqueeze(0).expand(2, -1, -1)
            fb = feats.unsqueeze(0).expand(2, -1, -1)
            step = torch.tensor([k, k])
            logits_n_b, logits_l_b, eps_b = bundle.noise_model(nb, lb, fb, step, y_pair,
                                                               null_mask=null_mask)
            logits_n_u, logits_n_c = logits_n_b[0:1], logits_n_b[1:2]
            logits_l_u, logits_l_c = logits_l_b[0:1], logits_l_b[1:2]
            eps_u, eps_c = eps_b[0:1], eps_b[1:2]
            logits_n = logits_n_u + w * (logits_n_c - logits_n_u)
            logits_l = logits_l_u + w * (logits_l_c - logits_l_u)
            eps = eps_u + w * (eps_c - eps_u)
            if trace is not None:
                trace.append(StepRecord(
                    logits_n.squeeze(0).numpy().copy(), logits_l.squeeze(0).numpy().copy(),
                    eps.squeeze(0).numpy().copy(),
                    logits_n_u.squeeze(0).numpy().copy(), logits_l_u.squeeze(0).numpy().copy(),
                    eps_u.squeeze(0).numpy().copy(),
                ))

            clean_nodes = torch.softmax(logits_n.squeeze(0), dim=-1)
            clean_links = torch.softmax(logits_l.squeeze(0), dim=-1)
            post_nodes = schedule.categorical_posterior(node_bins, clean_nodes, k, cfg.bins)
            post_links = schedule.categorical_posterior(link_bins, clean_links, k, cfg.bins)
            node_bins = _sample_categorical(post_nodes, generator)
            link_bins = _sample_categorical(post_links, generator)
            feats = schedule.gaussian_step(feats, eps.squeeze(0), k, cfg.temperature, generator)

    node_bins[:h] = hist_node_bins
    link_bins[:h] = hist_link_bins
    feats[:h] = hist_feats

    out = np.empty((horizon, layout.state_dim), dtype=np.float64)
    out[:, :n] = dequantize(node_bins.numpy(), cfg.bins)
    out[:, n:n + n * n] = dequantize(link_bins.numpy(), cfg.bins)
    out[:, n + n * n:] = feats.numpy().astype(np.float64)
    out[:h] = history  # exact clamp, untouched by quantization
    return out


def _sample_categorical(probs: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    flat = probs.reshape(-1, probs.shape[-1])
    picks = torch.multinomial(flat, 1, generator=generator)
    return picks.reshape(probs.shape[:-1])


def extract_action(bundle: ModelBundle, state: np.ndarray, next_state: np.ndarray,
                   threshold: float | None = None) -> np.ndarray:
    """One-hot anchor matrix from a state pair; rows below the confidence
    threshold defer (all zero)."""
    layout = bundle.layout
    cut = bundle.config.defer_threshold if threshold is None else threshold
    s = torch.from_numpy(np.asarray(state, dtype=np.float32)).unsqueeze(0)
    s_next = torch.from_numpy(np.asarray(next_state, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        scores = bundle.inverse_model(s, s_next).squeeze(0).numpy()
    matrix = np.zeros((layout.max_tracked, layout.nodes), dtype=np.uint8)
    for row in range(layout.max_tracked):
        best = int(np.argmax(scores[row]))
        if scores[row, best] >= cut:
            matrix[row, best] = 1
    return matrix
