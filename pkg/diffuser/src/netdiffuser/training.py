"""Joint training of the denoiser and the inverse dynamics model.

Per batch: draw a diffusion step per sample, corrupt the discrete channels
with the uniform kernel and the feature channel with Gaussian noise, and
minimize cross-entropy on the clean node bins, weighted cross-entropy on the
clean link bins, the feature-noise error (with condition dropout for
classifier-free guidance), and the inverse-dynamics error on clean state
pairs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import DiffuserConfig
from .data import StateLayout, TrajectoryBatch, quantize, read_trajectories
from .models import InverseDynamics, NoiseModel
from .schedule import DiffusionSchedule

CHECKPOINT_FORMAT = "netdiffuser-ckpt"
CHECKPOINT_VERSION = 1


@dataclass
class ModelBundle:
    """Everything needed to sample and serve: nets, schedule, shapes."""

    config: DiffuserConfig
    layout: StateLayout
    noise_model: NoiseModel
    inverse_model: InverseDynamics
    schedule: DiffusionSchedule
    label_scale: float


def _prepare(batch: TrajectoryBatch, cfg: DiffuserConfig):
    layout = batch.layout
    nodes, links, features = layout.split(batch.states)
    node_bins = torch.from_numpy(quantize(nodes, cfg.bins))
    link_bins = torch.from_numpy(quantize(links, cfg.bins))
    features = torch.from_numpy(features.astype(np.float32))
    states = torch.from_numpy(batch.states.astype(np.float32))
    actions = torch.from_numpy(batch.actions.astype(np.float32))
    label_scale = float(max(batch.labels.max(), 1))
    labels = torch.from_numpy(batch.labels.astype(np.float32) / label_scale)
    return node_bins, link_bins, features, states, actions, labels, label_scale


def train(dataset_path: str | Path, cfg: DiffuserConfig, epochs: int,
          log_every: int = 0) -> tuple[ModelBundle, list[float]]:
    """Train on a trajectory dataset; returns the bundle and per-epoch losses."""
    batch = read_trajectories(dataset_path)
    if cfg.horizon != batch.layout.horizon:
        raise ValueError(
            f"config horizon {cfg.horizon} does not match the dataset horizon {batch.layout.horizon}"
        )
    torch.manual_seed(cfg.seed)
    node_bins, link_bins, features, states, actions, labels, label_scale = _prepare(batch, cfg)
    layout = batch.layout
    schedule = DiffusionSchedule(cfg.steps)
    noise_model = NoiseModel(layout, cfg)
    inverse_model = InverseDynamics(layout, cfg)
    params = list(noise_model.parameters()) + list(inverse_model.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    generator = torch.Generator().manual_seed(cfg.seed)

    records = states.shape[0]
    horizon = layout.horizon
    alpha_bar = torch.from_numpy(schedule.alpha_bar).float()
    # transitions that actually place a chain are rare; index them so the
    # inverse-dynamics batches can sample them at even odds with no-ops
    acted = torch.from_numpy(np.argwhere(batch.actions.sum(axis=(2, 3)) > 0))
    losses: list[float] = []
    for epoch in range(epochs):
        permutation = torch.randperm(records, generator=generator)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, records, cfg.batch_size):
            idx = permutation[start:start + cfg.batch_size]
            nb, lb = node_bins[idx], link_bins[idx]
            feats = features[idx]
            y = labels[idx].unsqueeze(-1)
            size = idx.shape[0]

            k = torch.randint(1, cfg.steps + 1, (size,), generator=generator)
            bar = alpha_bar[k].reshape(size, 1, 1)

            keep_nodes = torch.rand(nb.shape, generator=generator) < bar
            noisy_nodes = torch.where(
                keep_nodes, nb, torch.randint(0, cfg.bins, nb.shape, generator=generator))
            keep_links = torch.rand(lb.shape, generator=generator) < bar
            noisy_links = torch.where(
                keep_links, lb, torch.randint(0, cfg.bins, lb.shape, generator=generator))
            eps = torch.randn(feats.shape, generator=generator)
            noisy_feats = torch.sqrt(bar) * feats + torch.sqrt(1.0 - bar) * eps

            dropped = torch.rand(size, generator=generator) < cfg.cond_dropout
            logits_n, logits_l, eps_hat = noise_model(
                noisy_nodes, noisy_links, noisy_feats, k, y, null_mask=dropped)

            ce = nn.functional.cross_entropy
            loss_nodes = ce(logits_n.reshape(-1, cfg.bins), nb.reshape(-1))
            loss_links = ce(logits_l.reshape(-1, cfg.bins), lb.reshape(-1))
            loss_feats = nn.functional.mse_loss(eps_hat, eps)

            # inverse dynamics on clean consecutive pairs: half uniformly
            # random (mostly no-ops, teaching deferral), half placement
            # transitions so the anchor signal is not drowned out
            rec = idx.clone()
            pair = torch.randint(0, horizon - 1, (size,), generator=generator)
            if len(acted):
                swap = torch.rand(size, generator=generator) < 0.5
                chosen = acted[torch.randint(0, len(acted), (size,), generator=generator)]
                rec = torch.where(swap, chosen[:, 0], rec)
                pair = torch.where(swap, chosen[:, 1], pair)
            s_t = states[rec, pair]
            s_next = states[rec, pair + 1]
            target = actions[rec, pair]
            predicted = inverse_model(s_t, s_next)
            loss_inverse = nn.functional.mse_loss(predicted, target)

            loss = (loss_nodes + cfg.edge_loss_weight * loss_links
                    + loss_feats + loss_inverse)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            batches += 1
        losses.append(epoch_loss / max(batches, 1))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1:4d}  loss {losses[-1]:.4f}")
    bundle = ModelBundle(cfg, layout, noise_model, inverse_model, schedule, label_scale)
    return bundle, losses


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> Path:
    path = Path(path)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(bundle.config),
        "layout": asdict(bundle.layout),
        "label_scale": bundle.label_scale,
        "noise_model": bundle.noise_model.state_dict(),
        "inverse_model": bundle.inverse_model.state_dict(),
    }, path)
    return path


def load_checkpoint(path: str | Path) -> ModelBundle:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a netdiffuser checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = DiffuserConfig(**payload["config"])
    layout = StateLayout(**payload["layout"])
    noise_model = NoiseModel(layout, cfg)
    noise_model.load_state_dict(payload["noise_model"])
    noise_model.eval()
    inverse_model = InverseDynamics(layout, cfg)
    inverse_model.load_state_dict(payload["inverse_model"])
    inverse_model.eval()
    return ModelBundle(cfg, layout, noise_model, inverse_model,
                       DiffusionSchedule(cfg.steps), float(payload["label_scale"]))
