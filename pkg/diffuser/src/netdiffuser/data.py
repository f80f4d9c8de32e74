"""Reader for the trajectory dataset files produced by the sfclab toolkit.

The container is: ``SFCD`` magic, a little-endian version word, a
length-prefixed canonical-JSON header, a record count, length-prefixed
canonical-JSON records, and a SHA-256 trailer over everything before it.
Only the ``trajectories`` kind is consumed here.

States are flat vectors ``[V ; E.flat ; F.flat]`` of residual fractions and
chain features; actions are per-transition pending-row anchor matrices.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"SFCD"
_VERSION = 1


class DatasetReadError(RuntimeError):
    """The file is not a readable trajectory dataset."""


@dataclass(frozen=True)
class StateLayout:
    """Shape constants shared by every record of a dataset file."""

    nodes: int
    max_tracked: int
    row_width: int
    horizon: int
    max_length: int
    max_node_demand: int
    max_flow_demand: int
    max_duration: int
    time_scale: int

    @property
    def graph_dim(self) -> int:
        return self.nodes + self.nodes * self.nodes

    @property
    def feature_dim(self) -> int:
        return self.max_tracked * self.row_width

    @property
    def state_dim(self) -> int:
        return self.graph_dim + self.feature_dim

    def split(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Split (..., state_dim) into node, link and feature channels."""
        n = self.nodes
        return (states[..., :n],
                states[..., n:n + n * n],
                states[..., n + n * n:])


@dataclass(frozen=True)
class TrajectoryBatch:
    """A whole dataset stacked into arrays: (R, H, dim) states and friends."""

    layout: StateLayout
    states: np.ndarray    # (R, H, state_dim) float64
    actions: np.ndarray   # (R, H-1, m, n) uint8
    rewards: np.ndarray   # (R, H-1) int64
    labels: np.ndarray    # (R,) int64

    def __len__(self) -> int:
        return self.states.shape[0]


def read_trajectories(path: str | Path) -> TrajectoryBatch:
    data = Path(path).read_bytes()
    if len(data) < 6 or data[:4] != _MAGIC:
        raise DatasetReadError("not a dataset file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != _VERSION:
        raise DatasetReadError(f"unsupported dataset version {version}")
    if len(data) < 38 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise DatasetReadError("checksum mismatch")
    body = memoryview(data)[:-32]
    offset = 6
    (header_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    header = json.loads(bytes(body[offset:offset + header_len]))
    offset += header_len
    if header.get("kind") != "trajectories":
        raise DatasetReadError(f"expected a trajectories dataset, got {header.get('kind')!r}")
    codec = header["codec"]
    layout = StateLayout(
        nodes=int(header["nodes"]),
        max_tracked=int(codec["max_tracked"]),
        row_width=2 * int(codec["max_length"]) + 4,
        horizon=int(header["horizon"]),
        max_length=int(codec["max_length"]),
        max_node_demand=int(codec["max_node_demand"]),
        max_flow_demand=int(codec["max_flow_demand"]),
        max_duration=int(codec["max_duration"]),
        time_scale=int(codec["time_scale"]),
    )
    (count,) = struct.unpack_from("<I", body, offset)
    offset += 4
    states, actions, rewards, labels = [], [], [], []
    for _ in range(count):
        (size,) = struct.unpack_from("<I", body, offset)
        offset += 4
        record = json.loads(bytes(body[offset:offset + size]))
        offset += size
        state = np.asarray(record["states"], dtype=np.float64)
        if state.shape != (layout.horizon, layout.state_dim):
            raise DatasetReadError(f"record state shape {state.shape} does not match the header")
        act = np.zeros((layout.horizon - 1, layout.max_tracked, layout.nodes), dtype=np.uint8)
        for k, row_anchors in enumerate(record["actions"]):
            for r, anchor in enumerate(row_anchors):
                if anchor >= 0:
                    act[k, r, anchor] = 1
        states.append(state)
        actions.append(act)
        rewards.append(np.asarray(record["rewards"], dtype=np.int64))
        labels.append(int(record["label"]))
    if offset != len(body):
        raise DatasetReadError("trailing bytes after the last record")
    if not states:
        raise DatasetReadError("dataset holds no trajectories")
    return TrajectoryBatch(
        layout=layout,
        states=np.stack(states),
        actions=np.stack(actions),
        rewards=np.stack(rewards),
        labels=np.asarray(labels, dtype=np.int64),
    )


def quantize(values: np.ndarray, bins: int) -> np.ndarray:
    """Map residual fractions in [0, 1] to bin indices 0..bins-1."""
    idx = np.floor(np.clip(values, 0.0, 1.0) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def dequantize(indices: np.ndarray, bins: int) -> np.ndarray:
    """Bin centers: the inverse of :func:`quantize` up to half a bin."""
    return (indices.astype(np.float64) + 0.5) / bins
