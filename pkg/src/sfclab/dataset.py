"""Bit-exact serialization of trajectories, demonstrations and instances.

Dataset files are a single binary container: a magic tag and version, a
canonical-JSON header, length-prefixed canonical-JSON records, and a SHA-256
trailer over everything before it.  Identical inputs always produce
identical bytes.  A pretty-printed ``<file>.meta.json`` sidecar mirrors the
header for auditing.

The plain-text instance format (and the section syntax reused by generator
config files) also lives here.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import Deployment, Instance, Network, ServiceChain, StateCodec

__all__ = [
    "Trajectory",
    "Dataset",
    "DatasetError",
    "DatasetVersionError",
    "DatasetChecksumError",
    "DatasetFormatError",
    "write_dataset",
    "read_dataset",
    "label",
    "constraints_hold",
    "format_instance_text",
    "parse_instance_text",
    "parse_sections",
]

_MAGIC = b"SFCD"
_VERSION = 1


class DatasetError(Exception):
    """Base class for dataset load/store failures."""


class DatasetVersionError(DatasetError):
    pass


class DatasetChecksumError(DatasetError):
    pass


class DatasetFormatError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A length-H window of encoded states with aligned actions and rewards.

    ``actions[k]`` is the pending-queue action matrix whose effects appear in
    ``states[k+1]``; ``rewards[k]`` is the reward delta of that transition.
    ``label`` is the episode return times the constraint indicator: it is
    zero whenever any state in the window has a negative residual.
    """

    states: np.ndarray        # (H, state_dim) float64
    actions: np.ndarray       # (H-1, m, n) uint8, rows one-hot or zero
    rewards: np.ndarray       # (H-1,) int64
    label: int
    codec: StateCodec

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.uint8)
        rewards = np.asarray(self.rewards, dtype=np.int64)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("states must be a (H, dim) array with H >= 1")
        if actions.ndim != 3 or actions.shape[0] != states.shape[0] - 1:
            raise ValueError("actions must be a (H-1, m, n) array")
        if rewards.shape != (states.shape[0] - 1,):
            raise ValueError("rewards must align with actions")
        if actions.size and (actions.sum(axis=2) > 1).any():
            raise ValueError("action rows must have at most one 1")
        n = actions.shape[2]
        if states.shape[1] != self.codec.state_dim(n):
            raise ValueError(
                f"state width {states.shape[1]} does not match codec layout {self.codec.state_dim(n)}"
            )
        if actions.shape[1] != self.codec.max_tracked:
            raise ValueError("action rows must match the codec's tracked maximum")
        for arr, name in ((states, "states"), (actions, "actions"), (rewards, "rewards")):
            arr = np.ascontiguousarray(arr).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def horizon(self) -> int:
        return int(self.states.shape[0])

    @property
    def node_count(self) -> int:
        return int(self.actions.shape[2])


def constraints_hold(states: np.ndarray, node_count: int) -> bool:
    """True when every state keeps all node and link residuals non-negative."""
    graph = np.asarray(states)[:, : node_count + node_count * node_count]
    return bool((graph >= 0).all())


def label(trajectory: Trajectory, episode_return: int | None = None) -> int:
    """Conditioning label: episode return times the constraint indicator.

    The indicator is 1 exactly when every state in the window keeps all node
    and link residuals non-negative; any violation zeroes the label.  When
    ``episode_return`` is omitted the window's summed reward deltas stand in
    for it.
    """
    ok = constraints_hold(trajectory.states, trajectory.node_count)
    value = int(trajectory.rewards.sum()) if episode_return is None else int(episode_return)
    return value if ok else 0


@dataclass(frozen=True)
class Dataset:
    """A loaded dataset: header fields plus decoded records."""

    kind: str
    codec: StateCodec | None
    node_count: int | None
    horizon: int | None
    records: tuple


# ---------------------------------------------------------------------------
# record coding

def _codec_to_dict(codec: StateCodec) -> dict:
    return {
        "max_tracked": codec.max_tracked,
        "max_length": codec.max_length,
        "max_node_demand": codec.max_node_demand,
        "max_flow_demand": codec.max_flow_demand,
        "max_duration": codec.max_duration,
        "time_scale": codec.time_scale,
    }


def _codec_from_dict(data: dict) -> StateCodec:
    return StateCodec(**data)


def _trajectory_to_record(traj: Trajectory) -> dict:
    anchors = []
    for step in traj.actions:
        row_anchors = []
        for row in step:
            hot = np.flatnonzero(row)
            row_anchors.append(int(hot[0]) if hot.size else -1)
        anchors.append(row_anchors)
    return {
        "actions": anchors,
        "label": int(traj.label),
        "rewards": [int(r) for r in traj.rewards],
        "states": [[float(v) for v in row] for row in traj.states],
    }


def _trajectory_from_record(record: dict, n: int, codec: StateCodec) -> Trajectory:
    states = np.asarray(record["states"], dtype=np.float64)
    steps = len(record["actions"])
    actions = np.zeros((steps, codec.max_tracked, n), dtype=np.uint8)
    for k, row_anchors in enumerate(record["actions"]):
        for r, anchor in enumerate(row_anchors):
            if anchor >= 0:
                actions[k, r, anchor] = 1
    return Trajectory(states, actions, np.asarray(record["rewards"], dtype=np.int64),
                      int(record["label"]), codec)


def _chain_to_record(chain: ServiceChain) -> dict:
    return {
        "id": chain.id,
        "node_demands": list(chain.node_demands),
        "flow_demands": list(chain.flow_demands),
        "duration": chain.duration,
        "release": chain.release,
        "weight": chain.weight,
    }


def _chain_from_record(data: dict) -> ServiceChain:
    return ServiceChain(
        id=int(data["id"]),
        node_demands=tuple(data["node_demands"]),
        flow_demands=tuple(data["flow_demands"]),
        duration=int(data["duration"]),
        release=int(data["release"]),
        weight=float(data["weight"]),
    )


def _instance_to_record(instance: Instance) -> dict:
    return {
        "capacities": [int(c) for c in instance.network.capacities],
        "bandwidth": [[int(b) for b in row] for row in instance.network.bandwidth],
        "chains": [_chain_to_record(c) for c in instance.chains],
        "deadline": instance.deadline,
    }


def _instance_from_record(data: dict) -> Instance:
    network = Network(np.asarray(data["capacities"], dtype=np.int64),
                      np.asarray(data["bandwidth"], dtype=np.int64))
    return Instance(network, tuple(_chain_from_record(c) for c in data["chains"]),
                    int(data["deadline"]))


def _demo_to_record(demo) -> dict:
    return {
        "completions": [-1 if t is None else int(t) for t in demo.completion_times],
        "instance": _instance_to_record(demo.instance),
        "placement": [[-1 if s is None else int(s) for s in pos] for pos in demo.deployment.placement],
        "schedule": [[int(x) for x in row] for row in demo.deployment.schedule],
        "trajectory": _trajectory_to_record(demo.trajectory),
    }


def _demo_from_record(record: dict, codec: StateCodec):
    from .invdemo import Demonstration  # local import: invdemo depends on this module

    instance = _instance_from_record(record["instance"])
    placement = tuple(tuple(None if s < 0 else s for s in pos) for pos in record["placement"])
    schedule = np.asarray(record["schedule"], dtype=np.uint8)
    deployment = Deployment(placement, schedule)
    trajectory = _trajectory_from_record(record["trajectory"], instance.network.node_count, codec)
    completions = tuple(None if t < 0 else t for t in record["completions"])
    return Demonstration(instance, deployment, trajectory, completions)


# ---------------------------------------------------------------------------
# container I/O

def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def write_dataset(items: Sequence, path: str | Path) -> Path:
    """Write trajectories or demonstrations to a dataset file.

    Shapes must be homogeneous: every record shares the file's node count,
    tracked maximum, codec constants, and (for trajectories) horizon.
    Returns the path written; a ``.meta.json`` sidecar lands next to it.
    """
    from .invdemo import Demonstration  # local import, see _demo_from_record

    path = Path(path)
    items = list(items)
    if not items:
        header: dict = {"count": 0, "kind": "empty"}
        payloads: list[bytes] = []
    elif isinstance(items[0], Trajectory):
        first = items[0]
        header = {
            "codec": _codec_to_dict(first.codec),
            "count": len(items),
            "horizon": first.horizon,
            "kind": "trajectories",
            "nodes": first.node_count,
        }
        for k, traj in enumerate(items):
            if not isinstance(traj, Trajectory):
                raise DatasetFormatError(f"record {k} is not a trajectory")
            if (traj.codec != first.codec or traj.horizon != first.horizon
                    or traj.node_count != first.node_count):
                raise DatasetFormatError(f"record {k} has mismatched shape")
        payloads = [_canonical(_trajectory_to_record(t)) for t in items]
    elif isinstance(items[0], Demonstration):
        first = items[0]
        header = {
            "codec": _codec_to_dict(first.trajectory.codec),
            "count": len(items),
            "kind": "demonstrations",
            "nodes": first.instance.network.node_count,
        }
        for k, demo in enumerate(items):
            if not isinstance(demo, Demonstration):
                raise DatasetFormatError(f"record {k} is not a demonstration")
            if (demo.trajectory.codec != first.trajectory.codec
                    or demo.instance.network.node_count != first.instance.network.node_count):
                raise DatasetFormatError(f"record {k} has mismatched shape")
        payloads = [_canonical(_demo_to_record(d)) for d in items]
    else:
        raise DatasetFormatError(f"cannot serialize records of type {type(items[0]).__name__}")

    header_bytes = _canonical(header)
    body = bytearray()
    body += _MAGIC
    body += struct.pack("<H", _VERSION)
    body += struct.pack("<I", len(header_bytes))
    body += header_bytes
    body += struct.pack("<I", len(payloads))
    for payload in payloads:
        body += struct.pack("<I", len(payload))
        body += payload
    body += hashlib.sha256(bytes(body)).digest()
    path.write_bytes(bytes(body))
    sidecar = path.with_name(path.name + ".meta.json")
    sidecar.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    return path


def read_dataset(path: str | Path) -> Dataset:
    """Read a dataset file back; the inverse of :func:`write_dataset`.

    Raises :class:`DatasetVersionError` on unknown versions,
    :class:`DatasetChecksumError` on truncation or corruption, and
    :class:`DatasetFormatError` when a record breaks an invariant.
    """
    data = Path(path).read_bytes()
    if len(data) < 6 or data[:4] != _MAGIC:
        raise DatasetFormatError("not a dataset file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != _VERSION:
        raise DatasetVersionError(f"unsupported dataset version {version}")
    if len(data) < 38:
        raise DatasetChecksumError("file too short for its checksum trailer")
    digest = data[-32:]
    if hashlib.sha256(data[:-32]).digest() != digest:
        raise DatasetChecksumError("checksum mismatch (truncated or corrupted file)")
    body = memoryview(data)[:-32]
    offset = 6
    try:
        (header_len,) = struct.unpack_from("<I", body, offset)
        offset += 4
        header = json.loads(bytes(body[offset:offset + header_len]))
        offset += header_len
        (count,) = struct.unpack_from("<I", body, offset)
        offset += 4
        payloads = []
        for _ in range(count):
            (size,) = struct.unpack_from("<I", body, offset)
            offset += 4
            payloads.append(json.loads(bytes(body[offset:offset + size])))
            offset += size
    except (struct.error, json.JSONDecodeError, IndexError) as exc:
        raise DatasetFormatError(f"malformed dataset structure: {exc}") from exc
    if offset != len(body):
        raise DatasetFormatError("trailing bytes after the last record")

    kind = header.get("kind")
    try:
        if kind == "empty":
            return Dataset("empty", None, None, None, ())
        codec = _codec_from_dict(header["codec"])
        nodes = int(header["nodes"])
        if kind == "trajectories":
            horizon = int(header["horizon"])
            records = tuple(_trajectory_from_record(p, nodes, codec) for p in payloads)
            for traj in records:
                if traj.horizon != horizon:
                    raise DatasetFormatError("record horizon disagrees with the header")
                if label(traj) == 0 and traj.label != 0:
                    raise DatasetFormatError("stored label must be zero for constraint-violating windows")
            return Dataset(kind, codec, nodes, horizon, records)
        if kind == "demonstrations":
            records = tuple(_demo_from_record(p, codec) for p in payloads)
            return Dataset(kind, codec, nodes, None, records)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"invalid dataset contents: {exc}") from exc
    raise DatasetFormatError(f"unknown dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# plain-text instance format

def parse_sections(text: str) -> list[tuple[str, dict[str, list[list[str]]]]]:
    """Parse the ``[section]`` / ``key = tokens`` syntax shared by instance
    and generator-config files.

    Returns sections in file order; repeated keys (``edge = ...``) collect
    every occurrence.  ``#`` starts a comment.
    """
    sections: list[tuple[str, dict[str, list[list[str]]]]] = []
    current: dict[str, list[list[str]]] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = {}
            sections.append((line[1:-1].strip(), current))
            continue
        if "=" not in line or current is None:
            raise DatasetFormatError(f"line {lineno}: expected 'key = value' inside a section")
        key, value = line.split("=", 1)
        current.setdefault(key.strip(), []).append(value.split())
    return sections


def _single(section: dict, key: str, lineno_hint: str) -> list[str]:
    if key not in section or len(section[key]) != 1:
        raise DatasetFormatError(f"{lineno_hint}: expected exactly one '{key}'")
    return section[key][0]


def format_instance_text(instance: Instance) -> str:
    lines = ["# sfclab instance v1", "[network]"]
    lines.append(f"nodes = {instance.network.node_count}")
    lines.append("capacities = " + " ".join(str(int(c)) for c in instance.network.capacities))
    bw = instance.network.bandwidth
    for p in range(instance.network.node_count):
        for q in range(p + 1, instance.network.node_count):
            if bw[p, q]:
                lines.append(f"edge = {p} {q} {int(bw[p, q])}")
    for chain in instance.chains:
        lines.append("")
        lines.append("[chain]")
        lines.append(f"id = {chain.id}")
        lines.append("node_demands = " + " ".join(str(c) for c in chain.node_demands))
        if chain.flow_demands:
            lines.append("flow_demands = " + " ".join(str(b) for b in chain.flow_demands))
        lines.append(f"duration = {chain.duration}")
        lines.append(f"release = {chain.release}")
        lines.append(f"weight = {chain.weight!r}")
    lines.append("")
    lines.append("[instance]")
    lines.append(f"deadline = {instance.deadline}")
    return "\n".join(lines) + "\n"


def parse_instance_text(text: str) -> Instance:
    sections = parse_sections(text)
    network = None
    chains: list[ServiceChain] = []
    deadline = None
    for name, body in sections:
        if name == "network":
            n = int(_single(body, "nodes", "[network]")[0])
            caps = [int(c) for c in _single(body, "capacities", "[network]")]
            if len(caps) != n:
                raise DatasetFormatError("[network]: capacities must list one value per node")
            bw = np.zeros((n, n), dtype=np.int64)
            for tokens in body.get("edge", []):
                if len(tokens) != 3:
                    raise DatasetFormatError("[network]: edge lines are 'edge = p q bandwidth'")
                p, q, b = (int(x) for x in tokens)
                bw[p, q] = bw[q, p] = b
            network = Network(np.asarray(caps, dtype=np.int64), bw)
        elif name == "chain":
            flow = body.get("flow_demands", [[]])
            chains.append(ServiceChain(
                id=int(_single(body, "id", "[chain]")[0]),
                node_demands=tuple(int(c) for c in _single(body, "node_demands", "[chain]")),
                flow_demands=tuple(int(b) for b in flow[0]) if flow and flow[0] else (),
                duration=int(_single(body, "duration", "[chain]")[0]),
                release=int(_single(body, "release", "[chain]")[0]),
                weight=float(_single(body, "weight", "[chain]")[0]),
            ))
        elif name == "instance":
            deadline = int(_single(body, "deadline", "[instance]")[0])
        else:
            raise DatasetFormatError(f"unknown section [{name}]")
    if network is None or deadline is None:
        raise DatasetFormatError("instance text needs [network] and [instance] sections")
    return Instance(network, tuple(chains), deadline)
