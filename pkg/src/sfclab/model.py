"""Core problem model: networks, service chains, deployments and feasibility.

An :class:`Instance` pairs a capacitated server network with a batch of
service chains and a scheduling deadline.  A :class:`Deployment` answers it
with a placement (which server hosts each chain position) and a binary
activation schedule over time slots.  This module owns the load accounting,
the feasibility check, the reward, and the fixed-layout state encoding that
the simulator and the dataset writer build on.

All values are immutable after construction; every operation here is a pure
function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Network",
    "ServiceChain",
    "Instance",
    "Deployment",
    "SystemState",
    "StateCodec",
    "FeasibilityReport",
    "Violation",
    "InfeasibleDeploymentError",
    "node_load",
    "link_load",
    "check_feasible",
    "reward",
    "completion_times",
    "encode_state",
    "relabel",
    "placement_usage",
]


class InfeasibleDeploymentError(ValueError):
    """An operation that requires a feasible deployment received one that is not."""


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(array).copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Network:
    """Undirected server network.

    ``capacities[p]`` is the resource budget of server ``p``; ``bandwidth``
    is the symmetric matrix of per-link budgets, with a zero entry meaning
    "no link".  Resources are scalar per server; multi-resource vectors are
    out of scope.
    """

    capacities: np.ndarray
    bandwidth: np.ndarray

    def __post_init__(self) -> None:
        caps = np.asarray(self.capacities, dtype=np.int64)
        bw = np.asarray(self.bandwidth, dtype=np.int64)
        if caps.ndim != 1:
            raise ValueError("capacities must be a vector")
        n = caps.shape[0]
        if bw.shape != (n, n):
            raise ValueError(f"bandwidth must be a {n}x{n} matrix, got {bw.shape}")
        if (caps < 0).any() or (bw < 0).any():
            raise ValueError("capacities and bandwidths must be non-negative")
        if (bw != bw.T).any():
            raise ValueError("bandwidth matrix must be symmetric")
        if np.diagonal(bw).any():
            raise ValueError("bandwidth diagonal must be zero")
        object.__setattr__(self, "capacities", _freeze(caps))
        object.__setattr__(self, "bandwidth", _freeze(bw))

    @property
    def node_count(self) -> int:
        return int(self.capacities.shape[0])

    def degrees(self) -> np.ndarray:
        """Per-server count of incident links (non-zero bandwidth entries)."""
        return (self.bandwidth > 0).sum(axis=1)

    def neighbors(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.bandwidth[p])

    def edge_count(self) -> int:
        return int((np.triu(self.bandwidth) > 0).sum())


@dataclass(frozen=True)
class ServiceChain:
    """One service chain: an ordered run of functions joined by traffic flows.

    ``node_demands[j]`` is the resource demand of position ``j``;
    ``flow_demands[j]`` the bandwidth demand of the flow between positions
    ``j`` and ``j+1``.  Flow demands may differ along the chain.  The chain
    must run for ``duration`` slots, none earlier than ``release``.
    """

    id: int
    node_demands: tuple[int, ...]
    flow_demands: tuple[int, ...]
    duration: int
    release: int
    weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_demands", tuple(int(c) for c in self.node_demands))
        object.__setattr__(self, "flow_demands", tuple(int(b) for b in self.flow_demands))
        if not self.node_demands:
            raise ValueError("a chain needs at least one position")
        if len(self.flow_demands) != len(self.node_demands) - 1:
            raise ValueError("flow demands must number one fewer than node demands")
        if any(c <= 0 for c in self.node_demands) or any(b <= 0 for b in self.flow_demands):
            raise ValueError("demands must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.release < 0:
            raise ValueError("release time must be non-negative")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    @property
    def length(self) -> int:
        return len(self.node_demands)


@dataclass(frozen=True, eq=False)
class Instance:
    """A problem instance: network, chains, and the slot-count deadline.

    ``release + duration <= deadline`` is deliberately not required; a chain
    that cannot fit before the deadline simply counts as blocked.
    """

    network: Network
    chains: tuple[ServiceChain, ...]
    deadline: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "chains", tuple(self.chains))
        if self.deadline <= 0:
            raise ValueError("deadline must be positive")

    @property
    def chain_count(self) -> int:
        return len(self.chains)


@dataclass(frozen=True, eq=False)
class Deployment:
    """Placement plus schedule for every chain of an instance.

    ``placement[i][j]`` is the server hosting position ``j`` of chain ``i``,
    or ``None`` when the position is unplaced.  ``schedule`` is the binary
    chains-by-slots activation matrix.
    """

    placement: tuple[tuple[int | None, ...], ...]
    schedule: np.ndarray

    def __post_init__(self) -> None:
        placement = tuple(tuple(pos) for pos in self.placement)
        sched = np.asarray(self.schedule, dtype=np.uint8)
        if sched.ndim != 2:
            raise ValueError("schedule must be a chains-by-slots matrix")
        if sched.shape[0] != len(placement):
            raise ValueError("schedule rows must match placement entries")
        if (sched > 1).any():
            raise ValueError("schedule entries must be 0 or 1")
        object.__setattr__(self, "placement", placement)
        object.__setattr__(self, "schedule", _freeze(sched))

    @classmethod
    def empty(cls, instance: Instance) -> "Deployment":
        placement = tuple((None,) * chain.length for chain in instance.chains)
        schedule = np.zeros((instance.chain_count, instance.deadline), dtype=np.uint8)
        return cls(placement, schedule)

    @property
    def chain_count(self) -> int:
        return len(self.placement)

    @property
    def horizon(self) -> int:
        return int(self.schedule.shape[1])

    def is_placed(self, i: int) -> bool:
        return all(p is not None for p in self.placement[i])

    def placed_count(self) -> int:
        return sum(1 for i in range(self.chain_count) if self.is_placed(i))


@dataclass(frozen=True)
class Violation:
    """One broken constraint: which family, where, and in which slot.

    ``constraint`` names the family: 2 capacity, 3 bandwidth, 4 duration,
    5 placement.  ``slot`` is ``None`` for static (schedule-independent)
    violations.
    """

    constraint: int
    subject: tuple[int, ...]
    slot: int | None
    message: str


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def placement_usage(chain: ServiceChain, servers: Sequence[int | None], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Static per-server and per-link demand of one placed chain.

    Co-located adjacent positions contribute nothing to the link matrix
    (their flow stays on the server).  Positions without a server are
    skipped.
    """
    node_use = np.zeros(n, dtype=np.int64)
    link_use = np.zeros((n, n), dtype=np.int64)
    for demand, server in zip(chain.node_demands, servers):
        if server is not None:
            node_use[server] += demand
    for j, demand in enumerate(chain.flow_demands):
        p, q = servers[j], servers[j + 1]
        if p is None or q is None or p == q:
            continue
        link_use[p, q] += demand
        link_use[q, p] += demand
    return node_use, link_use


def _deployment_usage(instance: Instance, dep: Deployment) -> tuple[np.ndarray, np.ndarray]:
    """Per-chain static usage stacked into (M, n) and (M, n, n) arrays."""
    n = instance.network.node_count
    m = instance.chain_count
    node_use = np.zeros((m, n), dtype=np.int64)
    link_use = np.zeros((m, n, n), dtype=np.int64)
    for i, (chain, servers) in enumerate(zip(instance.chains, dep.placement)):
        node_use[i], link_use[i] = placement_usage(chain, servers, n)
    return node_use, link_use


def _check_slot(instance: Instance, t: int) -> None:
    if not 0 <= t < instance.deadline:
        raise ValueError(f"slot {t} outside [0, {instance.deadline})")


def node_load(instance: Instance, dep: Deployment, t: int) -> np.ndarray:
    """Per-server resource occupied by chains active in slot ``t``."""
    _check_slot(instance, t)
    n = instance.network.node_count
    loads = np.zeros(n, dtype=np.int64)
    for chain, servers, active in zip(instance.chains, dep.placement, dep.schedule[:, t]):
        if not active:
            continue
        for demand, server in zip(chain.node_demands, servers):
            if server is not None:
                loads[server] += demand
    return loads


def link_load(instance: Instance, dep: Deployment, t: int) -> np.ndarray:
    """Symmetric per-link bandwidth occupied by flows active in slot ``t``.

    A flow between co-located adjacent positions is idle and contributes
    nothing.
    """
    _check_slot(instance, t)
    n = instance.network.node_count
    loads = np.zeros((n, n), dtype=np.int64)
    for chain, servers, active in zip(instance.chains, dep.placement, dep.schedule[:, t]):
        if not active:
            continue
        for j, demand in enumerate(chain.flow_demands):
            p, q = servers[j], servers[j + 1]
            if p is None or q is None or p == q:
                continue
            loads[p, q] += demand
            loads[q, p] += demand
    return loads


def check_feasible(instance: Instance, dep: Deployment) -> FeasibilityReport:
    """Check a deployment against every constraint family; violations are data.

    Covers per-slot capacity (2) and bandwidth (3) budgets, the duration and
    release rules (4), the one-server-per-position and no-activity-while-
    unplaced rules (5), and flows of placed chains that would need a
    non-existent link (reported under 3 with no slot).
    """
    if dep.chain_count != instance.chain_count:
        raise ValueError("deployment chain count does not match instance")
    net = instance.network
    n = net.node_count
    horizon = min(dep.horizon, instance.deadline)
    violations: list[Violation] = []

    for i, (chain, servers) in enumerate(zip(instance.chains, dep.placement)):
        if len(servers) != chain.length:
            raise ValueError(f"placement for chain {i} has wrong length")
        for j, server in enumerate(servers):
            if server is not None and not 0 <= server < n:
                raise ValueError(f"chain {i} position {j} names unknown server {server}")

    occ = dep.schedule[:, :horizon].astype(np.int64)
    if dep.horizon > instance.deadline and dep.schedule[:, instance.deadline:].any():
        for i in np.flatnonzero(dep.schedule[:, instance.deadline:].any(axis=1)):
            t = instance.deadline + int(np.flatnonzero(dep.schedule[i, instance.deadline:])[0])
            violations.append(Violation(4, (int(i),), t, f"chain {i} active after the deadline"))

    node_use, link_use = _deployment_usage(instance, dep)
    node_loads = occ.T @ node_use  # (horizon, n)
    over = node_loads > net.capacities
    for t, p in zip(*np.nonzero(over)):
        violations.append(
            Violation(2, (int(p),), int(t),
                      f"server {p} load {node_loads[t, p]} exceeds capacity {net.capacities[p]} at slot {t}")
        )
    link_loads = np.einsum("it,ipq->tpq", occ, link_use)  # (horizon, n, n)
    over_links = link_loads > net.bandwidth
    for t, p, q in zip(*np.nonzero(over_links)):
        if p < q:  # symmetric matrix, report each link once
            violations.append(
                Violation(3, (int(p), int(q)), int(t),
                          f"link ({p},{q}) load {link_loads[t, p, q]} exceeds bandwidth {net.bandwidth[p, q]} at slot {t}")
            )

    for i, (chain, servers) in enumerate(zip(instance.chains, dep.placement)):
        row = dep.schedule[i]
        active = np.flatnonzero(row)
        if dep.is_placed(i):
            early = active[active < chain.release]
            if early.size:
                violations.append(
                    Violation(4, (i,), int(early[0]), f"chain {i} active before its release {chain.release}")
                )
            total = int(row.sum())
            if total != chain.duration:
                violations.append(
                    Violation(4, (i,), None,
                              f"chain {i} scheduled for {total} slots, needs {chain.duration}")
                )
            for j in range(chain.length - 1):
                p, q = servers[j], servers[j + 1]
                if p != q and net.bandwidth[p, q] == 0:
                    violations.append(
                        Violation(3, (p, q), None,
                                  f"chain {i} flow {j} crosses ({p},{q}) which is not a link")
                    )
        elif active.size:
            violations.append(
                Violation(5, (i,), int(active[0]), f"chain {i} is scheduled but not fully placed")
            )
    return FeasibilityReport(tuple(violations))


def reward(instance: Instance, dep: Deployment) -> int:
    """Number of fully placed chains; defined only for feasible deployments."""
    report = check_feasible(instance, dep)
    if not report.ok:
        first = report.violations[0]
        raise InfeasibleDeploymentError(
            f"deployment is infeasible ({len(report.violations)} violations; first: {first.message})"
        )
    return dep.placed_count()


def completion_times(dep: Deployment) -> tuple[int | None, ...]:
    """Last active slot per chain, ``None`` for chains with no scheduled slot."""
    out: list[int | None] = []
    for row in dep.schedule:
        active = np.flatnonzero(row)
        out.append(int(active[-1]) if active.size else None)
    return tuple(out)


@dataclass(frozen=True)
class StateCodec:
    """Fixed layout and normalization constants for encoded system states.

    A state vector is ``[V ; E.flat ; F.flat]``: per-server residuals (n
    entries), the residual link matrix (n^2 entries), then one fixed-width
    feature row per tracked chain, zero-padded to ``max_tracked`` rows.  Each
    row is::

        [anchor, arrival, c_1..c_Lmax, b_1..b_(Lmax-1), duration, remaining, placed]

    Residuals are divided by the corresponding capacity, demands by the
    configured maxima, times by ``time_scale``.  The anchor field is
    ``(first server + 1) / n`` once the chain is placed and 0 before.
    """

    max_tracked: int = 5
    max_length: int = 5
    max_node_demand: int = 2
    max_flow_demand: int = 2
    max_duration: int = 10
    time_scale: int = 64

    def __post_init__(self) -> None:
        if min(self.max_tracked, self.max_length, self.max_node_demand,
               self.max_flow_demand, self.max_duration, self.time_scale) < 1:
            raise ValueError("codec constants must be positive")

    @property
    def row_width(self) -> int:
        return 2 * self.max_length + 4

    def state_dim(self, n: int) -> int:
        return n + n * n + self.max_tracked * self.row_width

    def chain_row(self, chain: ServiceChain, servers: Sequence[int | None],
                  executed: int, placed: bool, n: int) -> np.ndarray:
        if chain.length > self.max_length:
            raise ValueError(f"chain length {chain.length} exceeds codec maximum {self.max_length}")
        row = np.zeros(self.row_width, dtype=np.float64)
        if placed and servers[0] is not None:
            row[0] = (servers[0] + 1) / n
        row[1] = chain.release / self.time_scale
        for j, c in enumerate(chain.node_demands):
            row[2 + j] = c / self.max_node_demand
        for j, b in enumerate(chain.flow_demands):
            row[2 + self.max_length + j] = b / self.max_flow_demand
        row[-3] = chain.duration / self.max_duration
        row[-2] = (chain.duration - executed) / self.max_duration
        row[-1] = 1.0 if placed else 0.0
        return row


@dataclass(frozen=True, eq=False)
class SystemState:
    """Normalized snapshot of the system at one slot.

    ``node_residual`` and ``link_residual`` hold the remaining fraction of
    each capacity and bandwidth budget (zero for non-links); ``sfc_features``
    is the padded per-chain feature block in the codec layout.
    """

    node_residual: np.ndarray
    link_residual: np.ndarray
    sfc_features: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "node_residual", _freeze(np.asarray(self.node_residual, dtype=np.float64)))
        object.__setattr__(self, "link_residual", _freeze(np.asarray(self.link_residual, dtype=np.float64)))
        object.__setattr__(self, "sfc_features", _freeze(np.asarray(self.sfc_features, dtype=np.float64)))

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.node_residual,
            self.link_residual.ravel(),
            self.sfc_features.ravel(),
        ])

    @classmethod
    def from_vector(cls, vec: np.ndarray, n: int, codec: StateCodec) -> "SystemState":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (codec.state_dim(n),):
            raise ValueError(f"state vector must have {codec.state_dim(n)} entries, got {vec.shape}")
        return cls(
            vec[:n],
            vec[n:n + n * n].reshape(n, n),
            vec[n + n * n:].reshape(codec.max_tracked, codec.row_width),
        )


def _normalized_residual(budget: np.ndarray, load: np.ndarray) -> np.ndarray:
    residual = (budget - load).astype(np.float64)
    return np.divide(residual, budget, out=np.zeros_like(residual), where=budget > 0)


def encode_state(instance: Instance, dep: Deployment, t: int,
                 tracked: Sequence[int], codec: StateCodec) -> SystemState:
    """Encode slot ``t`` of a deployment as a normalized :class:`SystemState`.

    ``tracked`` lists the chain ids whose features fill the F block, in
    order; at most ``codec.max_tracked`` of them.  A chain counts as placed
    here once it is fully placed and released by ``t``; ``remaining`` is its
    duration minus the slots executed strictly before ``t``.
    """
    _check_slot(instance, t)
    if len(tracked) > codec.max_tracked:
        raise ValueError(f"{len(tracked)} tracked chains exceed the codec maximum {codec.max_tracked}")
    net = instance.network
    node_residual = _normalized_residual(net.capacities, node_load(instance, dep, t))
    link_residual = _normalized_residual(net.bandwidth, link_load(instance, dep, t))
    features = np.zeros((codec.max_tracked, codec.row_width), dtype=np.float64)
    for k, i in enumerate(tracked):
        chain = instance.chains[i]
        placed = dep.is_placed(i) and chain.release <= t
        executed = int(dep.schedule[i, :t].sum()) if placed else 0
        features[k] = codec.chain_row(chain, dep.placement[i], executed, placed, net.node_count)
    return SystemState(node_residual, link_residual, features)


def relabel(instance: Instance, permutation: Sequence[int]) -> Instance:
    """Apply a server permutation (old index -> new index) to an instance."""
    n = instance.network.node_count
    perm = np.asarray(permutation, dtype=np.int64)
    if perm.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
        raise ValueError("permutation must be a bijection on the servers")
    capacities = np.empty(n, dtype=np.int64)
    capacities[perm] = instance.network.capacities
    bandwidth = np.empty((n, n), dtype=np.int64)
    bandwidth[np.ix_(perm, perm)] = instance.network.bandwidth
    return Instance(Network(capacities, bandwidth), instance.chains, instance.deadline)
