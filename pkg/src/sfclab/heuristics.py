"""Placement heuristics, time-resolved resource bookkeeping, and an exact solver.

The depth-first embedding primitive assigns a chain's positions to servers
one by one, either co-locating with the previous position (the flow then
stays on the server) or crossing a link with enough residual bandwidth.
The three baseline orderings differ only in how anchors and neighbors are
ranked.  ``exact_solve`` is a branch-and-bound oracle over joint placement
and scheduling, intended for small instances only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    Deployment,
    Instance,
    Network,
    ServiceChain,
    placement_usage,
)

__all__ = [
    "PlacementPolicy",
    "ResourceLedger",
    "BudgetExceededError",
    "dfs_place",
    "greedy_place",
    "central_place",
    "random_place",
    "run_policy",
    "exact_solve",
    "search_space_size",
]

POLICY_NAMES = ("greedy", "central", "random", "exact")

DEFAULT_BUDGET = 1e12


class BudgetExceededError(RuntimeError):
    """The exact solver refused an instance whose search space exceeds its budget."""


@dataclass(frozen=True)
class PlacementPolicy:
    """A named baseline, deterministic given its name, seed, and input."""

    name: str
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}, expected one of {POLICY_NAMES}")


class ResourceLedger:
    """Mutable per-slot load bookkeeping for committed placements.

    Loads are tracked per time slot, so a chain occupies resources only in
    the slots where it is active.  Solvers commit and release chains while
    searching; the simulator commits as chains are accepted.
    """

    def __init__(self, network: Network, horizon: int):
        self.network = network
        self.horizon = horizon
        n = network.node_count
        self.node_load = np.zeros((horizon, n), dtype=np.int64)
        self.link_load = np.zeros((horizon, n, n), dtype=np.int64)

    def node_residual(self, t: int) -> np.ndarray:
        return self.network.capacities - self.node_load[t]

    def link_residual(self, t: int) -> np.ndarray:
        return self.network.bandwidth - self.link_load[t]

    def fits(self, chain: ServiceChain, servers: Sequence[int], t: int) -> bool:
        """Would activating the placed chain in slot ``t`` stay within budget?"""
        node_use, link_use = placement_usage(chain, servers, self.network.node_count)
        if ((self.node_load[t] + node_use) > self.network.capacities).any():
            return False
        if ((self.link_load[t] + link_use) > self.network.bandwidth).any():
            return False
        return True

    def commit(self, chain: ServiceChain, servers: Sequence[int], slots: Sequence[int]) -> None:
        node_use, link_use = placement_usage(chain, servers, self.network.node_count)
        for t in slots:
            self.node_load[t] += node_use
            self.link_load[t] += link_use

    def release(self, chain: ServiceChain, servers: Sequence[int], slots: Sequence[int]) -> None:
        node_use, link_use = placement_usage(chain, servers, self.network.node_count)
        for t in slots:
            self.node_load[t] -= node_use
            self.link_load[t] -= link_use

    def earliest_slots(self, chain: ServiceChain, servers: Sequence[int],
                       start: int) -> list[int] | None:
        """Earliest feasible slots (not necessarily contiguous) for the chain.

        Scans from ``max(start, chain.release)`` and collects the first
        ``chain.duration`` slots where the placed chain fits; ``None`` when
        the horizon runs out first.
        """
        slots: list[int] = []
        t = max(start, chain.release)
        while t < self.horizon and len(slots) < chain.duration:
            if self.fits(chain, servers, t):
                slots.append(t)
            t += 1
        return slots if len(slots) == chain.duration else None


def _ranked(candidates: list[int], order: str, node_residual: np.ndarray,
            used_node: np.ndarray, degrees: np.ndarray,
            rng: np.random.Generator | None) -> list[int]:
    if order == "greedy":
        # effective residual: the snapshot minus what this chain already put there
        return sorted(candidates, key=lambda s: (-(node_residual[s] - used_node[s]), s))
    if order == "central":
        return sorted(candidates, key=lambda s: (-degrees[s], s))
    if order == "random":
        if rng is None:
            raise ValueError("random ordering needs an rng")
        return [candidates[k] for k in rng.permutation(len(candidates))]
    raise ValueError(f"unknown ordering rule {order!r}")


def dfs_place(node_residual: np.ndarray, link_residual: np.ndarray,
              chain: ServiceChain, anchor: int, order: str = "greedy",
              rng: np.random.Generator | None = None) -> tuple[int, ...] | None:
    """Depth-first embedding of a chain starting at ``anchor``.

    Each next position goes either on the same server (idle flow) or across
    a link whose residual bandwidth covers the flow demand; demands of
    co-located positions are summed against the server's residual, and flows
    of this chain sharing a link are summed against the link's residual.
    Backtracks on dead ends; returns ``None`` when no assignment exists from
    this anchor.
    """
    n = node_residual.shape[0]
    if not 0 <= anchor < n:
        raise ValueError(f"anchor {anchor} outside [0, {n})")
    degrees = (link_residual > 0).sum(axis=1)
    used_node = np.zeros(n, dtype=np.int64)
    used_link = np.zeros((n, n), dtype=np.int64)
    assignment: list[int] = []

    def extend(j: int) -> bool:
        if j == chain.length:
            return True
        demand = chain.node_demands[j]
        if j == 0:
            candidates = [anchor]
        else:
            cur = assignment[-1]
            flow = chain.flow_demands[j - 1]
            candidates = [cur] + [
                int(q) for q in np.flatnonzero(link_residual[cur])
                if link_residual[cur, q] - used_link[cur, q] >= flow
            ]
            candidates = _ranked(candidates, order, node_residual, used_node, degrees, rng)
        for server in candidates:
            if node_residual[server] - used_node[server] < demand:
                continue
            crossing = j > 0 and server != assignment[-1]
            if crossing:
                prev = assignment[-1]
                flow = chain.flow_demands[j - 1]
                used_link[prev, server] += flow
                used_link[server, prev] += flow
            used_node[server] += demand
            assignment.append(server)
            if extend(j + 1):
                return True
            assignment.pop()
            used_node[server] -= demand
            if crossing:
                used_link[prev, server] -= flow
                used_link[server, prev] -= flow
        return False

    return tuple(assignment) if extend(0) else None


def greedy_place(node_residual: np.ndarray, link_residual: np.ndarray,
                 chain: ServiceChain) -> tuple[int, ...] | None:
    """Anchor at the most-residual server first; spread by residual within the DFS."""
    anchors = sorted(range(node_residual.shape[0]), key=lambda s: (-node_residual[s], s))
    for anchor in anchors:
        placed = dfs_place(node_residual, link_residual, chain, anchor, order="greedy")
        if placed is not None:
            return placed
    return None


def central_place(node_residual: np.ndarray, link_residual: np.ndarray,
                  chain: ServiceChain) -> tuple[int, ...] | None:
    """Anchor at the highest-degree server first; stay central within the DFS."""
    degrees = (link_residual > 0).sum(axis=1)
    anchors = sorted(range(node_residual.shape[0]), key=lambda s: (-degrees[s], s))
    for anchor in anchors:
        placed = dfs_place(node_residual, link_residual, chain, anchor, order="central")
        if placed is not None:
            return placed
    return None


def random_place(node_residual: np.ndarray, link_residual: np.ndarray,
                 chain: ServiceChain, rng: np.random.Generator) -> tuple[int, ...] | None:
    """Try anchors in uniformly random order with randomly shuffled expansions."""
    for anchor in rng.permutation(node_residual.shape[0]):
        placed = dfs_place(node_residual, link_residual, chain, int(anchor), order="random", rng=rng)
        if placed is not None:
            return placed
    return None


def run_policy(instance: Instance, policy: PlacementPolicy) -> Deployment:
    """Place chains one by one in release order, scheduling each at the
    earliest feasible slots at or after its release.

    Placement is decided against the residuals observed in the chain's
    release slot; chains whose placement fails, or that cannot finish before
    the deadline, are left unplaced.
    """
    if policy.name == "exact":
        deployment, _ = exact_solve(instance)
        return deployment
    rng = np.random.default_rng(policy.rng_seed)
    ledger = ResourceLedger(instance.network, instance.deadline)
    placement: list[tuple[int | None, ...]] = [(None,) * c.length for c in instance.chains]
    schedule = np.zeros((instance.chain_count, instance.deadline), dtype=np.uint8)
    order = sorted(range(instance.chain_count), key=lambda i: (instance.chains[i].release, i))
    for i in order:
        chain = instance.chains[i]
        if chain.release >= instance.deadline:
            continue
        node_res = ledger.node_residual(chain.release)
        link_res = ledger.link_residual(chain.release)
        if policy.name == "greedy":
            servers = greedy_place(node_res, link_res, chain)
        elif policy.name == "central":
            servers = central_place(node_res, link_res, chain)
        else:
            servers = random_place(node_res, link_res, chain, rng)
        if servers is None:
            continue
        slots = ledger.earliest_slots(chain, servers, chain.release)
        if slots is None:
            continue
        ledger.commit(chain, servers, slots)
        placement[i] = servers
        schedule[i, slots] = 1
    return Deployment(tuple(placement), schedule)


def search_space_size(instance: Instance) -> float:
    """Nominal joint search-space size used by the exact solver's budget guard."""
    n = instance.network.node_count
    total_positions = sum(chain.length for chain in instance.chains)
    m = instance.chain_count
    return float(n) ** total_positions * float(instance.deadline) ** m


def _embeddings(network: Network, chain: ServiceChain) -> list[tuple[int, ...]]:
    """All topology-valid embeddings of a chain, capacity-checked statically.

    Adjacent positions must share a server or a link; a server's summed
    demand from this chain alone must fit its capacity (slot loads are
    checked later against the ledger).
    """
    n = network.node_count
    out: list[tuple[int, ...]] = []
    used = np.zeros(n, dtype=np.int64)
    assignment: list[int] = []

    def extend(j: int) -> None:
        if j == chain.length:
            out.append(tuple(assignment))
            return
        demand = chain.node_demands[j]
        if j == 0:
            candidates = range(n)
        else:
            cur = assignment[-1]
            flow = chain.flow_demands[j - 1]
            candidates = [cur] + [int(q) for q in np.flatnonzero(network.bandwidth[cur] >= flow)]
        for server in candidates:
            if used[server] + demand > network.capacities[server]:
                continue
            used[server] += demand
            assignment.append(server)
            extend(j + 1)
            assignment.pop()
            used[server] -= demand
    extend(0)
    return out


def _schedules(ledger: ResourceLedger, chain: ServiceChain, servers: tuple[int, ...],
               deadline: int):
    """Yield every feasible slot set for a placed chain, earliest sets first."""
    duration = chain.duration
    slots: list[int] = []

    def extend(start: int):
        if len(slots) == duration:
            yield tuple(slots)
            return
        # not enough slots left to finish
        for t in range(start, deadline - (duration - len(slots)) + 1):
            if ledger.fits(chain, servers, t):
                slots.append(t)
                yield from extend(t + 1)
                slots.pop()

    yield from extend(chain.release)


def exact_solve(instance: Instance, budget: float = DEFAULT_BUDGET) -> tuple[Deployment, int]:
    """Maximum-reward deployment by branch-and-bound over placements and schedules.

    Optimal by construction; refuses instances whose nominal search space
    exceeds ``budget``.
    """
    space = search_space_size(instance)
    if space > budget:
        raise BudgetExceededError(
            f"search space {space:.3g} exceeds budget {budget:.3g}"
        )
    m = instance.chain_count
    ledger = ResourceLedger(instance.network, instance.deadline)
    order = sorted(range(m), key=lambda i: (instance.chains[i].release, i))
    embeddings = {i: _embeddings(instance.network, instance.chains[i]) for i in order}

    best_reward = -1
    best: list[tuple[tuple[int, ...] | None, tuple[int, ...] | None]] = [(None, None)] * m
    current: list[tuple[tuple[int, ...] | None, tuple[int, ...] | None]] = [(None, None)] * m

    def solve(idx: int, placed: int) -> None:
        nonlocal best_reward, best
        if placed + (m - idx) <= best_reward:
            return
        if idx == m:
            best_reward = placed
            best = list(current)
            return
        i = order[idx]
        chain = instance.chains[i]
        if chain.release < instance.deadline:
            for servers in embeddings[i]:
                for slots in _schedules(ledger, chain, servers, instance.deadline):
                    ledger.commit(chain, servers, slots)
                    current[i] = (servers, slots)
                    solve(idx + 1, placed + 1)
                    current[i] = (None, None)
                    ledger.release(chain, servers, slots)
                    if best_reward == m:
                        return
        solve(idx + 1, placed)

    solve(0, 0)
    placement = []
    schedule = np.zeros((m, instance.deadline), dtype=np.uint8)
    for i, chain in enumerate(instance.chains):
        servers, slots = best[i]
        if servers is None:
            placement.append((None,) * chain.length)
        else:
            placement.append(servers)
            schedule[i, list(slots)] = 1
    return Deployment(tuple(placement), schedule), best_reward
