"""Inverse demonstration: solutions first, then a problem that admits them.

Instead of solving hard instances, the generator draws random chains, embeds
each one greedily into a synthesized network as it arrives, schedules it at
the earliest feasible slots, and only then fixes the deadline -- so every
emitted problem/solution pair is feasible by construction.  A second pass
tightens the schedule by lexicographic min-max optimization of the
completion times: the worst completion time is minimized first, then the
next-worst, and so on, holding the placement fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import dataset as dataset_io
from .dataset import Trajectory
from .heuristics import BudgetExceededError, ResourceLedger, dfs_place
from .model import (
    Deployment,
    Instance,
    Network,
    ServiceChain,
    StateCodec,
    completion_times,
    encode_state,
)

__all__ = [
    "GenConfig",
    "Demonstration",
    "GenerationError",
    "InfeasibleScheduleError",
    "inverse_generate",
    "refine_demonstration",
    "iterate_demonstrations",
    "lex_minmax_schedule",
    "lex_oracle",
    "derive_deadline",
    "schedule_cost",
]


class GenerationError(RuntimeError):
    """The generator config admits no feasible demonstration."""


class InfeasibleScheduleError(RuntimeError):
    """No schedule satisfies the constraints for the fixed placement."""


@dataclass(frozen=True)
class GenConfig:
    """Knobs for demonstration synthesis.

    Ranges are inclusive.  Chain ``i`` is released at slot
    ``1 + i * release_spacing``; slot 0 is always quiet so that every
    placement shows up as a state transition.
    """

    nodes: int = 5
    chains: int = 6
    length_range: tuple[int, int] = (2, 5)
    node_demand_range: tuple[int, int] = (1, 2)
    flow_demand_range: tuple[int, int] = (1, 2)
    duration_range: tuple[int, int] = (1, 10)
    capacity_range: tuple[int, int] = (2, 4)
    bandwidth_range: tuple[int, int] = (1, 2)
    extra_edge_prob: float = 0.35
    release_spacing: int = 1
    max_tracked: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.nodes < 1 or self.chains < 0 or self.max_tracked < 1:
            raise ValueError("nodes and max_tracked must be positive, chains non-negative")
        for name in ("length_range", "node_demand_range", "flow_demand_range",
                     "duration_range", "capacity_range", "bandwidth_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValueError(f"{name} must be a non-empty positive range")
        if not 0.0 <= self.extra_edge_prob <= 1.0:
            raise ValueError("extra_edge_prob must be in [0, 1]")
        if self.release_spacing < 0:
            raise ValueError("release_spacing must be non-negative")

    def horizon_cap(self) -> int:
        """Upper bound on any completion time the generator can produce."""
        releases = self.release_spacing * max(self.chains - 1, 0)
        return 2 + releases + self.chains * self.duration_range[1]

    def codec(self) -> StateCodec:
        return StateCodec(
            max_tracked=self.max_tracked,
            max_length=self.length_range[1],
            max_node_demand=self.node_demand_range[1],
            max_flow_demand=self.flow_demand_range[1],
            max_duration=self.duration_range[1],
            time_scale=self.horizon_cap(),
        )


@dataclass(frozen=True, eq=False)
class Demonstration:
    """A feasible problem/solution pair plus its replayable trajectory."""

    instance: Instance
    deployment: Deployment
    trajectory: Trajectory
    completion_times: tuple[int | None, ...]


def _random_network(cfg: GenConfig, rng: np.random.Generator) -> Network:
    """Connected network with budgets dealt evenly from the configured ranges.

    Capacities cycle through the range and are then shuffled, and the extra
    link count is the fixed share ``extra_edge_prob`` of the non-tree pairs,
    so total capacity and density do not swing between seeds; only the
    layout does.
    """
    n = cfg.nodes
    lo, hi = cfg.capacity_range
    values = np.asarray([lo + (i % (hi - lo + 1)) for i in range(n)], dtype=np.int64)
    caps = values[rng.permutation(n)]
    bw = np.zeros((n, n), dtype=np.int64)
    for i in range(1, n):  # random spanning tree keeps the network connected
        j = int(rng.integers(0, i))
        b = int(rng.integers(cfg.bandwidth_range[0], cfg.bandwidth_range[1], endpoint=True))
        bw[i, j] = bw[j, i] = b
    spare = [(p, q) for p in range(n) for q in range(p + 1, n) if bw[p, q] == 0]
    extra = round(cfg.extra_edge_prob * len(spare))
    for k in rng.permutation(len(spare))[:extra]:
        p, q = spare[int(k)]
        b = int(rng.integers(cfg.bandwidth_range[0], cfg.bandwidth_range[1], endpoint=True))
        bw[p, q] = bw[q, p] = b
    return Network(caps, bw)


def _random_chain(cfg: GenConfig, index: int, rng: np.random.Generator) -> ServiceChain:
    length = int(rng.integers(cfg.length_range[0], cfg.length_range[1], endpoint=True))
    return ServiceChain(
        id=index,
        node_demands=tuple(int(c) for c in rng.integers(
            cfg.node_demand_range[0], cfg.node_demand_range[1], size=length, endpoint=True)),
        flow_demands=tuple(int(b) for b in rng.integers(
            cfg.flow_demand_range[0], cfg.flow_demand_range[1], size=length - 1, endpoint=True)),
        duration=int(rng.integers(cfg.duration_range[0], cfg.duration_range[1], endpoint=True)),
        release=1 + index * cfg.release_spacing,
    )


def _demo_trajectory(instance: Instance, deployment: Deployment,
                     actions_by_slot: dict[int, list[tuple[int, int]]],
                     codec: StateCodec) -> Trajectory:
    """Replay a finished deployment into a trajectory.

    ``actions_by_slot[t]`` lists ``(row, anchor)`` pairs for placements
    committed in slot ``t``; the matrix lands at transition ``t-1 -> t``.
    """
    horizon = instance.deadline
    n = instance.network.node_count
    completions = completion_times(deployment)
    states = np.zeros((horizon, codec.state_dim(n)), dtype=np.float64)
    for t in range(horizon):
        tracked = [i for i, chain in enumerate(instance.chains)
                   if chain.release <= t and completions[i] is not None and completions[i] >= t]
        states[t] = encode_state(instance, deployment, t, tracked[:codec.max_tracked], codec).vector()
    actions = np.zeros((max(horizon - 1, 0), codec.max_tracked, n), dtype=np.uint8)
    rewards = np.zeros(max(horizon - 1, 0), dtype=np.int64)
    for slot, events in actions_by_slot.items():
        if not 1 <= slot < horizon:
            raise ValueError(f"action slot {slot} outside the recordable range [1, {horizon})")
        for row, anchor in events:
            if row < codec.max_tracked:
                actions[slot - 1, row, anchor] = 1
        rewards[slot - 1] = len(events)
    episode_return = deployment.placed_count()
    value = episode_return if dataset_io.constraints_hold(states, n) else 0
    return Trajectory(states, actions, rewards, value, codec)


def inverse_generate(cfg: GenConfig) -> Demonstration:
    """Draw random chains, embed and schedule each on arrival, then back-fill
    the deadline; the result is feasible by construction.

    Chains with no feasible embedding at their release are skipped and left
    out of the emitted instance.  Raises :class:`GenerationError` when no
    chain at all can be placed after a bounded number of fresh draws.
    """
    rng = np.random.default_rng(cfg.seed)
    attempts = 3 if cfg.chains else 1
    for _ in range(attempts):
        demo = _generate_once(cfg, rng)
        if demo is not None:
            return demo
    raise GenerationError(
        "no chain could be placed; demands likely exceed every capacity in the config"
    )


def _generate_once(cfg: GenConfig, rng: np.random.Generator) -> Demonstration | None:
    network = _random_network(cfg, rng)
    drawn = [_random_chain(cfg, i, rng) for i in range(cfg.chains)]
    ledger = ResourceLedger(network, cfg.horizon_cap())
    kept: list[tuple[ServiceChain, tuple[int, ...], list[int], int]] = []
    for chain in drawn:
        release = chain.release
        node_res = ledger.node_residual(release)
        link_res = ledger.link_residual(release)
        anchors = [s for s in range(cfg.nodes) if node_res[s] >= chain.node_demands[0]]
        servers = None
        anchor = -1
        for k in rng.permutation(len(anchors)):
            anchor = anchors[int(k)]
            servers = dfs_place(node_res, link_res, chain, anchor, order="greedy")
            if servers is not None:
                break
        if servers is None:
            continue  # skipped chains stay out of the emitted instance
        slots = ledger.earliest_slots(chain, servers, release)
        if slots is None:  # cannot happen inside horizon_cap; keep the guard honest
            continue
        ledger.commit(chain, servers, slots)
        kept.append((chain, servers, slots, anchor))
    if cfg.chains and not kept:
        return None

    chains = tuple(replace(chain, id=k) for k, (chain, _, _, _) in enumerate(kept))
    completions = [slots[-1] for _, _, slots, _ in kept]
    deadline = derive_deadline(completions) if kept else 1
    schedule = np.zeros((len(kept), deadline), dtype=np.uint8)
    placement = []
    actions_by_slot: dict[int, list[tuple[int, int]]] = {}
    rows_used: dict[int, int] = {}
    for k, (chain, servers, slots, anchor) in enumerate(kept):
        placement.append(servers)
        schedule[k, slots] = 1
        row = rows_used.get(chain.release, 0)
        rows_used[chain.release] = row + 1
        if row < cfg.max_tracked:
            actions_by_slot.setdefault(chain.release, []).append((row, anchor))
    instance = Instance(network, chains, deadline)
    deployment = Deployment(tuple(placement), schedule)
    trajectory = _demo_trajectory(instance, deployment, actions_by_slot, cfg.codec())
    return Demonstration(instance, deployment, trajectory, completion_times(deployment))


def derive_deadline(completions: Sequence[int]) -> int:
    """Slot-count deadline admitting every completion: ``max + 1``."""
    values = [int(t) for t in completions if t is not None]
    if not values:
        raise ValueError("deadline needs at least one placed chain")
    return max(values) + 1


def schedule_cost(schedule: np.ndarray, base: int) -> int:
    """Exact value of the separable objective ``sum(base ** (t * x[i, t]))``.

    Evaluated with arbitrary-precision integers; an occupied slot ``t``
    contributes ``base ** t``, everything else contributes 1.
    """
    schedule = np.asarray(schedule)
    chains, horizon = schedule.shape
    total = chains * horizon - int(schedule.sum())
    for i, t in zip(*np.nonzero(schedule)):
        total += base ** int(t)
    return total


def _occupied_cost(slots_per_chain: Sequence[Sequence[int]], powers: list[int]) -> int:
    return sum(powers[t] for slots in slots_per_chain for t in slots)


def _composite_key(slots_per_chain: list[tuple[int, ...]], powers: list[int]):
    """Total order on schedules: objective value, then the sorted completion
    vector, then the raw slot sets -- so independently computed optima agree
    exactly."""
    cost = _occupied_cost(slots_per_chain, powers)
    completions = tuple(sorted((max(s) for s in slots_per_chain), reverse=True))
    return cost, completions, tuple(slots_per_chain)


def _check_fixed_placement(instance: Instance, placement: Sequence[Sequence[int | None]]):
    if len(placement) != instance.chain_count:
        raise ValueError("placement must cover every chain")
    fixed: list[tuple[int, ...]] = []
    for i, (chain, servers) in enumerate(zip(instance.chains, placement)):
        if len(servers) != chain.length or any(s is None for s in servers):
            raise ValueError(f"chain {i} must be fully placed for schedule optimization")
        fixed.append(tuple(int(s) for s in servers))
    return fixed


def lex_minmax_schedule(instance: Instance, placement: Sequence[Sequence[int | None]],
                        max_nodes: int = 5_000_000) -> np.ndarray:
    """Schedule minimizing ``sum(K ** (t * x[i, t]))`` with ``K = M * T``,
    holding the placement fixed.

    The objective makes one occupancy in a late slot costlier than any number
    of occupancies in earlier slots, so minimizing it sorts the occupied-slot
    multiset -- and with it the worst completion times -- lexicographically.
    Solved by branch-and-bound over the activation variables with exact
    big-integer costs; ties are broken by the sorted completion vector and
    then the raw slot sets so the optimum is canonical.
    """
    fixed = _check_fixed_placement(instance, placement)
    m = instance.chain_count
    horizon = instance.deadline
    if m == 0:
        return np.zeros((0, horizon), dtype=np.uint8)
    base = max(2, m * horizon)
    powers = [base ** t for t in range(horizon)]
    order = sorted(range(m), key=lambda i: (instance.chains[i].release, i))
    ledger = ResourceLedger(instance.network, horizon)

    # optimistic per-chain cost: its slots packed from the release, capacity ignored
    optimistic: list[int] = [0] * m
    for i in order:
        chain = instance.chains[i]
        if chain.release + chain.duration > horizon:
            raise InfeasibleScheduleError(
                f"chain {i} cannot fit {chain.duration} slots after release {chain.release}"
            )
        optimistic[i] = sum(powers[chain.release + d] for d in range(chain.duration))
    suffix = [0] * (m + 1)
    for idx in range(m - 1, -1, -1):
        suffix[idx] = suffix[idx + 1] + optimistic[order[idx]]

    incumbent = _earliest_packing(instance, fixed, ledger, order)
    best_key = None
    best_slots: list[tuple[int, ...]] | None = None
    if incumbent is not None:
        best_key = _composite_key([incumbent[i] for i in range(m)], powers)
        best_slots = incumbent
    chosen: list[tuple[int, ...]] = [()] * m
    nodes = 0

    def schedule_chain(idx: int, cost: int) -> None:
        nonlocal best_key, best_slots, nodes
        nodes += 1
        if nodes > max_nodes:
            raise BudgetExceededError(f"schedule search exceeded {max_nodes} nodes")
        if best_key is not None and cost + suffix[idx] > best_key[0]:
            return
        if idx == m:
            key = _composite_key(list(chosen), powers)
            if best_key is None or key < best_key:
                best_key = key
                best_slots = list(chosen)
            return
        i = order[idx]
        chain = instance.chains[i]
        servers = fixed[i]
        picked: list[int] = []

        def pick(start: int, partial: int) -> None:
            nonlocal nodes
            remaining = chain.duration - len(picked)
            if remaining == 0:
                chosen[i] = tuple(picked)
                schedule_chain(idx + 1, cost + partial)
                chosen[i] = ()
                return
            nodes += 1
            if nodes > max_nodes:
                raise BudgetExceededError(f"schedule search exceeded {max_nodes} nodes")
            for t in range(start, horizon - remaining + 1):
                bound = partial + sum(powers[t + d] for d in range(remaining))
                if best_key is not None and cost + bound + suffix[idx + 1] > best_key[0]:
                    break  # later starts only cost more
                if not ledger.fits(chain, servers, t):
                    continue
                ledger.commit(chain, servers, [t])
                picked.append(t)
                pick(t + 1, partial + powers[t])
                picked.pop()
                ledger.release(chain, servers, [t])

        pick(chain.release, 0)

    schedule_chain(0, 0)
    if best_slots is None:
        raise InfeasibleScheduleError("no feasible schedule exists for the fixed placement")
    out = np.zeros((m, horizon), dtype=np.uint8)
    for i, slots in enumerate(best_slots):
        out[i, list(slots)] = 1
    return out


def _earliest_packing(instance: Instance, fixed: list[tuple[int, ...]],
                      ledger: ResourceLedger, order: list[int]) -> list[tuple[int, ...]] | None:
    """Greedy chain-by-chain earliest schedule; the branch-and-bound incumbent."""
    slots_per_chain: list[tuple[int, ...]] = [()] * len(order)
    committed: list[int] = []
    for i in order:
        chain = instance.chains[i]
        slots = ledger.earliest_slots(chain, fixed[i], chain.release)
        if slots is None:
            for k in committed:
                ledger.release(instance.chains[k], fixed[k], list(slots_per_chain[k]))
            return None
        ledger.commit(chain, fixed[i], slots)
        committed.append(i)
        slots_per_chain[i] = tuple(slots)
    for k in committed:
        ledger.release(instance.chains[k], fixed[k], list(slots_per_chain[k]))
    return slots_per_chain


def lex_oracle(instance: Instance, placement: Sequence[Sequence[int | None]]) -> np.ndarray:
    """Reference optimum by exhaustive enumeration; tiny instances only.

    Enumerates every feasible slot set per chain and every combination,
    keeping the minimum under the same canonical order as
    :func:`lex_minmax_schedule`.
    """
    from itertools import combinations, product

    fixed = _check_fixed_placement(instance, placement)
    m = instance.chain_count
    horizon = instance.deadline
    if m > 3 or horizon > 6:
        raise ValueError("oracle restricted to at most 3 chains and 6 slots")
    if m == 0:
        return np.zeros((0, horizon), dtype=np.uint8)
    base = max(2, m * horizon)
    powers = [base ** t for t in range(horizon)]

    candidates: list[list[tuple[int, ...]]] = []
    for i, chain in enumerate(instance.chains):
        window = range(chain.release, horizon)
        options = [combo for combo in combinations(window, chain.duration)]
        if not options:
            raise InfeasibleScheduleError(f"chain {i} cannot fit before the deadline")
        candidates.append(options)

    net = instance.network
    best_key = None
    best_combo = None
    for combo in product(*candidates):
        ledger = ResourceLedger(net, horizon)
        ok = True
        for i, slots in enumerate(combo):
            chain = instance.chains[i]
            if any(not ledger.fits(chain, fixed[i], t) for t in slots):
                ok = False
                break
            ledger.commit(chain, fixed[i], list(slots))
        if not ok:
            continue
        key = _composite_key(list(combo), powers)
        if best_key is None or key < best_key:
            best_key = key
            best_combo = combo
    if best_combo is None:
        raise InfeasibleScheduleError("no feasible schedule exists for the fixed placement")
    out = np.zeros((m, horizon), dtype=np.uint8)
    for i, slots in enumerate(best_combo):
        out[i, list(slots)] = 1
    return out


def _actions_by_slot(trajectory: Trajectory) -> dict[int, list[tuple[int, int]]]:
    """Recover the (row, anchor) placement events per slot from a trajectory."""
    events: dict[int, list[tuple[int, int]]] = {}
    for k, step in enumerate(trajectory.actions):
        found = [(int(r), int(np.flatnonzero(row)[0])) for r, row in enumerate(step)
                 if np.flatnonzero(row).size]
        if found:
            events[k + 1] = found
    return events


def refine_demonstration(demo: Demonstration) -> Demonstration:
    """Replace a demonstration's schedule with the lexicographic optimum.

    The placement is untouched, so the reward cannot change; the deadline is
    re-derived from the refined completion times and the trajectory replayed.
    """
    if demo.instance.chain_count == 0:
        return demo
    refined = lex_minmax_schedule(demo.instance, demo.deployment.placement)
    completions = [int(np.flatnonzero(row)[-1]) for row in refined]
    deadline = derive_deadline(completions)
    instance = Instance(demo.instance.network, demo.instance.chains, deadline)
    deployment = Deployment(demo.deployment.placement, refined[:, :deadline])
    trajectory = _demo_trajectory(instance, deployment, _actions_by_slot(demo.trajectory),
                                  demo.trajectory.codec)
    return Demonstration(instance, deployment, trajectory, completion_times(deployment))


def demo_windows(demo: Demonstration, horizon: int) -> list[Trajectory]:
    """Cut a demonstration into fixed-length trajectory windows for training.

    Short demonstrations are replayed under a widened deadline (the network
    simply sits idle past the last completion); long ones are sliced into
    non-overlapping windows.  Every window is labeled with the episode
    return, zeroed if the window itself violates a constraint.
    """
    if horizon < 1:
        raise ValueError("window length must be positive")
    traj = demo.trajectory
    if traj.horizon == horizon:
        return [traj]
    episode_return = demo.deployment.placed_count()
    n = demo.instance.network.node_count
    if traj.horizon < horizon:
        instance = Instance(demo.instance.network, demo.instance.chains, horizon)
        schedule = np.zeros((demo.instance.chain_count, horizon), dtype=np.uint8)
        schedule[:, :demo.deployment.horizon] = demo.deployment.schedule
        deployment = Deployment(demo.deployment.placement, schedule)
        return [_demo_trajectory(instance, deployment, _actions_by_slot(traj), traj.codec)]
    out = []
    for start in range(0, traj.horizon - horizon + 1, horizon):
        states = traj.states[start:start + horizon]
        actions = traj.actions[start:start + horizon - 1]
        rewards = traj.rewards[start:start + horizon - 1]
        value = episode_return if dataset_io.constraints_hold(states, n) else 0
        out.append(Trajectory(states, actions, rewards, value, traj.codec))
    return out


def iterate_demonstrations(cfg: GenConfig, rounds: int, refine: bool = True) -> list[Demonstration]:
    """Generate ``rounds`` demonstrations with deterministic per-round seeds."""
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    demos = []
    for r in range(rounds):
        seed = int(np.random.SeedSequence((cfg.seed, r)).generate_state(1)[0])
        demo = inverse_generate(replace(cfg, seed=seed))
        if refine:
            demo = refine_demonstration(demo)
        demos.append(demo)
    return demos
