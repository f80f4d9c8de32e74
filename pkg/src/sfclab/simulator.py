"""Online episode engine: Poisson arrivals, policy-driven placement, metrics.

Each slot the engine reveals the pending queue (oldest first, truncated to
the action row count) and the encoded system state to the policy; the policy
answers with a one-hot-per-row anchor matrix.  For every acted row the
engine completes the chain deterministically by greedy depth-first embedding
from the given anchor and, on success, schedules it at the earliest feasible
slots.  Chains that out-wait their patience or cannot finish inside the
horizon are blocked.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .bridge import BridgeClient, BridgeError
from .dataset import Trajectory, constraints_hold
from .heuristics import (
    BudgetExceededError,
    PlacementPolicy,
    ResourceLedger,
    dfs_place,
    exact_solve,
)
from .invdemo import GenConfig, _random_network
from .model import (
    Deployment,
    Instance,
    Network,
    ServiceChain,
    StateCodec,
    SystemState,
    completion_times,
    encode_state,
)

__all__ = [
    "EpisodeConfig",
    "Metrics",
    "EpisodeResult",
    "EvaluationTable",
    "ProtocolError",
    "Policy",
    "GreedyAnchorPolicy",
    "CentralAnchorPolicy",
    "RandomAnchorPolicy",
    "BridgePolicy",
    "arrivals",
    "drive_episode",
    "run_episode",
    "evaluate",
    "make_policy",
]


class ProtocolError(RuntimeError):
    """A policy emitted a malformed action; the episode is aborted."""


@dataclass(frozen=True)
class EpisodeConfig:
    """Episode shape: chain/network synthesis knobs plus arrival dynamics.

    ``gen.chains`` is the total chain budget M; the arrival rate defaults to
    ``M / horizon`` so the expected arrivals fill the horizon.  ``gen`` also
    fixes the pending-queue row count through ``max_tracked``.
    """

    gen: GenConfig = field(default_factory=GenConfig)
    horizon: int = 1000
    arrival_rate: float | None = None
    patience: int = 20

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.arrival_rate is not None and self.arrival_rate <= 0:
            raise ValueError("arrival rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be positive")

    @property
    def rate(self) -> float:
        return self.arrival_rate if self.arrival_rate is not None else self.gen.chains / self.horizon

    def codec(self) -> StateCodec:
        base = self.gen.codec()
        return replace(base, time_scale=self.horizon)

    @classmethod
    def table_setup(cls, nodes: int = 5, sfcs: int = 200, horizon: int = 1000,
                    seed: int = 0, **overrides) -> "EpisodeConfig":
        """The benchmark environment used for baseline comparison tables.

        Unit-bandwidth links, mixed capacities 2/3 dealt evenly, and
        mid-length service times put the network under steady contention, so
        placement quality separates the policies instead of drowning in
        slack or in overload.
        """
        gen = GenConfig(
            nodes=nodes,
            chains=sfcs,
            seed=seed,
            capacity_range=overrides.pop("capacity_range", (2, 3)),
            bandwidth_range=overrides.pop("bandwidth_range", (1, 1)),
            duration_range=overrides.pop("duration_range", (5, 12)),
            extra_edge_prob=overrides.pop("extra_edge_prob", 0.45),
        )
        return cls(gen=gen, horizon=horizon, **overrides)


@dataclass(frozen=True)
class Metrics:
    """Episode outcome in the four reported columns."""

    reward: int
    avg_waiting: float
    blocked: int
    efficiency: float

    def as_row(self) -> dict:
        return {"reward": self.reward, "avg_waiting": self.avg_waiting,
                "blocked": self.blocked, "efficiency": self.efficiency}


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    metrics: Metrics
    trajectory: Trajectory
    instance: Instance
    deployment: Deployment


def arrivals(cfg: EpisodeConfig, rng: np.random.Generator) -> list[ServiceChain]:
    """Chains with Poisson-drawn release slots, truncated at the chain budget.

    Per-slot arrival counts are Poisson with the configured rate; chain
    shapes are drawn from the generator ranges.  The stream stops after
    ``gen.chains`` arrivals, so late horizons may see none.
    """
    out: list[ServiceChain] = []
    budget = cfg.gen.chains
    for slot in range(cfg.horizon):
        if len(out) >= budget:
            break
        count = min(int(rng.poisson(cfg.rate)), budget - len(out))
        for _ in range(count):
            chain = _draw_chain(cfg.gen, len(out), slot, rng)
            out.append(chain)
    return out


def _draw_chain(gen: GenConfig, index: int, release: int, rng: np.random.Generator) -> ServiceChain:
    length = int(rng.integers(gen.length_range[0], gen.length_range[1], endpoint=True))
    return ServiceChain(
        id=index,
        node_demands=tuple(int(c) for c in rng.integers(
            gen.node_demand_range[0], gen.node_demand_range[1], size=length, endpoint=True)),
        flow_demands=tuple(int(b) for b in rng.integers(
            gen.flow_demand_range[0], gen.flow_demand_range[1], size=length - 1, endpoint=True)),
        duration=int(rng.integers(gen.duration_range[0], gen.duration_range[1], endpoint=True)),
        release=release,
    )


class Policy:
    """Per-episode policy: observes the encoded state, answers anchor rows.

    ``completion_order`` tells the engine how to expand the depth-first
    embedding from an acted anchor: the named baselines keep their own
    expansion rule, while external (bridge) agents get the deterministic
    greedy completion.
    """

    completion_order: str = "greedy"

    def begin(self, network: Network, codec: StateCodec, horizon: int) -> None:  # noqa: B027
        pass

    def act(self, state: SystemState, pending: Sequence[ServiceChain], slot: int) -> np.ndarray:
        raise NotImplementedError

    def completion_rng(self) -> np.random.Generator | None:
        return None

    def finish(self) -> None:  # noqa: B027
        pass


class GreedyAnchorPolicy(Policy):
    """Anchor pending chains at the servers with the most remaining resources,
    best first so simultaneous placements do not pile onto one server."""

    def begin(self, network, codec, horizon):
        self._caps = network.capacities
        self._m = codec.max_tracked
        self._n = network.node_count

    def act(self, state, pending, slot):
        residual = np.rint(state.node_residual * self._caps).astype(np.int64)
        ranked = sorted(range(self._n), key=lambda s: (-residual[s], s))
        matrix = np.zeros((self._m, self._n), dtype=np.uint8)
        for k in range(min(len(pending), self._m)):
            matrix[k, ranked[k % self._n]] = 1
        return matrix


class CentralAnchorPolicy(Policy):
    """Anchor at the most central server able to host the chain's first
    function, hub first; the embedding stays along central nodes."""

    completion_order = "central"

    def begin(self, network, codec, horizon):
        degrees = network.degrees()
        self._by_degree = sorted(range(network.node_count), key=lambda s: (-degrees[s], s))
        self._caps = network.capacities
        self._m = codec.max_tracked
        self._n = network.node_count

    def act(self, state, pending, slot):
        residual = np.rint(state.node_residual * self._caps).astype(np.int64)
        matrix = np.zeros((self._m, self._n), dtype=np.uint8)
        for k, chain in enumerate(pending[:self._m]):
            anchor = self._by_degree[0]
            for server in self._by_degree:
                if residual[server] >= chain.node_demands[0]:
                    anchor = server
                    break
            matrix[k, anchor] = 1
        return matrix


class RandomAnchorPolicy(Policy):
    """Deploy each chain at a uniformly drawn server, chosen once on arrival.

    The policy is state-blind: the draw is the deployment decision, so a
    chain keeps its anchor across retries.  The embedding from the anchor is
    completed in uniformly shuffled order as well.
    """

    completion_order = "random"

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._anchors: dict[int, int] = {}

    def begin(self, network, codec, horizon):
        self._m = codec.max_tracked
        self._n = network.node_count
        self._anchors.clear()

    def act(self, state, pending, slot):
        matrix = np.zeros((self._m, self._n), dtype=np.uint8)
        for k, chain in enumerate(pending[:self._m]):
            if chain.id not in self._anchors:
                self._anchors[chain.id] = int(self._rng.integers(self._n))
            matrix[k, self._anchors[chain.id]] = 1
        return matrix

    def completion_rng(self):
        return self._rng


class BridgePolicy(Policy):
    """Forwards observations to an external agent over the bridge protocol."""

    def __init__(self, endpoint: str):
        self._endpoint = endpoint
        self._client: BridgeClient | None = None

    def begin(self, network, codec, horizon):
        self._m = codec.max_tracked
        self._n = network.node_count
        self._client = BridgeClient(self._endpoint)
        self._client.connect()
        self._client.handshake(self._n, self._m)

    def act(self, state, pending, slot):
        return self._client.act(state, pending, slot, self._m, self._n)

    def finish(self):
        if self._client is not None:
            self._client.close()
            self._client = None


def make_policy(spec: PlacementPolicy | str, episode_seed: int = 0,
                endpoint: str | None = None) -> Policy:
    """Build the runtime policy for a named baseline or a bridge endpoint."""
    name = spec.name if isinstance(spec, PlacementPolicy) else spec
    if name == "greedy":
        return GreedyAnchorPolicy()
    if name == "central":
        return CentralAnchorPolicy()
    if name == "random":
        policy_seed = spec.rng_seed if isinstance(spec, PlacementPolicy) else 0
        rng = np.random.default_rng(np.random.SeedSequence((policy_seed, episode_seed)))
        return RandomAnchorPolicy(rng)
    if name == "bridge":
        if not endpoint:
            raise ValueError("bridge policy needs an endpoint")
        return BridgePolicy(endpoint)
    raise ValueError(f"no runtime policy for {name!r}")


def _tracked_view(pending: list[int], active: list[int], m: int) -> list[int]:
    return (pending + active)[:m]


def drive_episode(network: Network, chains: Sequence[ServiceChain], horizon: int,
                  patience: int, policy: Policy, codec: StateCodec) -> EpisodeResult:
    """Run the slot loop over a fixed arrival list and return everything.

    The recorded trajectory holds the post-action state of every slot;
    ``actions[k]`` is the matrix acted on in slot ``k+1``, so a slot-0
    placement (possible only when a chain is released at 0) is executed but
    not representable in the record.
    """
    instance = Instance(network, tuple(chains), horizon)
    m = codec.max_tracked
    n = network.node_count
    ledger = ResourceLedger(network, horizon)
    placement: list[tuple[int | None, ...]] = [(None,) * c.length for c in chains]
    schedule = np.zeros((len(chains), horizon), dtype=np.uint8)
    pending: list[int] = []
    active: list[int] = []
    blocked: list[int] = []
    waitings: dict[int, int] = {}
    arrived = 0

    states = np.zeros((horizon, codec.state_dim(n)), dtype=np.float64)
    actions = np.zeros((max(horizon - 1, 0), m, n), dtype=np.uint8)
    rewards = np.zeros(max(horizon - 1, 0), dtype=np.int64)

    by_release = sorted(range(len(chains)), key=lambda i: (chains[i].release, i))
    release_cursor = 0

    policy.begin(network, codec, horizon)
    try:
        for t in range(horizon):
            while release_cursor < len(by_release) and chains[by_release[release_cursor]].release == t:
                pending.append(by_release[release_cursor])
                release_cursor += 1
                arrived += 1

            still_pending = []
            for i in pending:
                chain = chains[i]
                if t - chain.release >= patience or horizon - t < chain.duration:
                    blocked.append(i)
                else:
                    still_pending.append(i)
            pending = still_pending
            active = [i for i in active if np.flatnonzero(schedule[i]).size
                      and int(np.flatnonzero(schedule[i])[-1]) >= t]

            snapshot = Deployment(tuple(placement), schedule.copy())
            observation = encode_state(instance, snapshot, t,
                                       _tracked_view(pending, active, m), codec)
            matrix = policy.act(observation, [chains[i] for i in pending[:m]], t)
            matrix = _validated_action(matrix, m, n)

            placed_now = 0
            for k, i in enumerate(list(pending[:m])):
                row = matrix[k]
                hot = np.flatnonzero(row)
                if not hot.size:
                    continue
                chain = chains[i]
                servers = dfs_place(ledger.node_residual(t), ledger.link_residual(t),
                                    chain, int(hot[0]), order=policy.completion_order,
                                    rng=policy.completion_rng())
                if servers is None:
                    continue
                slots = ledger.earliest_slots(chain, servers, t)
                if slots is None:
                    continue
                ledger.commit(chain, servers, slots)
                placement[i] = servers
                schedule[i, slots] = 1
                waitings[i] = slots[0] - chain.release
                pending.remove(i)
                active.append(i)
                placed_now += 1

            post = Deployment(tuple(placement), schedule.copy())
            active = [i for i in active if int(np.flatnonzero(schedule[i])[-1]) >= t]
            states[t] = encode_state(instance, post, t,
                                     _tracked_view(pending, active, m), codec).vector()
            if t >= 1:
                actions[t - 1] = matrix
                rewards[t - 1] = placed_now
    finally:
        policy.finish()

    blocked.extend(pending)
    deployment = Deployment(tuple(placement), schedule.copy())
    served = len(waitings)
    metrics = Metrics(
        reward=served,
        avg_waiting=float(np.mean(list(waitings.values()))) if served else 0.0,
        blocked=len(blocked),
        efficiency=served / len(chains) if chains else 1.0,
    )
    episode_return = served if constraints_hold(states, n) else 0
    trajectory = Trajectory(states, actions, rewards, episode_return, codec)
    return EpisodeResult(metrics, trajectory, instance, deployment)


def _validated_action(matrix: np.ndarray, m: int, n: int) -> np.ndarray:
    matrix = np.asarray(matrix)
    if matrix.shape != (m, n):
        raise ProtocolError(f"action must be a {m}x{n} matrix, got {matrix.shape}")
    if not np.isin(matrix, (0, 1)).all():
        raise ProtocolError("action entries must be 0 or 1")
    matrix = matrix.astype(np.uint8)
    if (matrix.sum(axis=1) > 1).any():
        raise ProtocolError("action rows must have at most one 1")
    return matrix


def run_episode(cfg: EpisodeConfig, policy_spec: PlacementPolicy | str, seed: int,
                endpoint: str | None = None) -> EpisodeResult:
    """Synthesize the episode for ``seed`` and drive the chosen policy through it.

    The clairvoyant ``exact`` policy bypasses the slot loop: it solves the
    whole revealed instance with the branch-and-bound oracle (budget guard
    applies) and reports the metrics of the optimal deployment.
    """
    rng = np.random.default_rng(np.random.SeedSequence((cfg.gen.seed, seed)))
    network = _random_network(cfg.gen, rng)
    chains = arrivals(cfg, rng)
    codec = cfg.codec()
    name = policy_spec.name if isinstance(policy_spec, PlacementPolicy) else policy_spec
    if name == "exact":
        return _clairvoyant_episode(network, chains, cfg.horizon, codec)
    policy = make_policy(policy_spec, episode_seed=seed, endpoint=endpoint)
    return drive_episode(network, chains, cfg.horizon, cfg.patience, policy, codec)


def _clairvoyant_episode(network: Network, chains: Sequence[ServiceChain],
                         horizon: int, codec: StateCodec) -> EpisodeResult:
    instance = Instance(network, tuple(chains), horizon)
    deployment, value = exact_solve(instance)
    waits = []
    for i, chain in enumerate(chains):
        slots = np.flatnonzero(deployment.schedule[i])
        if slots.size:
            waits.append(int(slots[0]) - chain.release)
    metrics = Metrics(
        reward=value,
        avg_waiting=float(np.mean(waits)) if waits else 0.0,
        blocked=len(chains) - value,
        efficiency=value / len(chains) if chains else 1.0,
    )
    completions = completion_times(deployment)
    n = network.node_count
    states = np.zeros((horizon, codec.state_dim(n)), dtype=np.float64)
    for t in range(horizon):
        tracked = [i for i, chain in enumerate(chains)
                   if chain.release <= t and completions[i] is not None and completions[i] >= t]
        states[t] = encode_state(instance, deployment, t, tracked[:codec.max_tracked], codec).vector()
    # the oracle plans offline; per-slot actions are not part of its contract
    actions = np.zeros((max(horizon - 1, 0), codec.max_tracked, n), dtype=np.uint8)
    rewards = np.zeros(max(horizon - 1, 0), dtype=np.int64)
    trajectory = Trajectory(states, actions, rewards, value, codec)
    return EpisodeResult(metrics, trajectory, instance, deployment)


@dataclass(frozen=True)
class EvaluationTable:
    """Per-seed metric rows plus their mean and standard deviation."""

    rows: tuple[tuple[int, Metrics], ...]

    COLUMNS = ("reward", "avg_waiting", "blocked", "efficiency")

    def column(self, name: str) -> np.ndarray:
        return np.asarray([getattr(metrics, name) for _, metrics in self.rows], dtype=np.float64)

    def mean(self) -> dict:
        return {name: float(self.column(name).mean()) for name in self.COLUMNS}

    def std(self) -> dict:
        return {name: float(self.column(name).std(ddof=0)) for name in self.COLUMNS}


def evaluate(cfg: EpisodeConfig, policy_spec: PlacementPolicy | str, seeds: Sequence[int],
             endpoint: str | None = None, workers: int | None = None) -> EvaluationTable:
    """Run one episode per seed (in worker threads) and tabulate the metrics."""
    if not seeds:
        raise ValueError("at least one seed is required")
    seeds = list(seeds)

    def one(seed: int) -> tuple[int, Metrics]:
        return seed, run_episode(cfg, policy_spec, seed, endpoint=endpoint).metrics

    if workers is None:
        workers = min(8, len(seeds))
    if workers <= 1 or len(seeds) == 1:
        rows = [one(seed) for seed in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, seeds))
    return EvaluationTable(tuple(rows))
