"""Shared builders for small networks and instances used across the suite."""

from __future__ import annotations

import numpy as np
import pytest

from sfclab.model import Deployment, Instance, Network, ServiceChain


def make_network(edges, capacities):
    """Network from an edge list of (p, q, bandwidth) triples."""
    n = len(capacities)
    bw = np.zeros((n, n), dtype=np.int64)
    for p, q, b in edges:
        bw[p, q] = b
        bw[q, p] = b
    return Network(np.asarray(capacities, dtype=np.int64), bw)


def path_network(n, capacity=2, bandwidth=1):
    """A path 0-1-...-(n-1) with uniform budgets."""
    return make_network([(i, i + 1, bandwidth) for i in range(n - 1)], [capacity] * n)


def unit_chain(cid, length, duration=1, release=0):
    return ServiceChain(
        id=cid,
        node_demands=(1,) * length,
        flow_demands=(1,) * (length - 1),
        duration=duration,
        release=release,
    )


def random_instance(rng, n_range=(2, 4), chains_range=(1, 3), deadline_range=(2, 6),
                    demand_max=2, duration_max=2, length_max=3, capacity_range=(1, 3),
                    bandwidth_range=(0, 2)):
    """A small random instance; bandwidth 0 draws leave non-edges behind."""
    n = int(rng.integers(*n_range, endpoint=True))
    caps = rng.integers(capacity_range[0], capacity_range[1], size=n, endpoint=True)
    bw = np.zeros((n, n), dtype=np.int64)
    for p in range(n):
        for q in range(p + 1, n):
            b = int(rng.integers(bandwidth_range[0], bandwidth_range[1], endpoint=True))
            bw[p, q] = bw[q, p] = b
    chains = []
    m = int(rng.integers(*chains_range, endpoint=True))
    deadline = int(rng.integers(*deadline_range, endpoint=True))
    for i in range(m):
        length = int(rng.integers(1, length_max, endpoint=True))
        chains.append(ServiceChain(
            id=i,
            node_demands=tuple(int(c) for c in rng.integers(1, demand_max, size=length, endpoint=True)),
            flow_demands=tuple(int(b) for b in rng.integers(1, demand_max, size=length - 1, endpoint=True)),
            duration=int(rng.integers(1, duration_max, endpoint=True)),
            release=int(rng.integers(0, max(deadline - 1, 0))),
        ))
    return Instance(Network(caps, bw), tuple(chains), deadline)


def random_deployment(rng, instance):
    """A random (not necessarily feasible) deployment for the instance."""
    n = instance.network.node_count
    placement = []
    schedule = np.zeros((instance.chain_count, instance.deadline), dtype=np.uint8)
    for i, chain in enumerate(instance.chains):
        if rng.random() < 0.2:
            placement.append((None,) * chain.length)
            continue
        placement.append(tuple(int(s) for s in rng.integers(0, n, size=chain.length)))
        slots = rng.choice(instance.deadline, size=min(chain.duration, instance.deadline), replace=False)
        schedule[i, slots] = 1
    return Deployment(tuple(placement), schedule)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
