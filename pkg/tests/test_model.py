"""Core model tests: loads, feasibility, reward, completions, encoding, relabeling."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfclab.model import (
    Deployment,
    InfeasibleDeploymentError,
    Instance,
    Network,
    ServiceChain,
    StateCodec,
    check_feasible,
    completion_times,
    encode_state,
    link_load,
    node_load,
    relabel,
    reward,
)

from conftest import make_network, path_network, random_deployment, random_instance, unit_chain


def brute_node_load(instance, dep, t):
    """Independent oracle: direct triple-loop sum over (chain, position, server)."""
    n = instance.network.node_count
    loads = np.zeros(n, dtype=np.int64)
    for i, chain in enumerate(instance.chains):
        for j in range(chain.length):
            for p in range(n):
                if dep.placement[i][j] == p and dep.schedule[i, t]:
                    loads[p] += chain.node_demands[j]
    return loads


def brute_link_load(instance, dep, t):
    n = instance.network.node_count
    loads = np.zeros((n, n), dtype=np.int64)
    for i, chain in enumerate(instance.chains):
        for j in range(chain.length - 1):
            for p in range(n):
                for q in range(n):
                    if p == q:
                        continue
                    if (dep.placement[i][j] == p and dep.placement[i][j + 1] == q
                            and dep.schedule[i, t]):
                        loads[p, q] += chain.flow_demands[j]
                        loads[q, p] += chain.flow_demands[j]
    return loads


class TestNetwork:
    def test_rejects_asymmetric_bandwidth(self):
        with pytest.raises(ValueError, match="symmetric"):
            Network([1, 1], [[0, 1], [2, 0]])

    def test_rejects_nonzero_diagonal(self):
        with pytest.raises(ValueError, match="diagonal"):
            Network([1, 1], [[1, 0], [0, 0]])

    def test_rejects_negative_budgets(self):
        with pytest.raises(ValueError):
            Network([1, -1], [[0, 0], [0, 0]])

    def test_edges_are_the_nonzero_entries(self):
        net = make_network([(0, 1, 2), (1, 2, 1)], [1, 1, 1])
        assert net.edge_count() == 2
        assert list(net.neighbors(1)) == [0, 2]
        assert list(net.degrees()) == [1, 2, 1]


class TestServiceChain:
    def test_demand_lengths_must_match(self):
        with pytest.raises(ValueError, match="one fewer"):
            ServiceChain(0, (1, 1), (1, 1), duration=1, release=0)

    def test_rejects_nonpositive_demands(self):
        with pytest.raises(ValueError):
            ServiceChain(0, (1, 0), (1,), duration=1, release=0)


class TestNodeLoad:
    def test_empty_schedule_gives_zero_vector(self):
        inst = Instance(path_network(3), (unit_chain(0, 2),), deadline=4)
        dep = Deployment.empty(inst)
        assert (node_load(inst, dep, 0) == 0).all()

    def test_two_unit_functions_on_one_server(self):
        # capacity 2 per node: two co-located unit demands load it exactly to 2
        inst = Instance(path_network(3, capacity=2), (unit_chain(0, 2, duration=1),), deadline=2)
        sched = np.zeros((1, 2), dtype=np.uint8)
        sched[0, 0] = 1
        dep = Deployment(((1, 1),), sched)
        loads = node_load(inst, dep, 0)
        assert loads[1] == 2
        assert (loads <= inst.network.capacities).all()

    def test_slot_out_of_range(self):
        inst = Instance(path_network(2), (unit_chain(0, 1),), deadline=3)
        dep = Deployment.empty(inst)
        with pytest.raises(ValueError, match="slot"):
            node_load(inst, dep, 3)

    def test_matches_triple_loop_oracle_on_random_instances(self, rng):
        for _ in range(60):
            inst = random_instance(rng, n_range=(2, 4))
            dep = random_deployment(rng, inst)
            for t in range(inst.deadline):
                assert (node_load(inst, dep, t) == brute_node_load(inst, dep, t)).all()
                assert (link_load(inst, dep, t) == brute_link_load(inst, dep, t)).all()


class TestLinkLoad:
    def test_co_located_chain_is_all_idle(self):
        inst = Instance(path_network(4), (unit_chain(0, 2, duration=1),), deadline=2)
        sched = np.ones((1, 2), dtype=np.uint8) * 0
        sched[0, 0] = 1
        dep = Deployment(((3, 3),), sched)
        assert (link_load(inst, dep, 0) == 0).all()

    def test_two_unit_flows_overload_a_unit_link(self):
        # bandwidth 1 per link: two flows across (0,1) load it to 2 > 1
        net = path_network(2, capacity=4, bandwidth=1)
        chains = (unit_chain(0, 2, duration=1), unit_chain(1, 2, duration=1))
        inst = Instance(net, chains, deadline=2)
        sched = np.zeros((2, 2), dtype=np.uint8)
        sched[:, 0] = 1
        dep = Deployment(((0, 1), (0, 1)), sched)
        loads = link_load(inst, dep, 0)
        assert loads[0, 1] == 2
        report = check_feasible(inst, dep)
        assert not report.ok
        assert any(v.constraint == 3 for v in report.violations)

    def test_flow_across_non_edge_is_flagged(self):
        net = make_network([(0, 1, 1)], [2, 2, 2])  # no link between 1 and 2
        inst = Instance(net, (unit_chain(0, 2, duration=1),), deadline=2)
        sched = np.zeros((1, 2), dtype=np.uint8)
        sched[0, 0] = 1
        dep = Deployment(((1, 2),), sched)
        report = check_feasible(inst, dep)
        assert any(v.constraint == 3 and v.slot is None for v in report.violations)


class TestCheckFeasible:
    def test_all_unplaced_all_zero_is_ok(self, rng):
        inst = random_instance(rng)
        assert check_feasible(inst, Deployment.empty(inst)).ok

    def test_duration_shortfall_cites_constraint_4(self):
        inst = Instance(path_network(2), (unit_chain(0, 1, duration=2),), deadline=4)
        sched = np.zeros((1, 4), dtype=np.uint8)
        sched[0, 1] = 1  # one slot short
        dep = Deployment(((0,),), sched)
        report = check_feasible(inst, dep)
        assert [v.constraint for v in report.violations] == [4]

    def test_activity_before_release_cites_constraint_4(self):
        inst = Instance(path_network(2), (unit_chain(0, 1, duration=1, release=2),), deadline=4)
        sched = np.zeros((1, 4), dtype=np.uint8)
        sched[0, 1] = 1
        dep = Deployment(((0,),), sched)
        report = check_feasible(inst, dep)
        assert any(v.constraint == 4 and v.slot == 1 for v in report.violations)

    def test_capacity_violation_cites_constraint_2(self):
        inst = Instance(path_network(2, capacity=1), (unit_chain(0, 2, duration=1),), deadline=2)
        sched = np.zeros((1, 2), dtype=np.uint8)
        sched[0, 0] = 1
        dep = Deployment(((0, 0),), sched)  # two units on a capacity-1 server
        report = check_feasible(inst, dep)
        assert any(v.constraint == 2 and v.subject == (0,) for v in report.violations)

    def test_schedule_without_full_placement_cites_constraint_5(self):
        inst = Instance(path_network(2), (unit_chain(0, 2, duration=1),), deadline=2)
        sched = np.zeros((1, 2), dtype=np.uint8)
        sched[0, 0] = 1
        dep = Deployment(((0, None),), sched)
        report = check_feasible(inst, dep)
        assert [v.constraint for v in report.violations] == [5]

    def test_co_locating_the_tail_never_hurts_bandwidth(self, rng):
        # an idle flow carries nothing, so pulling the last position onto its
        # predecessor's server weakly decreases every link load
        for _ in range(40):
            inst = random_instance(rng, chains_range=(1, 2))
            dep = random_deployment(rng, inst)
            for i, chain in enumerate(inst.chains):
                if chain.length < 2 or not dep.is_placed(i):
                    continue
                merged = list(dep.placement[i])
                merged[-1] = merged[-2]
                dep2 = Deployment(
                    tuple(tuple(merged) if k == i else pos for k, pos in enumerate(dep.placement)),
                    dep.schedule,
                )
                for t in range(inst.deadline):
                    assert (link_load(inst, dep2, t) <= link_load(inst, dep, t)).all()
                break


class TestReward:
    def test_all_chains_placed(self):
        inst = Instance(path_network(3, capacity=3), (unit_chain(0, 1), unit_chain(1, 1)), deadline=2)
        sched = np.zeros((2, 2), dtype=np.uint8)
        sched[0, 0] = 1
        sched[1, 0] = 1
        dep = Deployment(((0,), (1,)), sched)
        assert reward(inst, dep) == 2

    def test_one_unplaced_position_zeroes_that_chain(self):
        inst = Instance(path_network(3, capacity=3), (unit_chain(0, 2), unit_chain(1, 1)), deadline=2)
        sched = np.zeros((2, 2), dtype=np.uint8)
        sched[1, 0] = 1
        dep = Deployment(((0, None), (1,)), sched)
        assert reward(inst, dep) == 1

    def test_infeasible_deployment_is_a_contract_error(self):
        inst = Instance(path_network(2), (unit_chain(0, 1, duration=2),), deadline=4)
        sched = np.zeros((1, 4), dtype=np.uint8)
        sched[0, 0] = 1
        dep = Deployment(((0,),), sched)
        with pytest.raises(InfeasibleDeploymentError):
            reward(inst, dep)


class TestCompletionTimes:
    def test_last_active_slot(self):
        sched = np.zeros((1, 5), dtype=np.uint8)
        sched[0, [2, 3]] = 1
        dep = Deployment(((0,),), sched)
        assert completion_times(dep) == (3,)

    def test_all_zero_row_is_none(self):
        dep = Deployment(((0,),), np.zeros((1, 4), dtype=np.uint8))
        assert completion_times(dep) == (None,)

    @given(st.lists(st.lists(st.integers(0, 1), min_size=1, max_size=12), min_size=1, max_size=4)
           .filter(lambda rows: len({len(r) for r in rows}) == 1))
    @settings(max_examples=80, deadline=None)
    def test_agrees_with_reverse_scan(self, rows):
        sched = np.asarray(rows, dtype=np.uint8)
        dep = Deployment(tuple((0,) for _ in rows), sched)
        got = completion_times(dep)
        for row, t in zip(rows, got):
            expected = None
            for k in range(len(row) - 1, -1, -1):
                if row[k]:
                    expected = k
                    break
            assert t == expected


class TestEncodeState:
    def codec(self):
        return StateCodec(max_tracked=3, max_length=3, max_node_demand=2,
                          max_flow_demand=2, max_duration=4, time_scale=8)

    def test_fresh_network_has_full_residuals(self):
        inst = Instance(path_network(3, capacity=2), (unit_chain(0, 2, release=2),), deadline=4)
        state = encode_state(inst, Deployment.empty(inst), 0, [], self.codec())
        assert (state.node_residual == 1.0).all()
        expected = (inst.network.bandwidth > 0).astype(float)
        assert (state.link_residual == expected).all()

    def test_unit_demand_on_capacity_two_server(self):
        inst = Instance(path_network(2, capacity=2), (unit_chain(0, 1, duration=1),), deadline=2)
        sched = np.zeros((1, 2), dtype=np.uint8)
        sched[0, 0] = 1
        dep = Deployment(((0,),), sched)
        state = encode_state(inst, dep, 0, [0], self.codec())
        assert state.node_residual[0] == pytest.approx(0.5)

    def test_feature_row_layout(self):
        codec = self.codec()
        chain = ServiceChain(0, (1, 2), (2,), duration=3, release=4)
        inst = Instance(path_network(4), (chain,), deadline=8)
        sched = np.zeros((1, 8), dtype=np.uint8)
        sched[0, [4, 5, 6]] = 1
        dep = Deployment(((2, 3),), sched)
        state = encode_state(inst, dep, 5, [0], codec)
        row = state.sfc_features[0]
        assert row[0] == pytest.approx(3 / 4)          # anchor: server 2 of 4
        assert row[1] == pytest.approx(4 / 8)          # arrival 4, scale 8
        assert row[2] == pytest.approx(1 / 2) and row[3] == pytest.approx(2 / 2)
        assert row[2 + codec.max_length] == pytest.approx(2 / 2)
        assert row[-3] == pytest.approx(3 / 4)         # duration
        assert row[-2] == pytest.approx(2 / 4)         # one slot executed before t=5
        assert row[-1] == 1.0
        assert (state.sfc_features[1:] == 0).all()     # zero padding

    def test_vector_round_trips_through_layout(self):
        codec = self.codec()
        inst = Instance(path_network(3), (unit_chain(0, 2),), deadline=3)
        state = encode_state(inst, Deployment.empty(inst), 1, [0], codec)
        from sfclab.model import SystemState
        rebuilt = SystemState.from_vector(state.vector(), 3, codec)
        assert np.array_equal(rebuilt.node_residual, state.node_residual)
        assert np.array_equal(rebuilt.link_residual, state.link_residual)
        assert np.array_equal(rebuilt.sfc_features, state.sfc_features)

    def test_too_many_tracked_chains(self):
        inst = Instance(path_network(3), tuple(unit_chain(i, 1) for i in range(4)), deadline=3)
        with pytest.raises(ValueError, match="tracked"):
            encode_state(inst, Deployment.empty(inst), 0, [0, 1, 2, 3], self.codec())

    def test_state_vector_width_is_fixed_by_codec(self):
        codec = self.codec()
        inst = Instance(path_network(3), (unit_chain(0, 1),), deadline=2)
        state = encode_state(inst, Deployment.empty(inst), 0, [0], codec)
        n = 3
        assert state.vector().shape == (n + n * n + codec.max_tracked * codec.row_width,)


class TestRelabel:
    def test_identity_permutation(self, rng):
        inst = random_instance(rng)
        n = inst.network.node_count
        out = relabel(inst, list(range(n)))
        assert np.array_equal(out.network.capacities, inst.network.capacities)
        assert np.array_equal(out.network.bandwidth, inst.network.bandwidth)

    def test_swap_twice_is_identity(self):
        inst = Instance(make_network([(0, 1, 3), (1, 2, 1)], [1, 2, 3]), (), deadline=2)
        perm = [1, 0, 2]
        out = relabel(relabel(inst, perm), perm)
        assert np.array_equal(out.network.capacities, inst.network.capacities)
        assert np.array_equal(out.network.bandwidth, inst.network.bandwidth)

    def test_capacity_follows_server(self):
        inst = Instance(make_network([(0, 1, 5)], [7, 9]), (), deadline=2)
        out = relabel(inst, [1, 0])
        assert list(out.network.capacities) == [9, 7]
        assert out.network.bandwidth[0, 1] == 5

    def test_rejects_non_bijection(self, rng):
        inst = random_instance(rng, n_range=(3, 3))
        with pytest.raises(ValueError, match="bijection"):
            relabel(inst, [0, 0, 2])

    def test_loads_are_equivariant(self, rng):
        for _ in range(20):
            inst = random_instance(rng, n_range=(3, 4))
            dep = random_deployment(rng, inst)
            n = inst.network.node_count
            perm = rng.permutation(n)
            relabeled = relabel(inst, perm)
            mapped = Deployment(
                tuple(tuple(None if s is None else int(perm[s]) for s in pos) for pos in dep.placement),
                dep.schedule,
            )
            for t in range(inst.deadline):
                orig = node_load(inst, dep, t)
                moved = node_load(relabeled, mapped, t)
                assert all(moved[perm[p]] == orig[p] for p in range(n))
