"""Episode engine tests: arrivals, stepping, replay, metrics, and the bridge."""

from __future__ import annotations

import json
import socket
import threading

import numpy as np
import pytest

from sfclab.bridge import BridgeClient, BridgeError
from sfclab.heuristics import PlacementPolicy
from sfclab.invdemo import GenConfig, inverse_generate
from sfclab.model import check_feasible, link_load, node_load, reward
from sfclab.simulator import (
    EpisodeConfig,
    Policy,
    ProtocolError,
    arrivals,
    drive_episode,
    evaluate,
    make_policy,
    run_episode,
)


def small_cfg(**kwargs):
    gen = GenConfig(nodes=4, chains=kwargs.pop("chains", 20), seed=kwargs.pop("gen_seed", 0),
                    duration_range=kwargs.pop("duration_range", (2, 5)))
    return EpisodeConfig(gen=gen, horizon=kwargs.pop("horizon", 60), **kwargs)


class ScriptedPolicy(Policy):
    """Replays a fixed action tensor: actions[k] is acted in slot k+1."""

    def __init__(self, actions, m, n):
        self.actions, self.m, self.n = actions, m, n

    def act(self, state, pending, slot):
        if slot >= 1 and slot - 1 < len(self.actions):
            return np.asarray(self.actions[slot - 1], dtype=np.uint8)
        return np.zeros((self.m, self.n), dtype=np.uint8)


class TestArrivals:
    def test_deterministic_stream(self):
        cfg = small_cfg()
        a = arrivals(cfg, np.random.default_rng(3))
        b = arrivals(cfg, np.random.default_rng(3))
        assert a == b

    def test_truncated_at_the_chain_budget(self):
        cfg = EpisodeConfig(gen=GenConfig(nodes=3, chains=1, seed=0), horizon=50,
                            arrival_rate=5.0)
        stream = arrivals(cfg, np.random.default_rng(0))
        assert len(stream) == 1

    def test_releases_are_non_decreasing_and_ids_sequential(self):
        cfg = small_cfg()
        stream = arrivals(cfg, np.random.default_rng(1))
        releases = [c.release for c in stream]
        assert releases == sorted(releases)
        assert [c.id for c in stream] == list(range(len(stream)))

    def test_poisson_mean_within_three_sigma(self):
        # 10^5 slots at rate 0.3: the empirical mean must sit within 3 sigma
        lam = 0.3
        slots = 100_000
        cfg = EpisodeConfig(gen=GenConfig(nodes=3, chains=slots, seed=0), horizon=slots,
                            arrival_rate=lam)
        stream = arrivals(cfg, np.random.default_rng(11))
        mean = len(stream) / slots
        sigma = np.sqrt(lam / slots)
        assert abs(mean - lam) < 3 * sigma


class TestEpisodes:
    def test_zero_arrivals_vacuous_success(self):
        cfg = EpisodeConfig(gen=GenConfig(nodes=3, chains=0, seed=0), horizon=20,
                            arrival_rate=1.0)
        res = run_episode(cfg, "greedy", seed=0)
        assert res.metrics.reward == 0
        assert res.metrics.blocked == 0
        assert res.metrics.efficiency == 1.0

    def test_single_chain_placed_with_zero_waiting(self):
        cfg = EpisodeConfig(gen=GenConfig(nodes=4, chains=1, seed=2,
                                          length_range=(2, 2), duration_range=(2, 2)),
                            horizon=30, arrival_rate=0.5)
        res = run_episode(cfg, "greedy", seed=0)
        assert res.metrics.reward == 1
        assert res.metrics.avg_waiting == 0.0

    def test_final_deployment_is_feasible(self):
        for seed in range(6):
            res = run_episode(small_cfg(), "greedy", seed=seed)
            assert check_feasible(res.instance, res.deployment).ok

    def test_deterministic_replay_of_full_episode(self):
        cfg = small_cfg()
        for name in ("greedy", "central", "random"):
            a = run_episode(cfg, PlacementPolicy(name, rng_seed=4), seed=9)
            b = run_episode(cfg, PlacementPolicy(name, rng_seed=4), seed=9)
            assert a.metrics == b.metrics
            assert np.array_equal(a.trajectory.states, b.trajectory.states)

    def test_metrics_recomputed_from_deployment(self):
        for seed in range(5):
            res = run_episode(small_cfg(), "greedy", seed=seed)
            placed = res.deployment.placed_count()
            assert res.metrics.reward == reward(res.instance, res.deployment) == placed
            assert res.metrics.blocked == res.instance.chain_count - placed
            waits = []
            for i, chain in enumerate(res.instance.chains):
                slots = np.flatnonzero(res.deployment.schedule[i])
                if slots.size:
                    waits.append(int(slots[0]) - chain.release)
            expect = float(np.mean(waits)) if waits else 0.0
            assert res.metrics.avg_waiting == pytest.approx(expect)
            assert all(w >= 0 for w in waits)

    def test_resource_conservation_against_core_model(self):
        res = run_episode(small_cfg(chains=15, horizon=40), "random", seed=3)
        for t in range(res.instance.deadline):
            assert (node_load(res.instance, res.deployment, t)
                    <= res.instance.network.capacities).all()
            assert (link_load(res.instance, res.deployment, t)
                    <= res.instance.network.bandwidth).all()

    def test_replaying_demo_actions_reproduces_states_bit_exactly(self):
        for seed in range(15):
            demo = inverse_generate(GenConfig(seed=seed))
            codec = demo.trajectory.codec
            n = demo.instance.network.node_count
            policy = ScriptedPolicy(demo.trajectory.actions, codec.max_tracked, n)
            res = drive_episode(demo.instance.network, demo.instance.chains,
                                demo.instance.deadline, patience=20, policy=policy,
                                codec=codec)
            assert np.array_equal(res.trajectory.states, demo.trajectory.states)
            assert np.array_equal(res.deployment.schedule, demo.deployment.schedule)
            assert res.deployment.placement == demo.deployment.placement
            assert np.array_equal(res.trajectory.rewards, demo.trajectory.rewards)

    def test_malformed_action_aborts_the_episode(self):
        class Broken(Policy):
            def act(self, state, pending, slot):
                return np.ones((2, 2), dtype=np.uint8)

        cfg = small_cfg()
        with pytest.raises(ProtocolError):
            drive_episode(run_episode(cfg, "greedy", seed=0).instance.network,
                          arrivals(cfg, np.random.default_rng(0)), cfg.horizon,
                          cfg.patience, Broken(), cfg.codec())

    def test_exact_policy_on_tiny_episode_dominates_greedy(self):
        cfg = EpisodeConfig(gen=GenConfig(nodes=3, chains=2, seed=5,
                                          length_range=(1, 2), duration_range=(1, 2)),
                            horizon=6, arrival_rate=0.5)
        oracle = run_episode(cfg, "exact", seed=1)
        greedy = run_episode(cfg, "greedy", seed=1)
        assert oracle.metrics.reward >= greedy.metrics.reward
        assert check_feasible(oracle.instance, oracle.deployment).ok


class TestEvaluate:
    def test_single_seed_zero_std(self):
        table = evaluate(small_cfg(), "greedy", seeds=[4])
        assert all(v == 0.0 for v in table.std().values())

    def test_seed_permutation_leaves_means_unchanged(self):
        cfg = small_cfg()
        a = evaluate(cfg, "greedy", seeds=[1, 2, 3], workers=1)
        b = evaluate(cfg, "greedy", seeds=[3, 1, 2], workers=3)
        assert a.mean() == b.mean()

    def test_empty_seed_list_rejected(self):
        with pytest.raises(ValueError):
            evaluate(small_cfg(), "greedy", seeds=[])


def scripted_server(responses, port_holder, stop):
    """One-connection server answering the handshake then canned responses."""
    server = socket.create_server(("127.0.0.1", 0))
    port_holder.append(server.getsockname()[1])
    server.settimeout(10)
    try:
        conn, _ = server.accept()
        reader = conn.makefile("r", encoding="utf-8")
        writer = conn.makefile("w", encoding="utf-8")
        hello = json.loads(reader.readline())
        assert hello["type"] == "hello"
        writer.write(json.dumps({"type": "ready"}) + "\n")
        writer.flush()
        for response in responses:
            line = reader.readline()
            if not line:
                break
            writer.write(response + "\n")
            writer.flush()
        conn.close()
    except OSError:
        pass
    finally:
        server.close()
        stop.set()


class TestBridge:
    def run_with_server(self, responses, fn):
        port_holder: list[int] = []
        stop = threading.Event()
        thread = threading.Thread(target=scripted_server, args=(responses, port_holder, stop))
        thread.start()
        while not port_holder:
            pass
        try:
            return fn(f"tcp:127.0.0.1:{port_holder[0]}")
        finally:
            stop.wait(timeout=10)
            thread.join(timeout=10)

    def test_bridge_policy_roundtrip(self):
        cfg = EpisodeConfig(gen=GenConfig(nodes=3, chains=2, seed=1,
                                          length_range=(1, 1), duration_range=(1, 1)),
                            horizon=8, arrival_rate=0.8)
        m, n = cfg.gen.max_tracked, 3
        matrix = [[0] * n for _ in range(m)]
        matrix[0][0] = 1
        action = json.dumps({"type": "action", "matrix": matrix})

        def run(endpoint):
            return run_episode(cfg, "bridge", seed=0, endpoint=endpoint)

        res = self.run_with_server([action] * cfg.horizon, run)
        assert res.metrics.reward >= 1

    def test_malformed_response_is_a_bridge_error(self):
        def run(endpoint):
            from sfclab.model import SystemState

            client = BridgeClient(endpoint)
            client.connect()
            client.handshake(3, 2)
            state = SystemState(np.zeros(3), np.zeros((3, 3)), np.zeros((2, 10)))
            with pytest.raises(BridgeError):
                client.act(state, [], 0, 2, 3)
            client.close()

        self.run_with_server(["{\"type\":\"action\",\"matrix\":[[2,0,0],[0,0,0]]}"], run)

    def test_unreachable_endpoint(self):
        client = BridgeClient("tcp:127.0.0.1:1")
        with pytest.raises(BridgeError):
            client.connect()

    def test_refused_handshake(self):
        def run(endpoint):
            client = BridgeClient(endpoint)
            client.connect()
            with pytest.raises(BridgeError, match="refused"):
                client.handshake(3, 2)
            client.close()

        # a server that answers something other than ready:
        port_holder: list[int] = []
        stop = threading.Event()

        def bad_server():
            server = socket.create_server(("127.0.0.1", 0))
            port_holder.append(server.getsockname()[1])
            server.settimeout(10)
            try:
                conn, _ = server.accept()
                reader = conn.makefile("r", encoding="utf-8")
                writer = conn.makefile("w", encoding="utf-8")
                reader.readline()
                writer.write(json.dumps({"type": "refuse"}) + "\n")
                writer.flush()
                conn.close()
            finally:
                server.close()
                stop.set()

        thread = threading.Thread(target=bad_server)
        thread.start()
        while not port_holder:
            pass
        run(f"tcp:127.0.0.1:{port_holder[0]}")
        stop.wait(timeout=10)
        thread.join(timeout=10)
