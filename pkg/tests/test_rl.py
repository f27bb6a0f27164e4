import json

import numpy as np
import pytest

from irsnoma_lab.channel import ChannelRealization
from irsnoma_lab.noma import NetworkScenario
from irsnoma_lab.oracle import SearchSpace, brute_force_optimum
from irsnoma_lab.rl import (
    NomaPhaseEnv,
    QApproximator,
    QTable,
    ReplayMemory,
    Transition,
    dqn_train_step,
    q_forward,
    tabular_q_update,
    td_target,
    train_agent,
    train_tabular_agent,
)


def tiny_scenario(seed=5, n_clusters=1, users_per_cluster=2, k_elements=2, power=2.0):
    rng = np.random.default_rng(seed)
    n_users = n_clusters * users_per_cluster
    g = rng.standard_normal((k_elements, n_clusters)) + 1j * rng.standard_normal(
        (k_elements, n_clusters)
    )
    h = rng.standard_normal((n_users, k_elements)) + 1j * rng.standard_normal(
        (n_users, k_elements)
    )
    channels = ChannelRealization(g_matrix=g, user_channels=h, noise_variance=0.05)
    assignment = tuple(u // users_per_cluster for u in range(n_users))
    return NetworkScenario(channels=channels, assignment=assignment, total_power=power)


class TestTabularUpdate:
    def test_full_overwrite_no_bootstrap(self):
        table = QTable(2)
        tabular_q_update(table, "s", 0, reward=3.5, next_state_key="t", psi=1.0, beta=0.0)
        assert table.values("s")[0] == pytest.approx(3.5)

    def test_zero_learning_rate_is_noop(self):
        table = QTable(2)
        table.values("s")[0] = 1.0
        tabular_q_update(table, "s", 0, 10.0, "t", psi=0.0, beta=0.9)
        assert table.values("s")[0] == 1.0

    def test_two_state_chain_matches_value_iteration(self):
        # Deterministic MDP: action a jumps to state a; reaching state 1
        # pays 1, state 0 pays 0.  Value iteration gives the fixed point.
        beta = 0.9
        q_star = np.zeros((2, 2))
        for _ in range(400):
            v = q_star.max(axis=1)
            for s in range(2):
                for a in range(2):
                    q_star[s, a] = (1.0 if a == 1 else 0.0) + beta * v[a]

        table = QTable(2)
        updates = 0
        for _ in range(200):
            for s in range(2):
                for a in range(2):
                    tabular_q_update(
                        table, s, a, 1.0 if a == 1 else 0.0, a, psi=1.0, beta=beta
                    )
                    updates += 1
        learned = np.array([[table.values(s)[a] for a in range(2)] for s in range(2)])
        assert updates <= 10_000
        assert np.max(np.abs(learned - q_star)) < 1e-6

    def test_random_small_mdp_converges(self):
        # Bellman fixed point on a random deterministic MDP with
        # visit-count learning-rate decay.
        rng = np.random.default_rng(11)
        n_states, n_actions, beta = 8, 3, 0.8
        nxt = rng.integers(0, n_states, size=(n_states, n_actions))
        rew = rng.uniform(0, 1, size=(n_states, n_actions))

        q_star = np.zeros((n_states, n_actions))
        for _ in range(600):
            q_star = rew + beta * q_star.max(axis=1)[nxt]

        table = QTable(n_actions)
        visits = np.zeros((n_states, n_actions))
        for _ in range(40_000):
            s = int(rng.integers(n_states))
            a = int(rng.integers(n_actions))
            visits[s, a] += 1
            tabular_q_update(
                table, s, a, rew[s, a], int(nxt[s, a]),
                psi=1.0 / visits[s, a] ** 0.55, beta=beta,
            )
        learned = np.array(
            [[table.values(s)[a] for a in range(n_actions)] for s in range(n_states)]
        )
        assert np.max(np.abs(learned - q_star)) < 1e-3


class TestQApproximator:
    def test_zero_weights_output_bias(self):
        approx = QApproximator(3, 4, hidden=(5, 5), seed=0)
        for w in approx.weights:
            w[...] = 0.0
        approx.biases[-1][...] = [1.0, -2.0, 0.5, 0.0]
        out = q_forward(approx, np.ones(3))
        assert np.allclose(out, [1.0, -2.0, 0.5, 0.0])

    def test_deterministic_forward(self):
        approx = QApproximator(4, 3, seed=1)
        x = np.random.default_rng(2).standard_normal(4)
        assert np.array_equal(approx.forward(x), approx.forward(x))

    def test_matches_independent_matrix_evaluation(self):
        approx = QApproximator(3, 2, hidden=(4, 4), seed=3)
        x = np.random.default_rng(4).standard_normal(3)
        a = x
        for layer, (w, b) in enumerate(zip(approx.weights, approx.biases)):
            z = w @ a + b
            a = np.maximum(z, 0.0) if layer < 2 else z
        assert np.max(np.abs(approx.forward(x) - a)) < 1e-10

    def test_non_finite_features_rejected(self):
        approx = QApproximator(2, 2, seed=0)
        with pytest.raises(ValueError):
            approx.forward(np.array([np.inf, 0.0]))

    def test_json_roundtrip(self):
        approx = QApproximator(5, 3, hidden=(8, 8), seed=7)
        restored = QApproximator.from_json(approx.to_json())
        x = np.random.default_rng(8).standard_normal(5)
        assert np.allclose(approx.forward(x), restored.forward(x))

    def test_bad_format_rejected(self):
        with pytest.raises(ValueError):
            QApproximator.from_json(json.dumps({"format": "other"}))


class TestTdTarget:
    def test_zero_discount(self):
        approx = QApproximator(2, 2, discount=0.0, seed=0)
        assert td_target(2.5, np.zeros(2), approx) == pytest.approx(2.5)

    def test_terminal_rule(self):
        approx = QApproximator(2, 2, discount=0.9, seed=0)
        assert td_target(1.5, np.ones(2), approx, terminal=True) == pytest.approx(1.5)

    def test_compositional(self):
        approx = QApproximator(3, 4, discount=0.7, seed=5)
        x = np.random.default_rng(6).standard_normal(3)
        expected = 0.3 + 0.7 * float(np.max(approx.target_values(x)))
        assert td_target(0.3, x, approx) == pytest.approx(expected)

    def test_target_stale_between_syncs(self):
        approx = QApproximator(3, 3, sync_period=10**9, seed=9)
        x = np.random.default_rng(10).standard_normal(3)
        before = td_target(1.0, x, approx)
        batch = [
            Transition(np.random.default_rng(i).standard_normal(3), i % 3, 1.0,
                       np.random.default_rng(i + 50).standard_normal(3))
            for i in range(8)
        ]
        for _ in range(5):
            approx.train_step(batch)
        assert td_target(1.0, x, approx) == before


class TestDqnTraining:
    def test_zero_residual_zero_gradients(self):
        approx = QApproximator(3, 3, seed=11)
        rng = np.random.default_rng(12)
        feats = rng.standard_normal((6, 3))
        actions = rng.integers(0, 3, size=6)
        current = approx.forward(feats)[np.arange(6), actions]
        loss, grads_w, grads_b = approx.loss_and_gradients(feats, actions, current)
        assert loss == 0.0
        for g in grads_w + grads_b:
            assert np.max(np.abs(g)) < 1e-12

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(13)
        step = 1e-5
        approx = QApproximator(4, 3, hidden=(8, 8), seed=rng)
        feats = rng.standard_normal((5, 4))
        actions = rng.integers(0, 3, size=5)
        targets = rng.standard_normal(5)
        _, grads_w, grads_b = approx.loss_and_gradients(feats, actions, targets)
        params = list(zip(approx.weights, grads_w)) + list(zip(approx.biases, grads_b))
        for param, grad in params:
            flat = grad.ravel()
            idx_pool = rng.choice(param.size, size=min(25, param.size), replace=False)
            for idx in idx_pool:
                orig = param.flat[idx]
                param.flat[idx] = orig + step
                up, _, _ = approx.loss_and_gradients(feats, actions, targets)
                param.flat[idx] = orig - step
                down, _, _ = approx.loss_and_gradients(feats, actions, targets)
                param.flat[idx] = orig
                fd = (up - down) / (2 * step)
                rel = abs(flat[idx] - fd) / max(abs(flat[idx]), abs(fd), 1e-6)
                assert rel < 1e-4

    def test_supervised_regression_sanity(self):
        # Discount 0 turns the TD target into the stored reward, so the
        # network regresses toward a fixed random target function.
        rng = np.random.default_rng(14)
        approx = QApproximator(
            4, 3, hidden=(16, 16), learning_rate=0.1, discount=0.0, seed=15
        )
        feats = rng.standard_normal((32, 4))
        actions = rng.integers(0, 3, size=32)
        rewards = rng.standard_normal(32)
        batch = [
            Transition(feats[i], int(actions[i]), float(rewards[i]), feats[i])
            for i in range(32)
        ]
        first_loss, _ = approx.train_step(batch)
        for _ in range(199):
            _, last = dqn_train_step(approx, batch)
        assert last <= first_loss / 10.0

    def test_gradient_clipping_flagged(self):
        approx = QApproximator(2, 2, clip_norm=1e-9, seed=16)
        batch = [Transition(np.ones(2), 0, 100.0, np.ones(2))]
        _, clipped = approx.train_step(batch)
        assert clipped


class TestReplayMemory:
    def test_ring_overwrite(self):
        mem = ReplayMemory(capacity=3)
        for i in range(5):
            mem.push(Transition(np.array([float(i)]), 0, 0.0, np.array([0.0])))
        assert len(mem) == 3
        stored = sorted(t.state_features[0] for t in mem._buffer)
        assert stored == [2.0, 3.0, 4.0]

    def test_seeded_sampling(self):
        mem = ReplayMemory(10)
        for i in range(10):
            mem.push(Transition(np.array([float(i)]), 0, 0.0, np.array([0.0])))
        a = mem.sample(np.random.default_rng(1), 4)
        b = mem.sample(np.random.default_rng(1), 4)
        assert [t.state_features[0] for t in a] == [t.state_features[0] for t in b]


class TestEnvironment:
    def test_action_count_formula(self):
        scenario = tiny_scenario(n_clusters=2, users_per_cluster=2, k_elements=4)
        env = NomaPhaseEnv(scenario, resolution_bits=2, alpha_step=0.1)
        k, sizes = 4, (2, 2)
        expected = 2 * k + 2 * sum(s * (s - 1) // 2 for s in sizes) + 1
        assert env.n_actions == expected

    def test_noop_keeps_configuration(self):
        env = NomaPhaseEnv(tiny_scenario(), resolution_bits=2, alpha_step=0.5)
        state, result = env.initial_state()
        next_state, reward, next_result = env.step(state, 0)
        assert next_state.phase_indices == state.phase_indices
        assert next_state.alpha_units == state.alpha_units
        assert reward == pytest.approx(env.reward(result))

    def test_phase_increment_wraps(self):
        env = NomaPhaseEnv(tiny_scenario(), resolution_bits=2, alpha_step=0.5)
        state, _ = env.initial_state()
        for _ in range(3):
            state, _, _ = env.step(state, 1)  # increment element 0
        assert state.phase_indices[0] == 3
        state, _, _ = env.step(state, 1)
        assert state.phase_indices[0] == 0

    def test_alpha_shift_clamped_at_zero(self):
        env = NomaPhaseEnv(tiny_scenario(), resolution_bits=1, alpha_step=0.5)
        state, _ = env.initial_state()
        shift_id = 1 + 2 * env.k_elements  # first alpha-shift action (0 -> 1)
        assert env.describe_action(shift_id).kind == "alpha-shift"
        for _ in range(4):
            state, _, _ = env.step(state, shift_id)
        assert state.alpha_units[0][0] == 0
        assert state.alpha_units[0][1] == env.units_total

    def test_action_space_closure(self):
        env = NomaPhaseEnv(
            tiny_scenario(n_clusters=2, users_per_cluster=2, k_elements=3),
            resolution_bits=2,
            alpha_step=0.25,
        )
        rng = np.random.default_rng(17)
        state, _ = env.random_state(rng)
        for _ in range(100):
            action = int(rng.integers(env.n_actions))
            state, _, _ = env.step(state, action)
            assert all(0 <= n < env.levels for n in state.phase_indices)
            for units, split in zip(state.alpha_units, state.power_splits):
                assert sum(units) == env.units_total
                assert abs(sum(split) - 1.0) < 1e-9

    def test_single_element_sweep_reaches_brute_force_max(self):
        scenario = tiny_scenario(n_clusters=1, users_per_cluster=1, k_elements=1)
        env = NomaPhaseEnv(scenario, resolution_bits=3, alpha_step=0.5)
        state, result = env.initial_state()
        best = env.reward(result)
        for _ in range(env.levels - 1):
            state, reward, _ = env.step(state, 1)
            best = max(best, reward)
        oracle = brute_force_optimum(
            scenario, SearchSpace(1, 3, (1,), alpha_step=0.5)
        )
        assert best == pytest.approx(oracle.best_rate)

    def test_feature_vector_layout(self):
        env = NomaPhaseEnv(tiny_scenario(), resolution_bits=2, alpha_step=0.5)
        state, _ = env.initial_state()
        k = env.k_elements
        assert state.feature_vector.shape == (env.feature_dim,)
        assert np.all(state.feature_vector[:k] == 0.0)  # zero phases
        assert np.max(state.feature_vector[k + 2 :]) == pytest.approx(1.0)

    def test_bad_alpha_step_rejected(self):
        with pytest.raises(ValueError):
            NomaPhaseEnv(tiny_scenario(), resolution_bits=1, alpha_step=0.3)


class TestAgents:
    def test_curve_length_and_monotone_best(self):
        env = NomaPhaseEnv(tiny_scenario(), resolution_bits=2, alpha_step=0.5)
        approx = QApproximator(env.feature_dim, env.n_actions, seed=18)
        result = train_agent(env, approx, episodes=12, steps_per_episode=5, seed=19, warmup=8)
        assert len(result.curve) == 12
        bests = [p.best_reward for p in result.curve]
        assert all(b2 >= b1 for b1, b2 in zip(bests, bests[1:]))
        assert result.found_feasible

    def test_pure_exploration_acts_as_random_search(self):
        env = NomaPhaseEnv(tiny_scenario(), resolution_bits=2, alpha_step=0.5)
        approx = QApproximator(
            env.feature_dim, env.n_actions,
            epsilon_start=1.0, epsilon_decay=1.0, epsilon_min=1.0, seed=20,
        )
        result = train_agent(env, approx, episodes=10, steps_per_episode=5, seed=21)
        bests = [p.best_reward for p in result.curve]
        assert all(b2 >= b1 for b1, b2 in zip(bests, bests[1:]))

    def test_small_instance_near_oracle(self):
        scenario = tiny_scenario(n_clusters=1, users_per_cluster=2, k_elements=2)
        env = NomaPhaseEnv(scenario, resolution_bits=2, alpha_step=0.1)
        approx = QApproximator(env.feature_dim, env.n_actions, seed=22)
        result = train_agent(env, approx, episodes=150, steps_per_episode=10, seed=23)
        oracle = brute_force_optimum(
            scenario, SearchSpace(2, 2, (2,), alpha_step=0.1)
        )
        assert result.best_rate >= 0.9 * oracle.best_rate
        assert result.best_rate <= oracle.best_rate + 1e-12

    def test_tabular_agent_runs(self):
        env = NomaPhaseEnv(tiny_scenario(), resolution_bits=1, alpha_step=0.5)
        result = train_tabular_agent(env, episodes=20, steps_per_episode=5, seed=24)
        assert result.found_feasible
        assert len(result.curve) == 20
