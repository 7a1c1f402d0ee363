import itertools
import math

import numpy as np
import pytest

import quadkiri as qk
from quadkiri.genmodel import GrpoEnv, GrpoGroup, make_flow_path

PHI = math.pi / 3


class TestFlowPath:
    def test_endpoints(self):
        x0 = np.zeros((3, 3))
        x1 = np.ones((3, 3))
        assert np.array_equal(make_flow_path(x0, x1, 0.0).xt, x0)
        assert np.array_equal(make_flow_path(x0, x1, 1.0).xt, x1)
        mid = make_flow_path(x0, x1, 0.25)
        assert np.allclose(mid.xt, 0.25)
        assert np.array_equal(mid.target_velocity, x1 - x0)

    def test_time_domain(self):
        with pytest.raises(ValueError):
            make_flow_path(np.zeros((2, 2)), np.ones((2, 2)), 1.5)


class TestCfmLoss:
    def test_exact_velocity_zero_loss(self):
        x0 = np.random.default_rng(0).normal(size=(4, 4))
        x1 = np.random.default_rng(1).normal(size=(4, 4))
        v = lambda xt, t, cond: x1 - x0
        for t in (0.0, 0.3, 1.0):
            assert qk.cfm_sample_loss(v, x0, x1, t) == 0.0

    def test_zero_velocity_all_ones(self):
        x0 = np.zeros((10, 10))
        x1 = np.ones((10, 10))
        v = lambda xt, t, cond: np.zeros((10, 10))
        assert abs(qk.cfm_sample_loss(v, x0, x1, 0.5) - 100.0) < 1e-12

    def test_residual_norm(self):
        x0 = np.zeros((2, 2))
        x1 = np.ones((2, 2))
        e = np.full((2, 2), 0.25)  # ||e||_F = 0.5
        v = lambda xt, t, cond: (x1 - x0) + e
        assert abs(qk.cfm_sample_loss(v, x0, x1, 0.5) - 0.25) < 1e-12

    def test_nonfinite_output(self):
        v = lambda xt, t, cond: np.full((2, 2), np.nan)
        with pytest.raises(FloatingPointError):
            qk.cfm_sample_loss(v, np.zeros((2, 2)), np.ones((2, 2)), 0.5)


class TestOtCoupling:
    def test_single(self):
        perm = qk.ot_coupling([np.zeros((2, 2))], [np.ones((2, 2))])
        assert perm.tolist() == [0]

    def test_two_swap(self):
        base = [np.full((1, 1), 0.0), np.full((1, 1), 10.0)]
        data = [np.full((1, 1), 9.0), np.full((1, 1), 1.0)]
        perm = qk.ot_coupling(base, data)
        assert perm.tolist() == [1, 0]  # cost 1+1 beats 81+81

    def test_brute_force_b5(self):
        rng = np.random.default_rng(2)
        base = [rng.normal(size=(3, 3)) for _ in range(5)]
        data = [rng.normal(size=(3, 3)) for _ in range(5)]
        perm = qk.ot_coupling(base, data)

        def cost(p):
            return sum(((base[i] - data[p[i]]) ** 2).sum() for i in range(5))

        best = min(itertools.permutations(range(5)), key=cost)
        assert abs(cost(perm) - cost(best)) < 1e-12

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            qk.ot_coupling([np.zeros((2, 2))], [])

    def test_never_worse_than_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            base = [rng.normal(size=(2, 2)) for _ in range(4)]
            data = [rng.normal(size=(2, 2)) for _ in range(4)]
            perm = qk.ot_coupling(base, data)
            coupled = sum(((base[i] - data[perm[i]]) ** 2).sum() for i in range(4))
            ident = sum(((base[i] - data[i]) ** 2).sum() for i in range(4))
            assert coupled <= ident + 1e-12


class TestEuler:
    def test_constant_field_exact(self):
        c = np.full((3, 3), 0.7)
        v = lambda x, t, cond: c
        for steps in (1, 4, 16):
            out = qk.euler_integrate(v, np.zeros((3, 3)), steps=steps)
            assert np.allclose(out, c, atol=1e-15)

    def test_exponential_growth(self):
        v = lambda x, t, cond: x
        x0 = np.ones((2, 2))
        out = qk.euler_integrate(v, x0, steps=8)
        expect = (1 + 1 / 8) ** 8
        assert np.allclose(out, expect)
        assert abs(expect - math.e) / math.e < 0.06

    def test_single_step(self):
        v = lambda x, t, cond: 2.0 * x + t
        x0 = np.full((2, 2), 3.0)
        out = qk.euler_integrate(v, x0, steps=1)
        assert np.allclose(out, x0 + v(x0, 0.0, None))

    def test_error_decreases_with_steps(self):
        v = lambda x, t, cond: np.sin(x) + t
        x0 = np.full((3, 3), 0.4)
        ref = qk.euler_integrate(v, x0, steps=1024)
        errs = [np.abs(qk.euler_integrate(v, x0, steps=s) - ref).max()
                for s in (1, 2, 4, 8, 16)]
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_nonfinite_reports_step(self):
        v = lambda x, t, cond: np.full_like(x, np.inf)
        with pytest.raises(FloatingPointError, match="step 0"):
            qk.euler_integrate(v, np.zeros((2, 2)), steps=4)


class TestAdvantages:
    def test_equal_rewards_zero(self):
        assert np.allclose(qk.grpo_advantages([2.0, 2.0, 2.0, 2.0]), 0.0)

    def test_hand_computed(self):
        adv = qk.grpo_advantages([1.0, 2.0, 3.0, 4.0], epsilon=0.0)
        sd = math.sqrt(1.25)  # population std
        expect = [(r - 2.5) / sd for r in (1.0, 2.0, 3.0, 4.0)]
        assert np.allclose(adv, expect, atol=1e-12)
        assert abs(adv[0] + 1.3416407864998738) < 1e-9

    def test_two_point_pair(self):
        r = 0.8
        eps = 1e-8
        adv = qk.grpo_advantages([0.0, r], epsilon=eps)
        expect = (r / 2) / (r / 2 + eps)
        assert abs(adv[1] - expect) < 1e-12
        assert abs(adv[0] + expect) < 1e-12

    def test_needs_group(self):
        with pytest.raises(ValueError):
            qk.grpo_advantages([1.0])

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=8)
        a = qk.grpo_advantages(r)
        b = qk.grpo_advantages(r + 123.456)
        assert np.allclose(a, b, atol=1e-9)

    def test_scale_invariance_eps_zero(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=8)
        a = qk.grpo_advantages(r, epsilon=0.0)
        b = qk.grpo_advantages(3.7 * r, epsilon=0.0)
        assert np.allclose(a, b, atol=1e-12)


class TestWeights:
    def test_zero_advantages_unit_weights(self):
        assert np.allclose(qk.grpo_weights(np.zeros(4), 0.2), 1.0)

    def test_hand_computed_pair(self):
        w = qk.grpo_weights(np.array([-1.0, 1.0]), temperature=1.0)
        denom = math.e + 1.0 / math.e
        assert np.allclose(w, [2 / (math.e * denom), 2 * math.e / denom], atol=1e-12)

    def test_high_temperature_flattens(self):
        w = qk.grpo_weights(np.array([-2.0, 0.0, 2.0]), temperature=1e3)
        assert np.allclose(w, 1.0, atol=0.01)

    def test_mean_one_and_positive(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            adv = rng.normal(scale=rng.uniform(0.1, 50), size=rng.integers(2, 9))
            w = qk.grpo_weights(adv, temperature=rng.uniform(0.05, 5))
            assert np.all(w > 0)
            assert abs(w.mean() - 1.0) < 1e-12

    def test_overflow_guard(self):
        w = qk.grpo_weights(np.array([0.0, 4000.0]), temperature=0.2)
        assert np.isfinite(w).all() and abs(w.mean() - 1.0) < 1e-12


def manual_group(policy, zs, rewards, temperature=0.2):
    adv = qk.grpo_advantages(rewards)
    w = qk.grpo_weights(adv, temperature)
    fields = [qk.MeanFieldPolicy.z_to_field(z) for z in zs]
    return GrpoGroup(
        candidates=fields, z_samples=np.asarray(zs), rewards=np.asarray(rewards),
        advantages=adv, weights=w, temperature=temperature, epsilon=1e-8,
        sious=[None] * len(rewards), tvs=np.zeros(len(rewards)),
    )


class TestUpdate:
    def test_symmetric_equal_weights_no_move(self):
        policy = qk.MeanFieldPolicy(np.zeros((2, 2)))
        d = np.full((2, 2), 0.1)
        group = manual_group(policy, np.stack([d, -d]), [1.0, 1.0])
        new = qk.grpo_update(policy, group)
        assert np.max(np.abs(new.mean_z - policy.mean_z)) < 1e-12

    def test_dominant_weight_moves_toward_sample(self):
        policy = qk.MeanFieldPolicy(np.zeros((1, 1)), learning_rate=0.5)
        zs = np.array([[[1.0]], [[-1.0]]])
        group = manual_group(policy, zs, [100.0, 0.0], temperature=0.01)
        new = qk.grpo_update(policy, group)
        # winner weight ~2, loser ~0: move = lr * (w/G) * gap = 0.5 * 1 * 1
        assert abs(new.mean_z[0, 0] - 0.5) < 1e-3

    def test_1d_toy_converges_to_reward_peak(self):
        rng = np.random.default_rng(0)
        policy = qk.MeanFieldPolicy(np.array([[-0.6]]), noise_scale=0.15,
                                    learning_rate=0.5)
        peak = 0.3
        reward_of = lambda z: -(z - peak) ** 2
        # grid-search oracle confirms the maximizer
        grid = np.linspace(-1, 1, 2001)
        assert abs(grid[np.argmax(reward_of(grid))] - peak) < 1e-3
        for _ in range(200):
            zs = policy.sample_z(rng, 8)
            rewards = [float(reward_of(z[0, 0])) for z in zs]
            group = manual_group(policy, zs, rewards, temperature=0.2)
            policy = qk.grpo_update(policy, group)
        assert abs(policy.mean_z[0, 0] - peak) < 0.05


class TestRollout:
    def test_counter_and_group_size(self, feasible_masks):
        env = GrpoEnv.create(feasible_masks[0], qk.GridShape(10, 10), PHI)
        policy = qk.MeanFieldPolicy(np.zeros((10, 10)))
        _, trace = qk.run_grpo_training(policy, env, calls=16, group_size=4, seed=0)
        assert [t.call_count for t in trace] == [4, 8, 12, 16]
        assert all(len(t.rewards) == 4 for t in trace)

    def test_all_infeasible_group(self, feasible_masks):
        env = GrpoEnv.create(feasible_masks[0], qk.GridShape(10, 10), PHI)
        broken = qk.MeanFieldPolicy(np.full((10, 10), np.nan))
        group = qk.grpo_rollout(broken, env, group_size=4,
                                rng=np.random.default_rng(0))
        assert np.allclose(group.rewards, -5.0)
        assert np.allclose(group.advantages, 0.0)
        assert np.allclose(group.weights, 1.0)

    def test_feasible_group_order_statistics(self, feasible_masks):
        env = GrpoEnv.create(feasible_masks[1], qk.GridShape(10, 10), PHI)
        policy = qk.MeanFieldPolicy(np.zeros((10, 10)))
        group = qk.grpo_rollout(policy, env, group_size=4,
                                rng=np.random.default_rng(1))
        assert group.rewards.max() >= group.rewards.mean()

    def test_calls_must_divide(self, feasible_masks):
        env = GrpoEnv.create(feasible_masks[0], qk.GridShape(10, 10), PHI)
        policy = qk.MeanFieldPolicy(np.zeros((10, 10)))
        with pytest.raises(ValueError):
            qk.run_grpo_training(policy, env, calls=10, group_size=4)
