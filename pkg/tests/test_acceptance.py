"""End-to-end acceptance gate.

Fast criteria run in seconds; the training-based ones (reward growth,
learning-shape contrast, transfer ordering, retuning, torque penalty) are
marked `slow` and share one set of trained policies per architecture.
Deselect with `-m "not slow"` for a quick pass.
"""

import numpy as np
import pytest

from walklab import learning
from walklab.env import WalkingEnv, observe, run_expert_episode
from walklab.expert import GainSet, expert_action, inverse_dynamics
from walklab.learning import (EnvSpec, PpoConfig, RewardConfig,
                              collect_expert_dataset, compute_gae, reward,
                              train_loop)
from walklab.nets import MlpParams, mlp_forward, mlp_gradient
from walklab.policy import (GaussianMlpPolicy, PolicyKind, ValueNet,
                            logprob_batch, policy_mean_action_vec,
                            scaled_to_action)
from walklab.sim import (LegState, MotorCommand, RobotState, SimParams,
                         Stance, flat_terrain)
from walklab.sim import step as sim_step
from walklab.transfer import (PerturbationSpec, evaluate_policy, retune_gain,
                              surrogate_env_spec, transfer_experiment)

PARAMS = SimParams()
GAINS = GainSet()
RC = RewardConfig()
ROUGH = EnvSpec()                       # +/-10 cm random terrain
FLAT = EnvSpec(terrain_max_dev=0.0)

N_SEEDS = 5
ITERATIONS = 150

# terrain amplitude is part of each kind's training recipe: the structured
# policy gains most from harder ground (more fall events per batch), while
# the pure network destabilizes there and needs a gentler setting
RECIPES = {
    PolicyKind.PURE_NN: dict(learning_rate=1e-3, value_learning_rate=1e-2,
                             max_grad_norm=2.0),
    PolicyKind.HEURISTIC_NN: dict(learning_rate=1e-2, value_learning_rate=1e-2,
                                  max_grad_norm=10.0),
}
TRAIN_SPECS = {
    PolicyKind.PURE_NN: ROUGH,
    PolicyKind.HEURISTIC_NN: EnvSpec(terrain_max_dev=0.15),
}
# the pure network has no gain structure to absorb the demonstrations, so
# cloning it fits log_std too (full MLE); the structured policy's residual
# targets are constants and fit fine with log_std frozen
FIT_LOG_STD = {PolicyKind.PURE_NN: True, PolicyKind.HEURISTIC_NN: False}


def ppo_config(kind, **overrides):
    kw = dict(samples_per_iter=8192, minibatch=4096, epochs=10,
              gamma=0.999, lam=0.95, anneal_lr=True, **RECIPES[kind])
    kw.update(overrides)
    return PpoConfig(**kw)


@pytest.fixture(scope="session")
def expert_data():
    return collect_expert_dataset(FLAT, 50000, 0, RC)


def clone_policy(kind, seed, data, gains=GAINS):
    """Two-pass behavior cloning from shared expert demonstrations."""
    obs, acts, rews, dones = data
    rng = np.random.default_rng(seed)
    pol = GaussianMlpPolicy.create(kind, rng, gains=gains)
    tgt = learning.expert_targets_for_kind(pol, acts, gains)
    fit = FIT_LOG_STD[kind]
    pol = learning.behavior_clone(obs, tgt, pol, lr=1e-2, epochs=20, rng=rng,
                                  fit_log_std=fit)
    pol = learning.behavior_clone(obs, tgt, pol, lr=1e-3, epochs=10, rng=rng,
                                  fit_log_std=fit)
    pol.log_std[:] = -1.0
    val = learning.value_pretrain(obs, rews, dones, ValueNet.create(rng),
                                  gamma=0.999, lr=1e-3, epochs=5, rng=rng)
    return pol, val


def bc_baseline(spec, pol, val, seed, n_batches=5):
    """Mean episode reward of the BC policy under the training-time
    stochastic rollout protocol, before any PPO update."""
    rng = np.random.default_rng(seed + 1000)
    returns = []
    for _ in range(n_batches):
        batch = learning.collect_rollouts(spec, pol, val, RC, 8192, rng)
        returns.extend(batch.episode_returns().tolist())
    return float(np.mean(returns))


def train_one(kind, seed, data):
    spec = TRAIN_SPECS[kind]
    pol, val = clone_policy(kind, seed, data)
    baseline = bc_baseline(spec, pol, val, seed)
    pol, val, curve = train_loop(spec, pol, val, RC, ppo_config(kind),
                                 ITERATIONS, seed)
    rewards = np.array([row.mean_reward for row in curve])
    return {"baseline": baseline, "rewards": rewards, "policy": pol}


@pytest.fixture(scope="session")
def training_runs(expert_data):
    return {kind: [train_one(kind, seed, expert_data)
                   for seed in range(N_SEEDS)]
            for kind in PolicyKind}


def smooth(x, w=5):
    return np.convolve(x, np.ones(w) / w, mode="valid")


def reaches_early(rewards):
    """True if the (smoothed) curve hits 90% of its final level within the
    first 20% of iterations."""
    final = rewards[-max(1, len(rewards) // 10):].mean()
    head = smooth(rewards)[:max(1, len(rewards) // 5)]
    return bool(np.any(head >= 0.9 * final))


@pytest.mark.acceptance
class TestA1ExpertWalksFlat:
    def test_full_episode_no_fall(self):
        env = WalkingEnv(PARAMS, GAINS, flat_terrain())
        survived, state = run_expert_episode(env, max_time=10.0, seed=0)
        assert survived
        assert state.t == pytest.approx(10.0, abs=2 * PARAMS.dt)


@pytest.mark.acceptance
class TestA2ExpertFragileOnRoughGround:
    def test_success_rate_below_half(self):
        successes = 0
        for seed in range(20):
            env = ROUGH.make_env(terrain_seed=seed)
            survived, _ = run_expert_episode(env, max_time=10.0, seed=seed)
            successes += survived
        assert successes / 20 < 0.5


@pytest.mark.acceptance
class TestA3BehaviorCloning:
    def test_cloned_pure_nn_walks_flat_but_not_rough(self, expert_data):
        pol, _ = clone_policy(PolicyKind.PURE_NN, 0, expert_data)
        flat = evaluate_policy(FLAT, pol, 5, seed=0, reward_cfg=RC)
        rough = evaluate_policy(ROUGH, pol, 5, seed=0, reward_cfg=RC)
        assert flat.success_rate == 1.0
        assert rough.success_rate < flat.success_rate


@pytest.mark.acceptance
@pytest.mark.slow
class TestA4TrainingImprovesReward:
    @pytest.mark.parametrize("kind", list(PolicyKind), ids=lambda k: k.value)
    def test_final_reward_exceeds_bc_baseline(self, training_runs, kind):
        runs = training_runs[kind]
        final = np.mean([r["rewards"][-ITERATIONS // 10:].mean()
                         for r in runs])
        baseline = np.mean([r["baseline"] for r in runs])
        assert final >= 1.2 * baseline


@pytest.mark.acceptance
@pytest.mark.slow
class TestA5LearningShapeContrast:
    def test_heuristic_peaks_early_pure_does_not(self, training_runs):
        early = {kind: sum(reaches_early(r["rewards"])
                           for r in training_runs[kind])
                 for kind in PolicyKind}
        assert early[PolicyKind.HEURISTIC_NN] >= 3
        assert early[PolicyKind.PURE_NN] <= 2


@pytest.mark.acceptance
@pytest.mark.slow
class TestA6TransferOrdering:
    def test_heuristic_transfers_better(self, training_runs):
        policies = [(f"{kind.value}_{i}", r["policy"])
                    for kind in PolicyKind
                    for i, r in enumerate(training_runs[kind])]
        report = transfer_experiment(policies, FLAT, PerturbationSpec(),
                                     10, seed=0, reward_cfg=RC)
        heur = report.aggregate_rate(PolicyKind.HEURISTIC_NN, "surrogate")
        pure = report.aggregate_rate(PolicyKind.PURE_NN, "surrogate")
        assert heur > pure


@pytest.mark.acceptance
class TestA7RetuningHelps:
    def test_raising_k_converts_overspeed_failure_to_success(
            self, expert_data):
        # a policy tuned with a weak foot-placement speed gain walks fine
        # on the nominal model but runs away forward on the surrogate
        weak = clone_policy(PolicyKind.HEURISTIC_NN, 0, expert_data,
                            gains=GainSet(k=0.02))[0]
        spec = surrogate_env_spec(FLAT, PerturbationSpec())
        nominal = evaluate_policy(FLAT, weak, 5, seed=0, reward_cfg=RC)
        assert nominal.success_rate == 1.0
        before = evaluate_policy(spec, weak, 5, seed=0, reward_cfg=RC)
        assert before.success_rate == 0.0

        # the failures are genuine overspeed, not collapse: the robot covers
        # ground at more than twice the target speed before going down
        env = spec.make_env()
        state = env.reset(seed=0)
        x0 = state.x
        for i in range(10000):
            vec = policy_mean_action_vec(weak, observe(state))
            state, fell = env.step(scaled_to_action(weak, vec, state))
            if fell:
                break
        assert fell
        assert (state.x - x0) / state.t > 2 * GAINS.v_tgt

        retuned = retune_gain(weak, "k", 0.2)
        after = evaluate_policy(spec, retuned, 5, seed=0, reward_cfg=RC)
        assert after.success_rate == 1.0
        assert all(np.array_equal(a, b) for a, b in
                   zip(retuned.mean_net.weights, weak.mean_net.weights))


@pytest.mark.acceptance
@pytest.mark.slow
class TestA8TorquePenaltyVariant:
    def test_penalty_lowers_axial_force_without_hurting_transfer(
            self, training_runs, expert_data):
        plain = training_runs[PolicyKind.HEURISTIC_NN][0]
        rc_pen = RewardConfig(torque_penalty_C4=1e-6)
        pol, val = clone_policy(PolicyKind.HEURISTIC_NN, 0, expert_data)
        pol, val, _ = train_loop(TRAIN_SPECS[PolicyKind.HEURISTIC_NN], pol,
                                 val, rc_pen,
                                 ppo_config(PolicyKind.HEURISTIC_NN),
                                 ITERATIONS, 0)

        def mean_axial(policy):
            env = WalkingEnv(PARAMS, policy.gains, flat_terrain())
            state = env.reset(seed=0)
            total, n = 0.0, 0
            for _ in range(10000):
                vec = policy_mean_action_vec(policy, observe(state))
                state, fell = env.step(scaled_to_action(policy, vec, state))
                if fell:
                    break
                if state.stance_leg.value != "flight":
                    total += abs(state.stance().axial_force)
                    n += 1
            return total / n

        assert mean_axial(pol) < mean_axial(plain["policy"])
        spec = surrogate_env_spec(FLAT, PerturbationSpec())
        pen_rate = evaluate_policy(spec, pol, 10, seed=0,
                                   reward_cfg=RC).success_rate
        plain_rate = evaluate_policy(spec, plain["policy"], 10, seed=0,
                                     reward_cfg=RC).success_rate
        assert pen_rate >= plain_rate


@pytest.mark.acceptance
class TestA9NumericalSuite:
    def test_mlp_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        net = MlpParams.init((4, 8, 3), rng)
        x = rng.normal(size=(5, 4))
        up = rng.normal(size=(5, 3))
        grads, _ = mlp_gradient(net, x, up)
        eps = 1e-6
        for li in range(2):
            for idx in [(0, 0), (1, 2)]:
                w0 = net.weights[li][idx]
                net.weights[li][idx] = w0 + eps
                fp = float((mlp_forward(net, x) * up).sum())
                net.weights[li][idx] = w0 - eps
                fm = float((mlp_forward(net, x) * up).sum())
                net.weights[li][idx] = w0
                fd = (fp - fm) / (2 * eps)
                assert grads.weights[li][idx] == pytest.approx(
                    fd, rel=1e-5, abs=1e-7)

    def test_ppo_surrogate_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        pol = GaussianMlpPolicy.create(PolicyKind.PURE_NN, rng, hidden=(8,))
        obs = rng.normal(size=(12, 6))
        pre = rng.normal(size=(12, 3))
        adv = rng.normal(size=12)
        # old logprobs chosen so some samples sit inside the clip band and
        # some outside; clipped samples must contribute zero gradient
        old_lp = logprob_batch(pol, obs, pre) \
            + rng.uniform(-0.4, 0.4, size=12)
        g_pol, g_logstd, _, _ = learning.ppo_policy_gradient(
            pol, obs, pre, old_lp, adv, clip_eps=0.2)

        def surrogate():
            lp = logprob_batch(pol, obs, pre)
            rho = np.exp(lp - old_lp)
            clipped = np.clip(rho, 0.8, 1.2)
            return float(np.minimum(rho * adv, clipped * adv).mean())

        eps = 1e-6
        for li in range(2):
            for idx in [(0, 0), (1, 2)]:
                w0 = pol.mean_net.weights[li][idx]
                pol.mean_net.weights[li][idx] = w0 + eps
                fp = surrogate()
                pol.mean_net.weights[li][idx] = w0 - eps
                fm = surrogate()
                pol.mean_net.weights[li][idx] = w0
                fd = (fp - fm) / (2 * eps)
                assert g_pol.weights[li][idx] == pytest.approx(
                    fd, rel=1e-5, abs=1e-8)
        for j in range(3):
            s0 = pol.log_std[j]
            pol.log_std[j] = s0 + eps
            fp = surrogate()
            pol.log_std[j] = s0 - eps
            fm = surrogate()
            pol.log_std[j] = s0
            assert g_logstd[j] == pytest.approx((fp - fm) / (2 * eps),
                                                rel=1e-5, abs=1e-8)

    def test_bc_and_value_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        pol = GaussianMlpPolicy.create(PolicyKind.PURE_NN, rng, hidden=(8,))
        obs = rng.normal(size=(10, 6))
        tgt = rng.normal(size=(10, 3))
        g, _ = learning.bc_logprob_gradient(pol, obs, tgt)

        def loglike():
            return float(logprob_batch(pol, obs, tgt).mean())

        eps = 1e-6
        for idx in [(0, 0), (2, 4)]:
            w0 = pol.mean_net.weights[0][idx]
            pol.mean_net.weights[0][idx] = w0 + eps
            fp = loglike()
            pol.mean_net.weights[0][idx] = w0 - eps
            fm = loglike()
            pol.mean_net.weights[0][idx] = w0
            assert g.weights[0][idx] == pytest.approx(
                (fp - fm) / (2 * eps), rel=1e-5, abs=1e-8)

        val = ValueNet.create(rng, hidden=(8,))
        rewards = rng.normal(size=10)
        dones = np.zeros(10, dtype=bool)
        dones[-1] = True
        idx_all = np.arange(10)
        gv, loss0 = learning.td_loss_gradient(val, obs, rewards, dones,
                                              idx_all, gamma=0.99)

        def td_loss():
            return learning.td_loss_gradient(val, obs, rewards, dones,
                                             idx_all, gamma=0.99)[1]

        for idx in [(1, 3), (5, 0)]:
            w0 = val.net.weights[0][idx]
            val.net.weights[0][idx] = w0 + eps
            fp = td_loss()
            val.net.weights[0][idx] = w0 - eps
            fm = td_loss()
            val.net.weights[0][idx] = w0
            assert gv.weights[0][idx] == pytest.approx(
                (fp - fm) / (2 * eps), rel=1e-5, abs=1e-8)

    def test_gae_matches_brute_force(self):
        rng = np.random.default_rng(1)
        n = 40
        batch = learning.RolloutBatch(
            obs=rng.normal(size=(n, 6)),
            pre=rng.normal(size=(n, 3)),
            logprob=rng.normal(size=n),
            reward=rng.normal(size=n),
            value=rng.normal(size=n),
            done=np.zeros(n, dtype=bool),
            fell=np.zeros(n, dtype=bool),
            episodes=[(0, 25), (25, n)],
            bootstrap=np.array([0.3, -0.2]),
        )
        batch.done[24] = batch.done[n - 1] = True
        gamma, lam = 0.97, 0.9
        compute_gae(batch, gamma, lam)
        raw = np.zeros(n)
        for ep, (s, e) in enumerate(batch.episodes):
            for t in range(s, e):
                acc = 0.0
                for j in range(t, e):
                    v_next = batch.bootstrap[ep] if j == e - 1 \
                        else batch.value[j + 1]
                    delta = (batch.reward[j] + gamma * v_next
                             - batch.value[j])
                    acc += (gamma * lam) ** (j - t) * delta
                raw[t] = acc
        expect = (raw - raw.mean()) / (raw.std() + 1e-8)
        assert np.max(np.abs(batch.advantages - expect)) <= 1e-10

    def test_ballistic_flight_matches_closed_form(self):
        leg = LegState(angle=0.1, length=0.7, motor_length=0.7,
                       foot_x=0.07, foot_z=1.3)
        other = LegState(angle=-0.1, length=0.7, motor_length=0.7,
                         foot_x=-0.07, foot_z=1.3, swing_time=0.1)
        state = RobotState(x=0.0, z=2.0, dx=0.7, dz=0.5, pitch=0.0,
                           pitch_rate=0.0, left=leg, right=other,
                           stance_leg=Stance.FLIGHT)
        terrain = flat_terrain(-10.0)
        z0, dz0 = state.z, state.dz
        g = PARAMS.gravity
        n = 500
        for _ in range(n):
            state = sim_step(state, MotorCommand(), PARAMS, terrain)
        t = n * PARAMS.dt
        z_exact = z0 + dz0 * t - 0.5 * g * t * (t + PARAMS.dt)
        assert state.z == pytest.approx(z_exact, abs=1e-6)

    def test_inverse_dynamics_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            angle = rng.uniform(-0.4, 0.4)
            length = rng.uniform(0.6, 0.95)
            fz = rng.uniform(120.0, 190.0)
            fx = rng.uniform(-0.4, 0.4) * fz
            ml, tau = inverse_dynamics(fx, fz, angle, length, 0.0, PARAMS)
            f_ax = PARAMS.spring_k * (ml - length)
            fx_back = (-f_ax * np.sin(angle) + tau / length * np.cos(angle))
            fz_back = (f_ax * np.cos(angle) + tau / length * np.sin(angle))
            assert fx_back == pytest.approx(fx, abs=1e-9)
            assert fz_back == pytest.approx(fz, abs=1e-9)

    def test_reward_unit_cases(self):
        assert reward(0.4, 0.0, False, RC) == 1.0
        assert reward(0.9, 1.0, False, RC) == pytest.approx(0.45)
        assert reward(0.4, 0.0, True, RC) == -100.0

    def test_zero_network_heuristic_reproduces_expert_exactly(self):
        pol = GaussianMlpPolicy.create(PolicyKind.HEURISTIC_NN,
                                       np.random.default_rng(0))
        for w in pol.mean_net.weights:
            w[...] = 0.0
        for b in pol.mean_net.biases:
            b[...] = 0.0
        env_a = WalkingEnv(PARAMS, GAINS, flat_terrain())
        env_b = WalkingEnv(PARAMS, GAINS, flat_terrain())
        sa = env_a.reset(seed=3)
        sb = env_b.reset(seed=3)
        for _ in range(3000):
            sa, _ = env_a.step(expert_action(sa, GAINS))
            vec = policy_mean_action_vec(pol, observe(sb))
            sb, _ = env_b.step(scaled_to_action(pol, vec, sb))
            assert (sa.x, sa.z, sa.pitch) == (sb.x, sb.z, sb.pitch)

    def test_training_run_is_bit_exact(self, expert_data):
        def one_run():
            pol, val = clone_policy(PolicyKind.HEURISTIC_NN, 7, expert_data)
            cfg = ppo_config(PolicyKind.HEURISTIC_NN, samples_per_iter=600,
                             minibatch=256, epochs=2, episode_len_max_s=1.0)
            return train_loop(ROUGH, pol, val, RC, cfg, 10, 7)

        pa, va, ca = one_run()
        pb, vb, cb = one_run()
        assert all(np.array_equal(a, b) for a, b in
                   zip(pa.mean_net.weights, pb.mean_net.weights))
        assert all(np.array_equal(a, b) for a, b in
                   zip(va.net.weights, vb.net.weights))
        assert np.array_equal(pa.log_std, pb.log_std)
        assert [r.mean_reward for r in ca] == [r.mean_reward for r in cb]
