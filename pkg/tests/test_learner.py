import math
from dataclasses import replace

import numpy as np
import pytest

from minmax_penalty import experiments
from minmax_penalty.envs import A1, A2, S0, DEFAULT_LAYOUT, GridSpec, build_chain_walk, build_gridworld
from minmax_penalty.learner import (
    CAP,
    SAFE,
    UNSAFE,
    LearnerConfig,
    MinmaxEstimate,
    _convergence,
    behaviour_failure_rate,
    converged_failure_rate,
    q_learning_step,
    run_fixed_penalty,
    run_training,
    update_estimate,
)

SHORT = LearnerConfig(episodes=300, seed=5)


class TestUpdateEstimate:
    def test_worked_sequence(self):
        est = update_estimate(MinmaxEstimate(), -0.1, 0.0)
        assert est.penalty == pytest.approx(-0.1)
        est = update_estimate(est, 1.0, 0.0)
        assert (est.r_max_obs, est.v_max) == (1.0, 1.0)
        assert est.penalty == pytest.approx(-1.1)
        est = update_estimate(est, -0.1, -3.0)
        assert (est.v_min, est.v_max) == (-3.0, 1.0)
        assert est.penalty == pytest.approx(-4.0)

    def test_zero_start(self):
        assert update_estimate(MinmaxEstimate(), 0.0, 0.0) == MinmaxEstimate()

    @pytest.mark.parametrize("r, v", [(math.nan, 0.0), (0.0, math.inf), (-math.inf, 0.0)])
    def test_non_finite(self, r, v):
        with pytest.raises(ValueError, match="non-finite"):
            update_estimate(MinmaxEstimate(), r, v)

    def test_field_invariants(self):
        rng = np.random.default_rng(0)
        est = MinmaxEstimate()
        for r, v in rng.uniform(-5, 5, size=(200, 2)):
            prev = est
            est = update_estimate(est, r, v)
            assert est.r_min_obs <= est.r_max_obs
            assert est.v_min <= est.r_min_obs and est.v_max >= est.r_max_obs
            assert est.penalty == min(est.r_min_obs, est.v_min - est.v_max)
            assert est.penalty <= prev.penalty


class TestQStep:
    def test_single(self):
        q = np.zeros((3, 2))
        q_learning_step(q, 0, 1, 2, 1.0, 0.1, terminal=True)
        assert q[0, 1] == pytest.approx(0.1)

    def test_bootstrap(self):
        q = np.zeros((3, 2))
        q[1] = [0.0, 2.0]
        q_learning_step(q, 0, 0, 1, -1.0, 0.5, terminal=False)
        assert q[0, 0] == pytest.approx(0.5)

    def test_geometric_fixed_point(self):
        q = np.zeros((2, 1))
        for n in range(1, 60):
            q_learning_step(q, 0, 0, 1, 1.0, 0.1, terminal=True)
            assert q[0, 0] == pytest.approx(1 - 0.9**n)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"epsilon": 0.0}, {"alpha": 1.5}, {"episodes": 0}, {"step_cap": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            LearnerConfig(**kw)

    def test_from_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"epsilon": 0.2, "episodes": 50}')
        assert LearnerConfig.from_file(path) == LearnerConfig(epsilon=0.2, episodes=50)
        path.write_text('{"gamma": 0.9}')
        with pytest.raises(ValueError, match="unknown config keys"):
            LearnerConfig.from_file(path)


class TestConvergence:
    def test_stable_tail(self):
        hist = [(0,)] * 3 + [(1,)] * 10
        assert _convergence(hist, 5) == 3

    def test_too_short(self):
        assert _convergence([(0,)] * 3 + [(1,)] * 4, 5) is None

    def test_unconverged_steps_are_total(self):
        res = run_training(build_chain_walk(0.25), LearnerConfig(episodes=20, convergence_window=500))
        assert res.convergence_episode is None
        assert res.steps_to_convergence == sum(log.steps for log in res.logs)


@pytest.fixture(scope="module", params=[0.0, 0.1, 0.25, 0.4])
def chain_run(request):
    m = build_chain_walk(request.param)
    return m, run_training(m, replace(SHORT, episodes=500), trace=True)


class TestTrainingInvariants:
    def test_fold_matches_running_estimate(self, chain_run):
        _, res = chain_run
        est = MinmaxEstimate()
        for step in res.trace:
            est = update_estimate(est, step.reward, step.value)
            assert est == step.estimate
        assert est == res.estimate

    def test_monotone_penalty(self, chain_run):
        _, res = chain_run
        pen = [t.estimate.penalty for t in res.trace]
        assert all(b <= a for a, b in zip(pen, pen[1:]))

    def test_unsafe_update_uses_penalty(self, chain_run):
        m, res = chain_run
        hits = [t for t in res.trace if t.next_state in m.unsafe_goals]
        assert hits
        assert all(t.update_reward == t.estimate.penalty for t in hits)
        others = [t for t in res.trace if t.next_state not in m.unsafe_goals]
        assert all(t.update_reward == t.reward for t in others)

    def test_nonpositive_rewards_pin_v_max(self, chain_run):
        _, res = chain_run
        for t in res.trace:
            assert t.estimate.v_max == 0.0
            assert t.estimate.penalty == t.estimate.v_min

    def test_logs_consistent(self, chain_run):
        m, res = chain_run
        assert len(res.logs) == 500
        by_episode = np.split(np.array([t.next_state for t in res.trace]), np.cumsum([lg.steps for lg in res.logs])[:-1])
        for lg, states in zip(res.logs, by_episode):
            assert lg.steps == len(states) <= SHORT.step_cap
            final = int(states[-1])
            expect = UNSAFE if final in m.unsafe_goals else SAFE if final in m.goals else CAP
            assert lg.terminal == expect


class TestDeterminism:
    def test_same_seed_same_logs(self):
        m = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=0.25)).mdp
        a, b = run_training(m, SHORT), run_training(m, SHORT)
        assert a.logs == b.logs
        assert a.q.tobytes() == b.q.tobytes()

    def test_different_seed_differs(self):
        m = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=0.25)).mdp
        assert run_training(m, SHORT).logs != run_training(m, replace(SHORT, seed=6)).logs


class TestChainWalkBehaviour:
    def test_frozen_heavy_penalty_goes_safe(self):
        m = build_chain_walk(0.0)
        res = run_fixed_penalty(m, -3.0, LearnerConfig(episodes=2000))
        assert res.greedy[S0] == A1

    def test_adaptive_stalls_at_p_zero(self):
        # V(s0) >= q(s0, a2) >= -1 and rewards are -1, so the estimate cannot pass -1
        res = run_training(build_chain_walk(0.0), LearnerConfig(episodes=2000))
        assert res.final_penalty == pytest.approx(-1.0)
        assert res.greedy[S0] == A2

    @pytest.mark.parametrize("p", [0.1, 0.25])
    def test_adaptive_goes_safe_when_stochastic(self, p):
        res = run_training(build_chain_walk(p), LearnerConfig(episodes=5000))
        assert res.final_penalty < -2.0
        assert res.greedy[S0] == A1

    def test_cap_counts_as_failure(self):
        m = build_chain_walk(1.0)  # s2 never exits
        res = run_fixed_penalty(m, -3.0, LearnerConfig(episodes=30, step_cap=20))
        assert any(lg.terminal == CAP for lg in res.logs)
        assert all(lg.steps <= 20 for lg in res.logs)
        assert behaviour_failure_rate(res.logs) == 1.0


class TestMetrics:
    def test_converged_failure_rate_bounds(self):
        world = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=0.25))
        res = run_training(world.mdp, replace(SHORT, episodes=1000))
        rate = converged_failure_rate(world.mdp, res)
        assert 0.0 <= rate <= 1.0

    def test_behaviour_failure_rate(self):
        res = run_fixed_penalty(build_chain_walk(0.0), 0.0, LearnerConfig(episodes=200))
        tail = res.logs[-100:]
        assert behaviour_failure_rate(res.logs, 100) == sum(lg.terminal != SAFE for lg in tail) / 100


@pytest.fixture(scope="module")
def sweep():
    """70 seeds on the default grid at sp = 0.25: a fixed -5 arm plus the adaptive arm."""
    return experiments.grid_sweep("penalty", [-5.0], seeds=70, slip=0.25, workers=experiments.worker_count())


@pytest.mark.slow
class TestFixedVersusAdaptive:

    def test_large_penalty_converges_slower(self, sweep):
        rows = {r.setting: r for r in sweep.rows}
        assert rows[-5.0].steps_to_convergence > rows[experiments.ADAPTIVE].steps_to_convergence

    def test_rerun_at_learned_penalty(self, sweep):
        world = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=0.25))
        adaptive = [m for m in sweep.raw if m.setting == experiments.ADAPTIVE]
        fixed = [
            converged_failure_rate(world.mdp, run_fixed_penalty(world.mdp, m.final_penalty, LearnerConfig(seed=m.seed)))
            for m in adaptive
        ]
        learned = np.mean([m.failure_rate for m in adaptive])
        assert abs(np.mean(fixed) - learned) <= 0.02
