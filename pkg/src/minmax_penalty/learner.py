"""Tabular Q-learning with an online Minmax penalty estimate.

The estimator keeps running extremes of the observed rewards and of the
agent's own state-value estimates and uses ``min(R_MIN, V_MIN - V_MAX)`` as
the reward for any transition into an unsafe absorbing state.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .analysis import evaluate_policy
from .mdp import DetPolicy, TabularMdp

SAFE, UNSAFE, CAP = "safe-goal", "unsafe", "step-cap"


@dataclass(frozen=True)
class MinmaxEstimate:
    r_min_obs: float = 0.0
    r_max_obs: float = 0.0
    v_min: float = 0.0
    v_max: float = 0.0
    penalty: float = 0.0


def update_estimate(est: MinmaxEstimate, reward: float, value: float) -> MinmaxEstimate:
    """Fold one observed reward and the value estimate of the state it left."""
    if not (math.isfinite(reward) and math.isfinite(value)):
        raise ValueError(f"non-finite input to estimator: reward={reward}, value={value}")
    r_min = min(est.r_min_obs, reward)
    r_max = max(est.r_max_obs, reward)
    v_min = min(est.v_min, r_min, value)
    v_max = max(est.v_max, r_max, value)
    return MinmaxEstimate(r_min, r_max, v_min, v_max, min(r_min, v_min - v_max))


@dataclass(frozen=True)
class LearnerConfig:
    epsilon: float = 0.1
    alpha: float = 0.1
    episodes: int = 10_000
    step_cap: int = 1_000
    seed: int = 0
    convergence_window: int = 500

    def __post_init__(self):
        for name in ("epsilon", "alpha"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.episodes < 1 or self.step_cap < 1 or self.convergence_window < 1:
            raise ValueError("episodes, step_cap and convergence_window must be positive")


    @classmethod
    def from_file(cls, path) -> "LearnerConfig":
        """Load from a JSON object whose keys are a subset of the fields."""
        import json
        from pathlib import Path

        doc = json.loads(Path(path).read_text())
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)


class EpisodeLog(NamedTuple):
    episode: int
    ret: float
    steps: int
    terminal: str
    penalty: float


class StepTrace(NamedTuple):
    """Per-step record kept when tracing is on (used by the invariant tests)."""

    state: int
    action: int
    next_state: int
    reward: float
    value: float
    update_reward: float
    estimate: MinmaxEstimate | None


def q_learning_step(q: np.ndarray, s: int, a: int, s_next: int, r: float, alpha: float, terminal: bool) -> None:
    """In-place tabular update; the bootstrap term is 0 at absorbing states."""
    target = r + (0.0 if terminal else float(np.max(q[s_next])))
    q[s, a] += alpha * (target - q[s, a])


@dataclass
class TrainingResult:
    q: np.ndarray
    logs: list[EpisodeLog]
    estimate: MinmaxEstimate | None
    greedy: np.ndarray
    convergence_episode: int | None
    steps_to_convergence: int
    greedy_history: list[tuple] = field(repr=False)
    trace: list[StepTrace] | None = field(default=None, repr=False)

    @property
    def final_penalty(self) -> float:
        return self.estimate.penalty if self.estimate is not None else math.nan


def _tables(mdp: TabularMdp):
    """Per (state, action) lists of (cdf, next states, rewards) over the support."""
    P, R = mdp.transition, mdp.reward
    out = []
    for s in range(mdp.num_states):
        row = []
        for a in range(mdp.num_actions):
            nz = np.flatnonzero(P[s, a])
            cdf = np.cumsum(P[s, a, nz]).tolist()
            row.append((cdf, nz.tolist(), R[s, a, nz].tolist()))
        out.append(row)
    return out


def _convergence(history: list[tuple], window: int) -> int | None:
    """First episode after which the greedy policy stays fixed for ``window`` episodes."""
    run_start = len(history) - 1
    for e in range(len(history) - 2, -1, -1):
        if history[e] != history[e + 1]:
            break
        run_start = e
    if len(history) - 1 - run_start >= window:
        return run_start
    return None


def _train(mdp: TabularMdp, cfg: LearnerConfig, fixed_penalty: float | None, trace: bool) -> TrainingResult:
    rng = random.Random(cfg.seed)
    uniform = rng.random
    S, A = mdp.num_states, mdp.num_actions
    tables = _tables(mdp)
    absorbing = [s in mdp.goals for s in range(S)]
    unsafe = [s in mdp.unsafe_goals for s in range(S)]
    internal = mdp.internal_states.tolist()
    q = [[0.0] * A for _ in range(S)]
    eps, alpha, cap = cfg.epsilon, cfg.alpha, cfg.step_cap
    adaptive = fixed_penalty is None

    r_min = r_max = v_min = v_max = penalty = 0.0
    if not adaptive:
        penalty = float(fixed_penalty)

    logs: list[EpisodeLog] = []
    steps_per_episode: list[int] = []
    history: list[tuple] = []
    records: list[StepTrace] | None = [] if trace else None

    for ep in range(cfg.episodes):
        s = mdp.initial_state
        ret = 0.0
        kind = CAP
        steps = 0
        while steps < cap:
            qs = q[s]
            v_s = max(qs)
            if uniform() < eps:
                a = int(uniform() * A)
            else:
                a = qs.index(v_s)
            cdf, nxts, rews = tables[s][a]
            x = uniform()
            k, last = 0, len(cdf) - 1
            while k < last and x >= cdf[k]:
                k += 1
            nxt, r = nxts[k], rews[k]
            steps += 1
            ret += r

            if adaptive:
                if r < r_min:
                    r_min = r
                if r > r_max:
                    r_max = r
                v_min = min(v_min, r_min, v_s)
                v_max = max(v_max, r_max, v_s)
                penalty = min(r_min, v_min - v_max)

            r_upd = penalty if unsafe[nxt] else r
            target = r_upd if absorbing[nxt] else r_upd + max(q[nxt])
            qs[a] += alpha * (target - qs[a])

            if records is not None:
                est = MinmaxEstimate(r_min, r_max, v_min, v_max, penalty) if adaptive else None
                records.append(StepTrace(s, a, nxt, r, v_s, r_upd, est))

            if absorbing[nxt]:
                kind = UNSAFE if unsafe[nxt] else SAFE
                break
            s = nxt

        logs.append(EpisodeLog(ep, ret, steps, kind, penalty))
        steps_per_episode.append(steps)
        history.append(tuple(q[i].index(max(q[i])) for i in internal))

    conv = _convergence(history, cfg.convergence_window)
    cum = np.cumsum(steps_per_episode)
    steps_to_conv = int(cum[conv]) if conv is not None else int(cum[-1])
    greedy = np.zeros(S, dtype=int)
    greedy[internal] = history[-1]
    estimate = MinmaxEstimate(r_min, r_max, v_min, v_max, penalty) if adaptive else None
    return TrainingResult(np.array(q), logs, estimate, greedy, conv, steps_to_conv, history, records)


def run_training(mdp: TabularMdp, cfg: LearnerConfig = LearnerConfig(), trace: bool = False) -> TrainingResult:
    """Q-learning where unsafe entries are paid the running Minmax penalty estimate."""
    return _train(mdp, cfg, None, trace)


def run_fixed_penalty(
    mdp: TabularMdp, penalty: float, cfg: LearnerConfig = LearnerConfig(), trace: bool = False
) -> TrainingResult:
    """Same learner with a constant hand-set unsafe reward."""
    return _train(mdp, cfg, penalty, trace)


def behaviour_failure_rate(logs: list[EpisodeLog], window: int = 1000) -> float:
    """Fraction of the last ``window`` training episodes ending unsafe or at the step cap.

    These episodes include epsilon-greedy exploration, so the rate never drops
    below the exploration-induced floor.
    """
    tail = logs[-window:]
    return sum(log.terminal != SAFE for log in tail) / len(tail)


def mean_return(logs: list[EpisodeLog], window: int = 1000) -> float:
    tail = logs[-window:]
    return sum(log.ret for log in tail) / len(tail)


def converged_failure_rate(mdp: TabularMdp, result: TrainingResult, window: int = 1000) -> float:
    """Mean failure probability of the greedy policy held after each of the last ``window`` episodes.

    Failure is exact: one minus the probability of terminating in a safe goal
    from the initial state, so mass that never terminates counts as failure.
    """
    cache: dict[tuple, float] = {}
    total = 0.0
    tail = result.greedy_history[-window:]
    for greedy in tail:
        if greedy not in cache:
            pi = DetPolicy.from_internal(mdp, greedy)
            cache[greedy] = 1.0 - float(evaluate_policy(mdp, pi).safe_prob[mdp.initial_state])
        total += cache[greedy]
    return total / len(tail)
