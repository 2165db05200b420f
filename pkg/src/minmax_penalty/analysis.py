"""Exact dynamic-programming analysis of tabular SSP MDPs.

Everything here assumes the dynamics are known. Per-policy quantities come
from linear absorption systems on the induced Markov chain; controllability,
diameter and the Minmax penalty come from brute-force enumeration of the
deterministic proper policies.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .mdp import PROB_TOL, DetPolicy, RewardBounds, TabularMdp, reward_bounds

DENSE_LIMIT = 512
DEFAULT_POLICY_CAP = 10**6
CONTROLLABILITY_EPS = 1e-9
VARIANTS = ("pairs-max", "states-min")


class PolicyCapExceeded(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"{count} deterministic policies exceed the enumeration cap of {cap}")
        self.count = count
        self.cap = cap


class UncontrollableMdpError(ValueError):
    """The agent cannot influence where it terminates (C = 0)."""

    def __init__(self, controllability: float):
        super().__init__(f"uncontrollable MDP: C = {controllability:.3g}")
        self.controllability = controllability


class NotConvergedError(RuntimeError):
    def __init__(self, sweeps: int, residual: float):
        super().__init__(f"value iteration did not converge after {sweeps} sweeps (residual {residual:.3e})")
        self.sweeps = sweeps
        self.residual = residual


# --- linear systems ------------------------------------------------------------


def _solve(A_sub: np.ndarray, b: np.ndarray, tol: float = 1e-12, max_sweeps: int = 10**7) -> np.ndarray:
    """Solve x = A_sub x + b for a substochastic ``A_sub`` with spectral radius < 1."""
    n = len(b)
    if n == 0:
        return b.copy()
    if n <= DENSE_LIMIT:
        return np.linalg.solve(np.eye(n) - A_sub, b)
    x = np.zeros(n)
    for _ in range(max_sweeps):
        x_new = A_sub @ x + b
        if np.max(np.abs(x_new - x)) < tol:
            return x_new
        x = x_new
    raise NotConvergedError(max_sweeps, float(np.max(np.abs(x_new - x))))


def _can_reach(P_pi: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """States with a positive-probability path into ``targets`` (boolean mask)."""
    reach = targets.copy()
    adj = P_pi > 0
    while True:
        new = reach | adj[:, reach].any(axis=1)
        if (new == reach).all():
            return reach
        reach = new


def _absorption(P_pi: np.ndarray, internal: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Probability of eventually entering the absorbing set ``target``."""
    S = len(P_pi)
    out = target.astype(float)
    live = internal & _can_reach(P_pi, target)
    idx = np.flatnonzero(live)
    if len(idx):
        b = P_pi[np.ix_(idx, np.flatnonzero(target))].sum(axis=1)
        out[idx] = _solve(P_pi[np.ix_(idx, idx)], b)
    out[internal & ~live] = 0.0
    assert out.shape == (S,)
    return out


@dataclass(frozen=True)
class PolicyEval:
    """Exact evaluation of one deterministic policy.

    Arrays are indexed by state over the full state space. On goal states
    ``safe_prob`` is the indicator of the safe set and ``hit_time``/``value``
    are 0. Internal states from which the goal set is not reached with
    probability one get ``hit_time = inf`` and ``value = nan``.
    """

    policy: DetPolicy
    safe_prob: np.ndarray
    unsafe_prob: np.ndarray
    reach_prob: np.ndarray
    hit_time: np.ndarray
    value: np.ndarray
    proper: bool


def induced_chain(mdp: TabularMdp, policy: DetPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix and expected one-step reward under ``policy``."""
    s = np.arange(mdp.num_states)
    a = np.asarray(policy.actions)
    P_pi = mdp.transition[s, a]
    r_pi = (P_pi * mdp.reward[s, a]).sum(axis=1)
    return P_pi, r_pi


def evaluate_policy(mdp: TabularMdp, policy: DetPolicy) -> PolicyEval:
    if len(policy) != mdp.num_states:
        raise ValueError(f"policy covers {len(policy)} states, MDP has {mdp.num_states}")
    P_pi, r_pi = induced_chain(mdp, policy)
    goal = mdp.is_goal
    unsafe = mdp.is_unsafe
    internal = ~goal

    safe_prob = _absorption(P_pi, internal, goal & ~unsafe)
    unsafe_prob = _absorption(P_pi, internal, unsafe)
    reach = _absorption(P_pi, internal, goal)
    ok = internal & (reach >= 1.0 - PROB_TOL)
    proper = bool(ok[internal].all())

    hit_time = np.where(internal, np.inf, 0.0)
    value = np.where(internal, np.nan, 0.0)
    idx = np.flatnonzero(ok)
    if len(idx):
        # states reaching G w.p. 1 only lead to such states or to G
        sub = P_pi[np.ix_(idx, idx)]
        hit_time[idx] = _solve(sub, np.ones(len(idx)))
        value[idx] = _solve(sub, r_pi[idx])
    return PolicyEval(policy, safe_prob, unsafe_prob, reach, hit_time, value, proper)


def all_policies(mdp: TabularMdp, cap: int = DEFAULT_POLICY_CAP):
    """Every deterministic policy in lexicographic order of internal actions."""
    n_int = len(mdp.internal_states)
    count = mdp.num_actions**n_int
    if count > cap:
        raise PolicyCapExceeded(count, cap)
    for combo in itertools.product(range(mdp.num_actions), repeat=n_int):
        yield DetPolicy.from_internal(mdp, combo)


def enumerate_proper_policies(mdp: TabularMdp, cap: int = DEFAULT_POLICY_CAP) -> list[DetPolicy]:
    return [pi for pi in all_policies(mdp, cap) if evaluate_policy(mdp, pi).proper]


def evaluate_proper_policies(mdp: TabularMdp, cap: int = DEFAULT_POLICY_CAP) -> list[PolicyEval]:
    evals = (evaluate_policy(mdp, pi) for pi in all_policies(mdp, cap))
    return [ev for ev in evals if ev.proper]


def _evals(mdp, policies):
    return [p if isinstance(p, PolicyEval) else evaluate_policy(mdp, p) for p in policies]


# --- controllability, diameter, penalty ---------------------------------------


@dataclass(frozen=True)
class Controllability:
    value: float
    argmin_pair: tuple[DetPolicy, DetPolicy] | None
    n_classes: int
    degenerate: bool = False


def behaviour_classes(mdp: TabularMdp, evals: list[PolicyEval], tol: float = PROB_TOL) -> list[PolicyEval]:
    """One representative per distinct safe-probability vector, first in order wins."""
    internal = mdp.internal_states
    reps: list[PolicyEval] = []
    vecs: list[np.ndarray] = []
    for ev in evals:
        v = ev.safe_prob[internal]
        if not any(np.max(np.abs(v - w)) <= tol for w in vecs):
            reps.append(ev)
            vecs.append(v)
    return reps


def delta_p(e1: PolicyEval, e2: PolicyEval) -> np.ndarray:
    """Per-state difference in safe-termination probability between two policies."""
    return e1.safe_prob - e2.safe_prob


def controllability(mdp: TabularMdp, policies, variant: str = "pairs-max") -> Controllability:
    """Smallest safe-probability gap over behaviourally distinct proper policy pairs.

    ``pairs-max`` takes, per pair, the largest gap over internal states and then
    the smallest over pairs. ``states-min`` takes the smallest gap over both
    states and pairs, which is zero whenever some state is policy-indifferent.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown controllability variant {variant!r}; expected one of {VARIANTS}")
    reps = behaviour_classes(mdp, _evals(mdp, policies))
    if len(reps) < 2:
        return Controllability(0.0, None, len(reps), degenerate=True)
    internal = mdp.internal_states
    V = np.array([ev.safe_prob[internal] for ev in reps])
    gaps = np.abs(V[:, None, :] - V[None, :, :])
    iu, ju = np.triu_indices(len(reps), k=1)
    if variant == "pairs-max":
        per_pair = gaps.max(axis=2)[iu, ju]
    else:
        per_pair = gaps.min(axis=2)[iu, ju]
    k = int(np.argmin(per_pair))
    pair = (reps[iu[k]].policy, reps[ju[k]].policy)
    return Controllability(float(per_pair[k]), pair, len(reps))


def diameter(mdp: TabularMdp, policies) -> float:
    evals = _evals(mdp, policies)
    if not evals:
        raise ValueError("diameter needs at least one policy")
    internal = mdp.internal_states
    if not all(ev.proper for ev in evals):
        raise ValueError("diameter is only defined over proper policies")
    return float(max(ev.hit_time[internal].max() for ev in evals))


def analysis_bounds(mdp: TabularMdp) -> RewardBounds:
    """Reward bounds used by the penalty formula.

    The zero reward of the absorbing self-loops is part of the reward
    function, so both bounds are widened to include 0.
    """
    rb = reward_bounds(mdp)
    return RewardBounds(min(rb.r_min, 0.0), max(rb.r_max, 0.0))


def penalty_formula(r_min: float, r_max: float, diameter: float, controllability: float) -> float:
    return min(r_min, (r_min - r_max) * diameter / controllability)


@dataclass(frozen=True)
class SafetyAnalysis:
    controllability: float
    diameter: float
    r_min: float
    r_max: float
    minmax_penalty: float
    proper_policies: list[DetPolicy] = field(repr=False)
    argmin_pair: tuple[DetPolicy, DetPolicy]
    variant: str = "pairs-max"

    def report(self) -> dict:
        return {
            "C": self.controllability,
            "D": self.diameter,
            "r_min": self.r_min,
            "r_max": self.r_max,
            "minmax_penalty": self.minmax_penalty,
            "n_proper_policies": len(self.proper_policies),
            "argmin_pair": [list(p.actions) for p in self.argmin_pair],
            "controllability_variant": self.variant,
        }


def minmax_penalty(
    mdp: TabularMdp,
    cap: int = DEFAULT_POLICY_CAP,
    variant: str = "pairs-max",
    evals: list[PolicyEval] | None = None,
) -> SafetyAnalysis:
    if evals is None:
        evals = evaluate_proper_policies(mdp, cap)
    ctrl = controllability(mdp, evals, variant)
    if ctrl.value <= CONTROLLABILITY_EPS:
        raise UncontrollableMdpError(ctrl.value)
    D = diameter(mdp, evals)
    b = analysis_bounds(mdp)
    return SafetyAnalysis(
        controllability=ctrl.value,
        diameter=D,
        r_min=b.r_min,
        r_max=b.r_max,
        minmax_penalty=penalty_formula(b.r_min, b.r_max, D, ctrl.value),
        proper_policies=[ev.policy for ev in evals],
        argmin_pair=ctrl.argmin_pair,
        variant=variant,
    )


def optimal_safe_prob(mdp: TabularMdp, policies) -> np.ndarray:
    """Per-state best safe-termination probability over the given policies."""
    evals = _evals(mdp, policies)
    return np.max([ev.safe_prob for ev in evals], axis=0)


# --- value iteration -------------------------------------------------------------


@dataclass(frozen=True)
class ValueIterationResult:
    policy: DetPolicy
    values: np.ndarray
    sweeps: int

    def __iter__(self):
        # allows ``policy, values = value_iteration(...)``
        return iter((self.policy, self.values))


def value_iteration(
    mdp: TabularMdp,
    unsafe_reward: float,
    tol: float = 1e-10,
    max_sweeps: int = 10**6,
) -> ValueIterationResult:
    """Undiscounted Bellman optimality sweeps with the unsafe entry reward replaced."""
    m = mdp.with_unsafe_reward(unsafe_reward)
    P, R = m.transition, m.reward
    internal = mdp.internal_states
    P_int = P[internal]
    r_int = (P_int * R[internal]).sum(axis=2)
    V = np.zeros(mdp.num_states)
    residual = math.inf
    for sweep in range(1, max_sweeps + 1):
        Q = r_int + P_int @ V
        new = Q.max(axis=1)
        residual = float(np.max(np.abs(new - V[internal])))
        V[internal] = new
        if residual < tol:
            break
    else:
        raise NotConvergedError(max_sweeps, residual)
    Q = r_int + P_int @ V
    greedy = np.argmax(Q, axis=1)
    return ValueIterationResult(DetPolicy.from_internal(mdp, greedy.tolist()), V, sweep)


def failure_probability(mdp: TabularMdp, policy: DetPolicy, state: int | None = None) -> float:
    """Probability of not terminating in a safe goal from ``state`` (default: initial)."""
    s = mdp.initial_state if state is None else state
    return 1.0 - float(evaluate_policy(mdp, policy).safe_prob[s])


# --- random test MDPs ---------------------------------------------------------------


def random_mdp(
    rng: np.random.Generator,
    n_internal: int,
    n_actions: int,
    concentration: float = 0.5,
    goal_mass: float = 0.05,
) -> TabularMdp:
    """Random SSP MDP with one safe goal and one unsafe goal.

    Rows are Dirichlet draws over all states, then each goal receives at least
    ``goal_mass`` so both goals are reachable from every internal state and
    every policy is proper. Internal steps pay rewards in [-1, 0]; entering a
    goal pays a reward in [-1, 1].
    """
    S = n_internal + 2
    safe, unsafe = n_internal, n_internal + 1
    P = np.zeros((S, n_actions, S))
    R = np.zeros((S, n_actions, S))
    for s in range(n_internal):
        for a in range(n_actions):
            row = rng.dirichlet(np.full(S, concentration))
            row = (1 - 2 * goal_mass) * row
            row[safe] += goal_mass
            row[unsafe] += goal_mass
            row[-1] = 1.0 - row[:-1].sum()
            P[s, a] = row
            R[s, a, :n_internal] = rng.uniform(-1.0, 0.0, n_internal)
            R[s, a, n_internal:] = rng.uniform(-1.0, 1.0, 2)
    for g in (safe, unsafe):
        P[g, :, g] = 1.0
    return TabularMdp(P, R, {safe, unsafe}, {unsafe}, 0, name="random")


def random_controllable_mdp(
    rng: np.random.Generator,
    max_internal: int = 6,
    max_actions: int = 3,
    min_controllability: float = 0.05,
    max_tries: int = 10_000,
) -> tuple[TabularMdp, SafetyAnalysis]:
    """Rejection-sample :func:`random_mdp` until C exceeds ``min_controllability``."""
    for _ in range(max_tries):
        n = int(rng.integers(1, max_internal + 1))
        k = int(rng.integers(2, max_actions + 1))
        mdp = random_mdp(rng, n, k)
        evals = evaluate_proper_policies(mdp)
        ctrl = controllability(mdp, evals)
        if ctrl.value > min_controllability:
            return mdp, minmax_penalty(mdp, evals=evals)
    raise RuntimeError(f"no MDP with C > {min_controllability} in {max_tries} draws")
