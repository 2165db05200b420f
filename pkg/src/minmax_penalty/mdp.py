"""Tabular stochastic-shortest-path MDPs.

An MDP here is a pair of dense ``(S, A, S)`` tensors (transition probabilities
and rewards) together with a set of absorbing goal states, a non-empty subset
of which is unsafe. States outside the goal set are called internal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

ROW_SUM_TOL = 1e-12
PROB_TOL = 1e-9


class InvalidMdpError(ValueError):
    """Raised when an MDP violates a structural invariant."""


class MdpParseError(ValueError):
    """Raised when a serialized MDP cannot be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.field = field


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray
    reward: np.ndarray
    goals: frozenset[int]
    unsafe_goals: frozenset[int]
    initial_state: int
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "goals", frozenset(int(g) for g in self.goals))
        object.__setattr__(self, "unsafe_goals", frozenset(int(g) for g in self.unsafe_goals))
        object.__setattr__(self, "initial_state", int(self.initial_state))
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise InvalidMdpError(f"transition must have shape (S, A, S), got {self.transition.shape}")
        if self.reward.shape != self.transition.shape:
            raise InvalidMdpError(
                f"reward shape {self.reward.shape} does not match transition shape {self.transition.shape}"
            )

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def safe_goals(self) -> frozenset[int]:
        return self.goals - self.unsafe_goals

    @property
    def internal_states(self) -> np.ndarray:
        return np.array([s for s in range(self.num_states) if s not in self.goals], dtype=int)

    @property
    def is_goal(self) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=bool)
        mask[list(self.goals)] = True
        return mask

    @property
    def is_unsafe(self) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=bool)
        mask[list(self.unsafe_goals)] = True
        return mask

    def with_unsafe_reward(self, unsafe_reward: float) -> "TabularMdp":
        """Copy of the MDP whose transitions into unsafe goals pay ``unsafe_reward``."""
        reward = np.array(self.reward)
        internal = self.internal_states
        unsafe = sorted(self.unsafe_goals)
        reward[np.ix_(internal, np.arange(self.num_actions), unsafe)] = unsafe_reward
        return TabularMdp(self.transition, reward, self.goals, self.unsafe_goals, self.initial_state, self.name)

    def __eq__(self, other):
        if not isinstance(other, TabularMdp):
            return NotImplemented
        return (
            self.goals == other.goals
            and self.unsafe_goals == other.unsafe_goals
            and self.initial_state == other.initial_state
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
        )

    __hash__ = None


@dataclass(frozen=True)
class DetPolicy:
    """Deterministic policy stored as one action per state.

    Entries at absorbing states carry no meaning and are kept at 0 so that
    policies compare equal iff they agree on every internal state.
    """

    actions: tuple[int, ...]

    def action_of(self, state: int) -> int:
        return self.actions[state]

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_internal(cls, mdp: TabularMdp, internal_actions: Iterable[int]) -> "DetPolicy":
        full = [0] * mdp.num_states
        internal_actions = list(internal_actions)
        internal = mdp.internal_states
        if len(internal_actions) != len(internal):
            raise ValueError(f"expected {len(internal)} internal actions, got {len(internal_actions)}")
        for s, a in zip(internal, internal_actions):
            if not 0 <= a < mdp.num_actions:
                raise ValueError(f"action {a} out of range at state {s}")
            full[s] = int(a)
        return cls(tuple(full))

    @classmethod
    def constant(cls, mdp: TabularMdp, action: int) -> "DetPolicy":
        return cls.from_internal(mdp, [action] * len(mdp.internal_states))


@dataclass(frozen=True)
class RewardBounds:
    r_min: float
    r_max: float

    def __post_init__(self):
        if not (np.isfinite(self.r_min) and np.isfinite(self.r_max)):
            raise ValueError("reward bounds must be finite")
        if self.r_min > self.r_max:
            raise ValueError(f"r_min {self.r_min} exceeds r_max {self.r_max}")


def validate(mdp: TabularMdp) -> None:
    """Check every structural invariant, raising on the first violation."""
    S, A = mdp.num_states, mdp.num_actions
    P, R = mdp.transition, mdp.reward
    if S == 0 or A == 0:
        raise InvalidMdpError("MDP must have at least one state and one action")
    for g in mdp.goals | {mdp.initial_state}:
        if not 0 <= g < S:
            raise InvalidMdpError(f"state index {g} out of range [0, {S})")
    if not np.all(np.isfinite(P)) or not np.all(np.isfinite(R)):
        raise InvalidMdpError("transition and reward entries must be finite")
    bad = np.argwhere((P < 0) | (P > 1))
    if len(bad):
        s, a, t = bad[0]
        raise InvalidMdpError(f"probability out of [0, 1] at (s={s}, a={a}, s'={t}): {P[s, a, t]}")
    if not mdp.goals:
        raise InvalidMdpError("goal set is empty")
    if not mdp.unsafe_goals:
        raise InvalidMdpError("unsafe goal set is empty")
    if not mdp.unsafe_goals < mdp.goals:
        if mdp.unsafe_goals == mdp.goals:
            raise InvalidMdpError("no safe goal: unsafe_goals equals goals")
        raise InvalidMdpError("unsafe set not strict subset of goals")
    if len(mdp.goals) == S:
        raise InvalidMdpError("no internal states")
    if mdp.initial_state in mdp.goals:
        raise InvalidMdpError(f"initial state {mdp.initial_state} is absorbing")
    sums = P.sum(axis=2)
    for s in mdp.internal_states:
        for a in range(A):
            if abs(sums[s, a] - 1.0) > ROW_SUM_TOL:
                raise InvalidMdpError(f"row sum {sums[s, a]!r} != 1 at (s={s}, a={a})")
    for g in sorted(mdp.goals):
        for a in range(A):
            if P[g, a, g] != 1.0 or abs(sums[g, a] - 1.0) > ROW_SUM_TOL:
                raise InvalidMdpError(f"goal {g} is not absorbing under action {a}")
            if R[g, a, g] != 0.0:
                raise InvalidMdpError(f"absorbing self-loop at goal {g}, action {a} has nonzero reward")


def reward_bounds(mdp: TabularMdp) -> RewardBounds:
    """Reward range over positive-probability transitions leaving internal states."""
    internal = mdp.internal_states
    P = mdp.transition[internal]
    R = mdp.reward[internal]
    live = R[P > 0]
    return RewardBounds(float(live.min()), float(live.max()))


def sample_step(mdp: TabularMdp, state: int, action: int, rng: np.random.Generator) -> tuple[int, float]:
    """Draw one transition. Consumes exactly one uniform from ``rng``."""
    if state in mdp.goals:
        raise ValueError(f"stepping terminal state {state}")
    row = mdp.transition[state, action]
    u = rng.random()
    cdf = np.cumsum(row)
    nxt = int(np.searchsorted(cdf, u, side="right"))
    if nxt >= len(row) or row[nxt] == 0.0:
        # u landed past the rounded cdf total; fall back to the last supported state
        nxt = int(np.flatnonzero(row)[-1])
    return nxt, float(mdp.reward[state, action, nxt])


def complete_absorbing(transition: np.ndarray, reward: np.ndarray, goals: Iterable[int]):
    """Fill in the self-loops of goal states whose rows were left empty."""
    transition = np.array(transition, dtype=float)
    reward = np.array(reward, dtype=float)
    for g in goals:
        for a in range(transition.shape[1]):
            if not transition[g, a].any():
                transition[g, a, g] = 1.0
                reward[g, a, g] = 0.0
    return transition, reward


# --- serialization -----------------------------------------------------------

_REQUIRED = ("num_states", "num_actions", "transition", "reward", "goals", "unsafe_goals", "initial_state")


def to_dict(mdp: TabularMdp) -> dict:
    P, R = mdp.transition, mdp.reward
    trans = [[int(s), int(a), int(t), float(P[s, a, t])] for s, a, t in np.argwhere(P != 0)]
    rew = [[int(s), int(a), int(t), float(R[s, a, t])] for s, a, t in np.argwhere(R != 0)]
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "goals": sorted(mdp.goals),
        "unsafe_goals": sorted(mdp.unsafe_goals),
        "initial_state": mdp.initial_state,
        "transition": trans,
        "reward": rew,
    }


def write_mdp(mdp: TabularMdp) -> str:
    """Serialize to JSON text, one quadruple per line for readability."""
    d = to_dict(mdp)
    head = {k: d[k] for k in ("num_states", "num_actions", "goals", "unsafe_goals", "initial_state")}
    lines = ["{"]
    for k, v in head.items():
        lines.append(f"  {json.dumps(k)}: {json.dumps(v)},")
    for key in ("transition", "reward"):
        rows = [f"    {json.dumps(q)}" for q in d[key]]
        tail = "," if key == "transition" else ""
        lines.append(f'  "{key}": [' + ("\n" + ",\n".join(rows) + "\n  ]" if rows else "]") + tail)
    lines.append("}")
    return "\n".join(lines) + "\n"


def _quad_index(q, key, n_states, n_actions, pos):
    if not isinstance(q, list) or len(q) != 4:
        raise MdpParseError(f"entry {pos} must be a [s, a, s', value] quadruple", field=key)
    s, a, t, v = q
    for name, idx, hi in (("s", s, n_states), ("a", a, n_actions), ("s'", t, n_states)):
        if isinstance(idx, bool) or not isinstance(idx, int) or not 0 <= idx < hi:
            raise MdpParseError(f"entry {pos}: {name}={idx!r} out of range [0, {hi})", field=key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MdpParseError(f"entry {pos}: value {v!r} is not a number", field=key)
    return s, a, t, float(v)


def read_mdp(text: str, check: bool = True) -> TabularMdp:
    """Parse the JSON form produced by :func:`write_mdp` and validate it."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MdpParseError(e.msg, line=e.lineno) from e
    if not isinstance(doc, dict):
        raise MdpParseError("top level must be an object", line=1)
    for key in _REQUIRED:
        if key not in doc:
            raise MdpParseError(f"missing field {key!r}", field=key)
    S, A = doc["num_states"], doc["num_actions"]
    for key, val in (("num_states", S), ("num_actions", A)):
        if isinstance(val, bool) or not isinstance(val, int) or val <= 0:
            raise MdpParseError(f"{key} must be a positive integer", field=key)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for key, arr in (("transition", P), ("reward", R)):
        if not isinstance(doc[key], list):
            raise MdpParseError("expected a list of quadruples", field=key)
        for i, q in enumerate(doc[key]):
            s, a, t, v = _quad_index(q, key, S, A, i)
            arr[s, a, t] = v
    for key in ("goals", "unsafe_goals"):
        if not isinstance(doc[key], list) or not all(isinstance(g, int) and not isinstance(g, bool) for g in doc[key]):
            raise MdpParseError("expected a list of state indices", field=key)
    P, R = complete_absorbing(P, R, [g for g in doc["goals"] if 0 <= g < S])
    mdp = TabularMdp(P, R, doc["goals"], doc["unsafe_goals"], doc["initial_state"])
    if check:
        validate(mdp)
    return mdp
