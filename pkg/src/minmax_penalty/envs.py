"""Builders for the chain-walk MDP and the lava gridworld."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import TabularMdp, validate

S0, S1, S2, S3 = range(4)
A1, A2 = range(2)

DEFAULT_LAYOUT = """\
G...#
...#.
.#...
.L...
.S...
"""

# (row, col) offsets for up, down, left, right
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")


@dataclass(frozen=True)
class ChainWalkSpec:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")


def build_chain_walk(spec: ChainWalkSpec | float) -> TabularMdp:
    """Four-state chain walk: s1 is the unsafe goal, s3 the safe goal.

    From s0, a1 heads for s2 and a2 for s1, each succeeding w.p. 1 - p and
    going the other way w.p. p. From s2 both actions reach s3 w.p. 1 - p and
    stay w.p. p. Every non-absorbing transition pays -1, absorbing loops 0.
    """
    p = spec.p if isinstance(spec, ChainWalkSpec) else ChainWalkSpec(float(spec)).p
    P = np.zeros((4, 2, 4))
    P[S0, A1, S2], P[S0, A1, S1] = 1 - p, p
    P[S0, A2, S2], P[S0, A2, S1] = p, 1 - p
    P[S2, :, S2], P[S2, :, S3] = p, 1 - p
    P[S1, :, S1] = 1.0
    P[S3, :, S3] = 1.0
    R = np.zeros_like(P)
    R[[S0, S2]] = -1.0
    mdp = TabularMdp(P, R, {S1, S3}, {S1}, S0, name=f"chain-walk(p={p})")
    validate(mdp)
    return mdp


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    layout: tuple[str, ...]
    slip_prob: float = 0.25
    step_reward: float = -0.1
    goal_reward: float = 1.0
    lava_entry_reward: float = 0.0

    def __post_init__(self):
        layout = self.layout
        if isinstance(layout, str):
            layout = tuple(line for line in layout.strip("\n").splitlines())
        layout = tuple(line.rstrip("\r") for line in layout)
        object.__setattr__(self, "layout", layout)
        if not layout or len({len(r) for r in layout}) != 1 or not layout[0]:
            raise LayoutError("grid must be rectangular and non-empty")
        cells = "".join(layout)
        bad = set(cells) - set("SGL#.")
        if bad:
            raise LayoutError(f"unknown map characters {sorted(bad)}")
        if cells.count("S") != 1:
            raise LayoutError("exactly one S required")
        if "G" not in cells:
            raise LayoutError(">=1 G required")
        if "L" not in cells:
            raise LayoutError(">=1 L required")
        if not 0.0 <= self.slip_prob <= 1.0:
            raise LayoutError(f"slip probability must lie in [0, 1], got {self.slip_prob}")


def load_layout(path: str | Path) -> tuple[str, ...]:
    text = Path(path).read_text()
    return tuple(line for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class Gridworld:
    """Lava gridworld MDP plus the cell <-> state bookkeeping."""

    mdp: TabularMdp
    cell_of: dict[int, tuple[int, int]]
    state_of: dict[tuple[int, int], int]
    goal: int
    lava: int
    start: int


def build_gridworld(spec: GridSpec) -> Gridworld:
    layout = spec.layout
    H, W = len(layout), len(layout[0])
    cells = [(r, c) for r in range(H) for c in range(W) if layout[r][c] in ".S"]
    state_of = {rc: i for i, rc in enumerate(cells)}
    goal, lava = len(cells), len(cells) + 1
    S, A = len(cells) + 2, len(MOVES)

    def land(rc, move):
        r, c = rc[0] + move[0], rc[1] + move[1]
        if not (0 <= r < H and 0 <= c < W) or layout[r][c] == "#":
            return state_of[rc]
        ch = layout[r][c]
        if ch == "G":
            return goal
        if ch == "L":
            return lava
        return state_of[(r, c)]

    def pay(nxt):
        if nxt == goal:
            return spec.goal_reward
        if nxt == lava:
            return spec.lava_entry_reward
        return spec.step_reward

    sp = spec.slip_prob
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for rc, s in state_of.items():
        for a in range(A):
            for b, move in enumerate(MOVES):
                w = sp / A + (1 - sp if b == a else 0.0)
                if w == 0.0:
                    continue
                nxt = land(rc, move)
                P[s, a, nxt] += w
                R[s, a, nxt] = pay(nxt)
    # summed slip weights can overshoot 1 by an ulp on enclosed cells
    P[: len(cells)] /= P[: len(cells)].sum(axis=2, keepdims=True)
    np.minimum(P, 1.0, out=P)
    P[goal, :, goal] = 1.0
    P[lava, :, lava] = 1.0
    start = state_of[next((r, c) for r in range(H) for c in range(W) if layout[r][c] == "S")]
    mdp = TabularMdp(P, R, {goal, lava}, {lava}, start, name=f"gridworld(sp={sp})")
    validate(mdp)
    cell_of = {s: rc for rc, s in state_of.items()}
    return Gridworld(mdp, cell_of, state_of, goal, lava, start)


def render_policy(world: Gridworld, spec: GridSpec, actions) -> str:
    """ASCII arrows for a per-state action array; handy when eyeballing learned policies."""
    arrows = "^v<>"
    rows = [list(r) for r in spec.layout]
    for s, (r, c) in world.cell_of.items():
        rows[r][c] = arrows[int(actions[s])]
    return "\n".join("".join(r) for r in rows)
