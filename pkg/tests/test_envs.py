import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minmax_penalty.analysis import UncontrollableMdpError, minmax_penalty
from minmax_penalty.envs import (
    A1,
    A2,
    DEFAULT_LAYOUT,
    S0,
    S1,
    S2,
    S3,
    ChainWalkSpec,
    GridSpec,
    LayoutError,
    build_chain_walk,
    build_gridworld,
    load_layout,
    render_policy,
)
from minmax_penalty.mdp import validate

UP, DOWN, LEFT, RIGHT = range(4)


class TestChainWalk:
    def test_structure(self):
        m = build_chain_walk(0.1)
        assert (m.num_states, m.num_actions) == (4, 2)
        assert m.goals == frozenset({S1, S3}) and m.unsafe_goals == frozenset({S1})
        assert m.initial_state == S0
        assert m.transition[S0, A1, S1] == pytest.approx(0.1)
        assert m.transition[S0, A1, S2] == pytest.approx(0.9)
        assert m.transition[S0, A2, S1] == pytest.approx(0.9)
        assert m.transition[S2, A2, S2] == pytest.approx(0.1)

    def test_rewards(self):
        m = build_chain_walk(0.3)
        assert np.all(m.reward[[S0, S2]] == -1.0)
        assert np.all(m.reward[[S1, S3]] == 0.0)

    def test_deterministic_at_zero(self):
        m = build_chain_walk(0.0)
        assert set(np.unique(m.transition)) == {0.0, 1.0}

    def test_spec_object(self):
        assert build_chain_walk(ChainWalkSpec(0.25)) == build_chain_walk(0.25)

    @pytest.mark.parametrize("p", [-0.1, 1.5])
    def test_bad_p(self, p):
        with pytest.raises(ValueError):
            ChainWalkSpec(p)


class TestLayout:
    def test_needs_lava(self):
        with pytest.raises(LayoutError, match=">=1 L required"):
            GridSpec("S.G", slip_prob=0.0)

    def test_needs_goal(self):
        with pytest.raises(LayoutError, match=">=1 G required"):
            GridSpec("S.L")

    @pytest.mark.parametrize("text", ["..LG", "SSLG"])
    def test_needs_one_start(self, text):
        with pytest.raises(LayoutError, match="exactly one S"):
            GridSpec(text)

    def test_rectangular(self):
        with pytest.raises(LayoutError, match="rectangular"):
            GridSpec("S.LG\n..")

    def test_unknown_char(self):
        with pytest.raises(LayoutError, match="unknown"):
            GridSpec("S.LGx")

    def test_bad_slip(self):
        with pytest.raises(LayoutError, match="slip"):
            GridSpec(DEFAULT_LAYOUT, slip_prob=1.2)

    def test_load_layout(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text(DEFAULT_LAYOUT + "\n")
        assert GridSpec(load_layout(path)).layout == GridSpec(DEFAULT_LAYOUT).layout


class TestGridworld:
    def test_single_row(self):
        world = build_gridworld(GridSpec("S.LG", slip_prob=0.0))
        m = world.mdp
        s, cell1 = world.start, world.state_of[(0, 1)]
        assert m.transition[s, RIGHT, cell1] == 1.0
        assert m.transition[cell1, RIGHT, world.lava] == 1.0
        assert m.transition[s, LEFT, s] == 1.0  # off-grid bump
        assert m.reward[cell1, RIGHT, world.lava] == 0.0
        assert m.reward[s, RIGHT, cell1] == pytest.approx(-0.1)

    def test_default_start_row(self):
        world = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=0.25))
        m, s = world.mdp, world.start
        row = m.transition[s, UP]
        # the lava cell sits directly above the start; down is off-grid
        assert row[world.lava] == pytest.approx(0.75 + 0.25 / 4)
        assert row[s] == pytest.approx(0.25 / 4)
        assert row[world.state_of[(4, 0)]] == pytest.approx(0.25 / 4)
        assert row[world.state_of[(4, 2)]] == pytest.approx(0.25 / 4)
        assert row.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("sp", [0.0, 0.1, 0.25, 0.5, 1.0])
    def test_commanded_direction_mass(self, sp):
        # interior cell (3, 3): all four neighbours are open floor
        world = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=sp))
        s = world.state_of[(3, 3)]
        for a, target in enumerate([(2, 3), (4, 3), (3, 2), (3, 4)]):
            assert world.mdp.transition[s, a, world.state_of[target]] == pytest.approx(1 - sp + sp / 4)

    def test_walls_block(self):
        world = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=0.0))
        s = world.state_of[(0, 3)]
        assert world.mdp.transition[s, RIGHT, s] == 1.0

    def test_deterministic_at_zero_slip(self):
        m = build_gridworld(GridSpec(DEFAULT_LAYOUT, slip_prob=0.0)).mdp
        rows = m.transition.reshape(-1, m.num_states)
        assert np.all(np.sort(rows, axis=1)[:, -1] == 1.0)
        assert np.all(np.count_nonzero(rows, axis=1) == 1)

    def test_shared_absorbing_states(self):
        world = build_gridworld(GridSpec("GS.L\nL..G", slip_prob=0.0))
        assert world.mdp.num_states == 4 + 2
        assert world.mdp.transition[world.start, LEFT, world.goal] == 1.0

    def test_corridor_through_lava_is_uncontrollable(self):
        with pytest.raises(UncontrollableMdpError):
            minmax_penalty(build_gridworld(GridSpec("S.LG", slip_prob=0.2)).mdp)

    def test_detour_is_controllable(self):
        sa = minmax_penalty(build_gridworld(GridSpec("S.\nLG", slip_prob=0.2)).mdp)
        assert 0 < sa.controllability <= 1

    def test_render(self):
        spec = GridSpec("S.LG")
        world = build_gridworld(spec)
        assert render_policy(world, spec, [RIGHT] * world.mdp.num_states) == ">>LG"


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.lists(st.sampled_from(".#"), min_size=4, max_size=4), min_size=3, max_size=3),
    st.floats(0.0, 1.0),
)
def test_random_layouts_validate(grid, sp):
    grid[0][0], grid[1][1], grid[2][3] = "S", "G", "L"
    world = build_gridworld(GridSpec(tuple("".join(r) for r in grid), slip_prob=sp))
    validate(world.mdp)
