"""Gold plan construction checked against an exhaustive search oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridseq.gridworld import AgentPose, GeneratorConfig, WorldState, sample_world
from gridseq.planner import ACTIONS, L_TURN, R_TURN, WALK, plan, simulate, turn_actions
from oracles import bfs_min_plan


def pose_world(d, row, col, heading):
    return WorldState(d=d, cells={}, agent=AgentPose(row, col, heading))


def test_turn_actions_all_pairs():
    headings = ("north", "east", "south", "west")
    for current in headings:
        assert turn_actions(current, current) == []
    assert turn_actions("north", "east") == [R_TURN]
    assert turn_actions("north", "west") == [L_TURN]
    assert turn_actions("north", "south") == [R_TURN, R_TURN]
    assert turn_actions("west", "north") == [R_TURN]
    assert turn_actions("east", "north") == [L_TURN]


def test_plan_empty_when_already_there():
    world = pose_world(4, 2, 2, "north")
    assert plan(world, (2, 2)) == []


def test_plan_straight_line():
    world = pose_world(4, 3, 0, "north")
    assert plan(world, (0, 0)) == [WALK, WALK, WALK]


def test_plan_turns_before_walking():
    world = pose_world(4, 0, 0, "north")
    assert plan(world, (0, 2)) == [R_TURN, WALK, WALK]
    assert plan(world, (2, 0)) == [R_TURN, R_TURN, WALK, WALK]


def test_plan_rejects_out_of_bounds_target():
    with pytest.raises(ValueError):
        plan(pose_world(4, 0, 0, "north"), (4, 0))


def test_plan_deterministic_tie_break():
    # Both legs need one turn from east; the row leg must come first.
    world = pose_world(5, 0, 0, "north")
    actions = plan(world, (2, 2))
    assert actions == plan(world, (2, 2))
    assert actions[0] == R_TURN
    first_walks = actions[1 : actions.index(R_TURN, 1)]
    assert all(a == WALK for a in first_walks)


def test_simulate_tracks_pose_and_flags():
    world = pose_world(3, 0, 0, "north")
    pose, flags = simulate(world, [WALK])
    assert flags == 1  # walking off the top edge is a flagged no-op
    assert (pose.row, pose.col) == (0, 0)
    pose, flags = simulate(world, [R_TURN, WALK, WALK])
    assert flags == 0
    assert (pose.row, pose.col, pose.heading) == (0, 2, "east")


def test_simulate_rejects_unknown_action():
    with pytest.raises(ValueError):
        simulate(pose_world(3, 0, 0, "north"), ["jump"])


def test_plan_simulates_to_target():
    rng = np.random.default_rng(11)
    for _ in range(200):
        world = sample_world(rng, GeneratorConfig(d=5, num_objects=3))
        target = next(iter(world.cells))
        actions = plan(world, target)
        assert set(actions) <= set(ACTIONS)
        pose, flags = simulate(world, actions)
        assert (pose.row, pose.col) == target
        assert flags == 0


def test_plan_length_matches_exhaustive_minimum():
    rng = np.random.default_rng(23)
    for _ in range(200):
        world = sample_world(rng, GeneratorConfig(d=4, num_objects=3))
        target = next(iter(world.cells))
        actions = plan(world, target)
        agent = world.agent
        assert len(actions) == bfs_min_plan(
            world.d, agent.row, agent.col, agent.heading, target
        )


@settings(max_examples=60, deadline=None)
@given(
    d=st.integers(3, 8),
    row=st.integers(0, 7),
    col=st.integers(0, 7),
    t_row=st.integers(0, 7),
    t_col=st.integers(0, 7),
    heading=st.sampled_from(("north", "east", "south", "west")),
)
def test_plan_optimal_for_arbitrary_poses(d, row, col, t_row, t_col, heading):
    row, col = row % d, col % d
    t_row, t_col = t_row % d, t_col % d
    world = pose_world(d, row, col, heading)
    actions = plan(world, (t_row, t_col))
    assert len(actions) == bfs_min_plan(d, row, col, heading, (t_row, t_col))
    pose, flags = simulate(world, actions)
    assert (pose.row, pose.col) == (t_row, t_col)
    assert flags == 0
