"""Gold action sequences: canonical minimum-cost plans and a pose simulator.

Row 0 is the top of the grid and "north" decreases the row index. A plan
walks the row displacement and the column displacement as two straight legs;
the leg order is whichever of row-first/column-first needs fewer actions,
with row-first preferred on ties so gold sequences are unique.
"""

from __future__ import annotations

from .gridworld import HEADINGS, AgentPose, WorldState

WALK = "walk"
L_TURN = "turn left"
R_TURN = "turn right"
ACTIONS = (WALK, L_TURN, R_TURN)

# Row/col delta per heading, in HEADINGS order (north, east, south, west).
HEADING_DELTAS = {
    "north": (-1, 0),
    "east": (0, 1),
    "south": (1, 0),
    "west": (0, -1),
}


def turn_actions(current: str, desired: str) -> list[str]:
    """Fewest turns from one heading to another; 180-degree turns go right."""
    diff = (HEADINGS.index(desired) - HEADINGS.index(current)) % 4
    return {0: [], 1: [R_TURN], 2: [R_TURN, R_TURN], 3: [L_TURN]}[diff]


def _straight_legs(heading: str, legs: list[tuple[str, int]]) -> list[str]:
    actions: list[str] = []
    for desired, steps in legs:
        if steps == 0:
            continue
        actions.extend(turn_actions(heading, desired))
        heading = desired
        actions.extend([WALK] * steps)
    return actions


def plan(world: WorldState, target: tuple[int, int]) -> list[str]:
    """Canonical minimum-cost action sequence from the agent pose to `target`."""
    row, col = target
    if not (0 <= row < world.d and 0 <= col < world.d):
        raise ValueError(f"target {target} outside {world.d}x{world.d} grid")
    agent = world.agent
    d_row = row - agent.row
    d_col = col - agent.col
    if d_row == 0 and d_col == 0:
        return []

    row_leg = ("south" if d_row > 0 else "north", abs(d_row))
    col_leg = ("east" if d_col > 0 else "west", abs(d_col))
    row_first = _straight_legs(agent.heading, [row_leg, col_leg])
    col_first = _straight_legs(agent.heading, [col_leg, row_leg])
    return row_first if len(row_first) <= len(col_first) else col_first


def simulate(world: WorldState, actions: list[str]) -> tuple[AgentPose, int]:
    """Apply actions from the agent's pose; WALK off the edge is a flagged no-op.

    Returns the final pose and the number of boundary violations.
    """
    row, col, heading = world.agent.row, world.agent.col, world.agent.heading
    flags = 0
    for action in actions:
        if action == WALK:
            d_row, d_col = HEADING_DELTAS[heading]
            new_row, new_col = row + d_row, col + d_col
            if 0 <= new_row < world.d and 0 <= new_col < world.d:
                row, col = new_row, new_col
            else:
                flags += 1
        elif action == R_TURN:
            heading = HEADINGS[(HEADINGS.index(heading) + 1) % 4]
        elif action == L_TURN:
            heading = HEADINGS[(HEADINGS.index(heading) - 1) % 4]
        else:
            raise ValueError(f"unknown action {action!r}")
    return AgentPose(row, col, heading), flags
