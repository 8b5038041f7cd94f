"""Grid world state: typed objects on a d x d board plus an oriented agent.

A world is a sparse map of cells to objects (shape, color, size) and an agent
pose. `encode_world` turns it into the dense one-hot tensor consumed by the
state encoder; `sample_world` draws random worlds from a seeded stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SHAPES = ("circle", "square", "cylinder")
COLORS = ("red", "green", "blue", "yellow")
HEADINGS = ("north", "east", "south", "west")
SIZES = (1, 2, 3, 4)

# Per-cell channel layout: size one-hot | color one-hot | shape one-hot |
# agent-present | heading one-hot.
SIZE_OFFSET = 0
COLOR_OFFSET = 4
SHAPE_OFFSET = 8
AGENT_CHANNEL = 11
HEADING_OFFSET = 12
N_CHANNELS = 16


class PlacementInfeasibleError(ValueError):
    """More objects requested than the grid can hold."""


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: int

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if self.size not in SIZES:
            raise ValueError(f"size must be in {SIZES}, got {self.size}")


@dataclass(frozen=True)
class AgentPose:
    row: int
    col: int
    heading: str

    def __post_init__(self):
        if self.heading not in HEADINGS:
            raise ValueError(f"unknown heading {self.heading!r}")


@dataclass
class WorldState:
    d: int
    cells: dict[tuple[int, int], ObjectSpec] = field(default_factory=dict)
    agent: AgentPose = AgentPose(0, 0, "north")

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"grid side must be >= 2, got {self.d}")
        for row, col in self.cells:
            if not (0 <= row < self.d and 0 <= col < self.d):
                raise ValueError(f"object at ({row},{col}) outside {self.d}x{self.d} grid")
        if not (0 <= self.agent.row < self.d and 0 <= self.agent.col < self.d):
            raise ValueError(f"agent at ({self.agent.row},{self.agent.col}) outside grid")

    def objects(self) -> list[tuple[tuple[int, int], ObjectSpec]]:
        """Cell/object pairs in deterministic (row, col) order."""
        return sorted(self.cells.items())

    def flat_index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.d + cell[1]

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "agent": {
                "row": self.agent.row,
                "col": self.agent.col,
                "heading": self.agent.heading,
            },
            "objects": [
                {"row": r, "col": c, "shape": o.shape, "color": o.color, "size": o.size}
                for (r, c), o in self.objects()
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "WorldState":
        cells = {}
        for entry in data["objects"]:
            pos = (entry["row"], entry["col"])
            if pos in cells:
                raise ValueError(f"duplicate object cell {pos}")
            cells[pos] = ObjectSpec(entry["shape"], entry["color"], entry["size"])
        agent = data["agent"]
        return cls(
            d=data["d"],
            cells=cells,
            agent=AgentPose(agent["row"], agent["col"], agent["heading"]),
        )


@dataclass(frozen=True)
class GeneratorConfig:
    d: int = 6
    num_objects: int = 6  # the k objects placed on the board

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"grid side must be >= 2, got {self.d}")


def encode_world(state: WorldState) -> np.ndarray:
    """One-hot encode a world as a (d, d, 16) float tensor."""
    grid = np.zeros((state.d, state.d, N_CHANNELS))
    for (row, col), obj in state.cells.items():
        grid[row, col, SIZE_OFFSET + obj.size - 1] = 1.0
        grid[row, col, COLOR_OFFSET + COLORS.index(obj.color)] = 1.0
        grid[row, col, SHAPE_OFFSET + SHAPES.index(obj.shape)] = 1.0
    agent = state.agent
    grid[agent.row, agent.col, AGENT_CHANNEL] = 1.0
    grid[agent.row, agent.col, HEADING_OFFSET + HEADINGS.index(agent.heading)] = 1.0
    return grid


def sample_world(rng: np.random.Generator, gen: GeneratorConfig) -> WorldState:
    """Place `num_objects` objects on distinct cells and the agent on a free cell."""
    n_cells = gen.d * gen.d
    if gen.num_objects + 1 > n_cells:
        raise PlacementInfeasibleError(
            f"{gen.num_objects} objects + agent do not fit in {gen.d}x{gen.d} grid"
        )
    if not 2 <= gen.num_objects <= n_cells - 2:
        raise ValueError(f"num_objects must be in [2, {n_cells - 2}], got {gen.num_objects}")

    flat = rng.choice(n_cells, size=gen.num_objects + 1, replace=False)
    cells = {}
    for idx in flat[:-1]:
        pos = (int(idx) // gen.d, int(idx) % gen.d)
        cells[pos] = ObjectSpec(
            shape=SHAPES[rng.integers(len(SHAPES))],
            color=COLORS[rng.integers(len(COLORS))],
            size=int(rng.integers(1, 5)),
        )
    agent_idx = int(flat[-1])
    agent = AgentPose(
        row=agent_idx // gen.d,
        col=agent_idx % gen.d,
        heading=HEADINGS[rng.integers(len(HEADINGS))],
    )
    return WorldState(d=gen.d, cells=cells, agent=agent)
