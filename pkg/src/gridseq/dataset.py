"""Dataset generation and validation for the compositional splits.

Splits: A (random), B (yellow squares: never color-referenced in training,
always color-referenced at test), C (red squares: never targets in training,
always targets at test), E (relativity: size-2 circles never called "small"
in training, called "small" next to a larger circle at test).

Examples are rejection-sampled (world, command) pairs written as JSONL, one
record per line. Dev files follow the train-phase constraints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import planner
from .gridworld import GeneratorConfig, WorldState, sample_world
from .language import (
    Command,
    UnsatisfiableConstraintsError,
    Vocabulary,
    referent_class,
    resolve_referent,
    sample_command,
)

SPLIT_KINDS = ("A_random", "B_yellow_squares", "C_red_squares", "E_relativity")
PHASES = ("train", "dev", "test")

# Stall detection: the generator aborts if acceptance over a window of
# attempts stays below 0.1% (a contradictory constraint configuration).
STALL_WINDOW = 10_000
STALL_MIN_ACCEPTED = 10

_GENERATOR_COMMAND_ATTEMPTS = 200


class GenerationStalledError(RuntimeError):
    """Rejection rate exceeded 99.9% over a full window of attempts."""


def normalize_kind(kind: str) -> str:
    """Accept either a full split name or its single-letter alias (any case)."""
    if kind in SPLIT_KINDS:
        return kind
    by_letter = {k[0]: k for k in SPLIT_KINDS}
    if kind.upper() in by_letter:
        return by_letter[kind.upper()]
    raise ValueError(f"unknown split {kind!r}; expected one of {SPLIT_KINDS}")


def kind_letter(kind: str) -> str:
    return normalize_kind(kind)[0]


@dataclass(frozen=True)
class SplitConstraints:
    kind: str
    phase: str

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")

    @property
    def train_like(self) -> bool:
        # Dev is distributionally a slice of the training regime.
        return self.phase in ("train", "dev")

    def generation_ok(self, cmd: Command, target_cell: tuple[int, int], world: WorldState) -> bool:
        obj = world.cells[target_cell]
        letter = self.kind[0]
        if letter == "A":
            return True
        if letter == "B":
            yellow_square = obj.shape == "square" and obj.color == "yellow"
            if self.train_like:
                return not (yellow_square and cmd.color_word is not None)
            return yellow_square and cmd.color_word == "yellow"
        if letter == "C":
            red_square = obj.shape == "square" and obj.color == "red"
            return (not red_square) if self.train_like else red_square
        # E: relativity of "small" for size-2 circles.
        small_two_circle = (
            cmd.size_word == "small" and obj.shape == "circle" and obj.size == 2
        )
        if self.train_like:
            return not small_two_circle
        return small_two_circle and _has_larger_circle(world, 2)


def _has_larger_circle(world: WorldState, size: int) -> bool:
    return any(o.shape == "circle" and o.size > size for o in world.cells.values())


def _world_feasible(world: WorldState, constraints: SplitConstraints) -> bool:
    """Cheap necessary conditions, to skip hopeless worlds before sampling commands."""
    letter = constraints.kind[0]
    objs = world.cells.values()
    if constraints.train_like:
        if letter == "C":
            return any(not (o.shape == "square" and o.color == "red") for o in objs)
        return True
    if letter == "B":
        return any(o.shape == "square" and o.color == "yellow" for o in objs)
    if letter == "C":
        return any(o.shape == "square" and o.color == "red" for o in objs)
    if letter == "E":
        return any(o.shape == "circle" and o.size == 2 for o in objs) and _has_larger_circle(world, 2)
    return True


@dataclass
class Example:
    command: list[str]
    world: WorldState
    target_cell: int
    actions: list[str]
    referent: str

    def to_json_line(self) -> str:
        record = {
            "command": self.command,
            "world": self.world.to_json_dict(),
            "target": self.target_cell,
            "actions": self.actions,
            "referent": self.referent,
        }
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "Example":
        record = json.loads(line)
        return cls(
            command=list(record["command"]),
            world=WorldState.from_json_dict(record["world"]),
            target_cell=int(record["target"]),
            actions=list(record["actions"]),
            referent=str(record["referent"]),
        )


@dataclass(frozen=True)
class SplitSizes:
    n_train: int
    n_dev: int
    n_test: int

    def for_phase(self, phase: str) -> int:
        return {"train": self.n_train, "dev": self.n_dev, "test": self.n_test}[phase]


def generate_examples(
    kind: str,
    phase: str,
    n: int,
    seed: int,
    gen: GeneratorConfig = GeneratorConfig(),
) -> list[Example]:
    """Rejection-sample `n` examples satisfying the split/phase constraints."""
    constraints = SplitConstraints(kind, phase)
    rng = np.random.default_rng(seed)
    examples: list[Example] = []
    window_attempts = 0
    window_accepted = 0
    while len(examples) < n:
        window_attempts += 1
        if window_attempts >= STALL_WINDOW:
            if window_accepted < STALL_MIN_ACCEPTED:
                raise GenerationStalledError(
                    f"{constraints.kind}/{phase}: {window_accepted} accepted in "
                    f"{window_attempts} attempts"
                )
            window_attempts = 0
            window_accepted = 0
        world = sample_world(rng, gen)
        if not _world_feasible(world, constraints):
            continue
        try:
            cmd = sample_command(
                rng,
                world,
                allowed=lambda c, cell: constraints.generation_ok(c, cell, world),
                attempts=_GENERATOR_COMMAND_ATTEMPTS,
            )
        except UnsatisfiableConstraintsError:
            continue
        cell = resolve_referent(cmd, world)
        examples.append(
            Example(
                command=cmd.words(),
                world=world,
                target_cell=world.flat_index(cell),
                actions=planner.plan(world, cell),
                referent=referent_class(cmd),
            )
        )
        window_accepted += 1
    return examples


# Examples per logical shard. Shards are a property of (seed, phase, n), not
# of the worker count, so the written bytes are identical for any --workers.
_SHARD_SIZE = 512


def _shard_counts(n: int, shards: int) -> list[int]:
    base, extra = divmod(n, shards)
    return [base + (1 if i < extra else 0) for i in range(shards)]


def _shard_seed(seed: int, phase: str, shard: int) -> int:
    # Documented derivation: base seed, a fixed stride per phase, plus the
    # shard index, so shards and phases draw independent streams.
    return seed + 100_000 * PHASES.index(phase) + shard


def _generate_shard(args: tuple) -> list[str]:
    kind, phase, count, shard_seed, gen = args
    return [ex.to_json_line() for ex in generate_examples(kind, phase, count, shard_seed, gen)]


def generate_split(
    kind: str,
    sizes: SplitSizes,
    seed: int,
    out_dir: str | Path,
    gen: GeneratorConfig = GeneratorConfig(),
    workers: int = 1,
) -> dict[str, Path]:
    """Write train/dev/test JSONL files (plus vocab.json) for one split.

    Shards are generated with derived seeds and concatenated in worker order,
    so the output bytes do not depend on the degree of parallelism.
    """
    kind = normalize_kind(kind)
    for phase in PHASES:
        if sizes.for_phase(phase) < 1:
            raise ValueError(f"{phase} size must be >= 1, got {sizes.for_phase(phase)}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for phase in PHASES:
        n = sizes.for_phase(phase)
        n_shards = -(-n // _SHARD_SIZE)
        counts = _shard_counts(n, n_shards)
        jobs = [
            (kind, phase, count, _shard_seed(seed, phase, shard), gen)
            for shard, count in enumerate(counts)
        ]
        if workers > 1 and len(jobs) > 1:
            import multiprocessing

            with multiprocessing.Pool(processes=min(workers, len(jobs))) as pool:
                shards = pool.map(_generate_shard, jobs)
        else:
            shards = [_generate_shard(job) for job in jobs]
        path = out / f"{phase}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for shard in shards:
                for line in shard:
                    fh.write(line + "\n")
        paths[phase] = path

    vocab_path = out / "vocab.json"
    vocab_path.write_text(json.dumps(Vocabulary().to_json_list()), encoding="utf-8")
    paths["vocab"] = vocab_path
    return paths


@dataclass
class PhaseReport:
    phase: str
    path: Path
    n_records: int = 0
    violations: list[tuple[int, str]] = None
    parse_errors: list[tuple[int, str]] = None
    warnings: list[str] = None

    def __post_init__(self):
        self.violations = self.violations or []
        self.parse_errors = self.parse_errors or []
        self.warnings = self.warnings or []


@dataclass
class ValidationReport:
    kind: str
    phases: dict[str, PhaseReport]

    @property
    def total_violations(self) -> int:
        return sum(len(p.violations) for p in self.phases.values())

    @property
    def total_parse_errors(self) -> int:
        return sum(len(p.parse_errors) for p in self.phases.values())

    def summary_lines(self) -> list[str]:
        lines = []
        for phase in PHASES:
            if phase not in self.phases:
                continue
            rep = self.phases[phase]
            lines.append(
                f"{self.kind}/{phase}: {rep.n_records} records, "
                f"{len(rep.violations)} violations, {len(rep.parse_errors)} parse errors"
            )
            for line_no, msg in rep.violations[:20]:
                lines.append(f"  line {line_no}: {msg}")
            for line_no, msg in rep.parse_errors[:20]:
                lines.append(f"  line {line_no}: parse error: {msg}")
            for warning in rep.warnings:
                lines.append(f"  warning: {warning}")
        return lines


def _constraint_violation(
    kind: str, phase: str, cmd: Command, world: WorldState, target_cell: tuple[int, int]
) -> str | None:
    """Split-constraint check, written out independently of the generator."""
    obj = world.cells[target_cell]
    letter = kind[0]
    train_like = phase in ("train", "dev")
    if letter == "A":
        return None
    if letter == "B":
        is_yellow_square = obj.shape == "square" and obj.color == "yellow"
        if train_like:
            if is_yellow_square and cmd.color_word is not None:
                return "yellow-square target referenced with a color word in training"
            return None
        if not is_yellow_square:
            return "test target is not a yellow square"
        if "yellow" not in cmd.words():
            return "test command does not mention yellow"
        return None
    if letter == "C":
        is_red_square = obj.shape == "square" and obj.color == "red"
        if train_like:
            return "red-square target in training" if is_red_square else None
        return None if is_red_square else "test target is not a red square"
    # E
    if train_like:
        if cmd.size_word == "small" and obj.shape == "circle" and obj.size == 2:
            return "size-2 circle called small in training"
        return None
    if not (obj.shape == "circle" and obj.size == 2):
        return "test target is not a size-2 circle"
    if cmd.size_word != "small":
        return "test command does not call the target small"
    if not any(o.shape == "circle" and o.size > 2 for o in world.cells.values()):
        return "no strictly larger circle in the test world"
    return None


def _record_violation(kind: str, phase: str, example: Example) -> str | None:
    world = example.world
    try:
        cmd = Command.from_words(example.command)
    except ValueError as exc:
        return f"malformed command: {exc}"
    agent_cell = (world.agent.row, world.agent.col)
    if agent_cell in world.cells:
        return "agent starts on an object cell"
    try:
        cell = resolve_referent(cmd, world)
    except Exception as exc:
        return f"command does not resolve: {exc}"
    if world.flat_index(cell) != example.target_cell:
        return (
            f"stored target {example.target_cell} != resolved "
            f"{world.flat_index(cell)}"
        )
    if planner.plan(world, cell) != example.actions:
        return "stored actions differ from the canonical plan"
    if referent_class(cmd) != example.referent:
        return f"stored referent {example.referent!r} != {referent_class(cmd)!r}"
    return _constraint_violation(kind, phase, cmd, world, cell)


def validate_split(files: dict[str, str | Path], kind: str) -> ValidationReport:
    """Re-check every record in the given phase files; zero violations expected."""
    kind = normalize_kind(kind)
    phases: dict[str, PhaseReport] = {}
    for phase, path in files.items():
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        path = Path(path)
        report = PhaseReport(phase=phase, path=path)
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    report.parse_errors.append((line_no, "empty line"))
                    continue
                try:
                    example = Example.from_json_line(line)
                except Exception as exc:
                    report.parse_errors.append((line_no, str(exc)))
                    continue
                report.n_records += 1
                reason = _record_violation(kind, phase, example)
                if reason is not None:
                    report.violations.append((line_no, reason))
        if report.n_records == 0:
            report.warnings.append("no records")
        phases[phase] = report
    return ValidationReport(kind=kind, phases=phases)


def split_files(data_dir: str | Path) -> dict[str, Path]:
    """Phase-to-path map for the JSONL files present under a split directory."""
    data_dir = Path(data_dir)
    found = {}
    for phase in PHASES:
        path = data_dir / f"{phase}.jsonl"
        if path.exists():
            found[phase] = path
    if not found:
        raise FileNotFoundError(f"no train/dev/test JSONL files in {data_dir}")
    return found


def load_examples(path: str | Path) -> list[Example]:
    with Path(path).open("r", encoding="utf-8") as fh:
        return [Example.from_json_line(line) for line in fh if line.strip()]


def target_histogram(examples: list[Example], d: int) -> np.ndarray:
    counts = np.zeros(d * d, dtype=int)
    for ex in examples:
        counts[ex.target_cell] += 1
    return counts


def chi_square_stat(counts_a: np.ndarray, counts_b: np.ndarray) -> tuple[float, int]:
    """Two-sample chi-square statistic and degrees of freedom.

    Cells empty in both samples are dropped. Intended as a non-blocking
    sanity signal that two target-cell marginals agree up to sampling noise.
    """
    counts_a = np.asarray(counts_a, dtype=float)
    counts_b = np.asarray(counts_b, dtype=float)
    totals = counts_a + counts_b
    keep = totals > 0
    counts_a, counts_b, totals = counts_a[keep], counts_b[keep], totals[keep]
    n_a, n_b = counts_a.sum(), counts_b.sum()
    grand = n_a + n_b
    stat = 0.0
    for obs, n in ((counts_a, n_a), (counts_b, n_b)):
        expected = totals * (n / grand)
        stat += float(np.sum((obs - expected) ** 2 / expected))
    df = int(keep.sum()) - 1
    return stat, df
