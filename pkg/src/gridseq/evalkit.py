"""Evaluation: exact match, target-cell accuracy, per-referent breakdowns,
and the CSV report tables (per-seed results, aggregated means, scatter data).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Example

# Greedy decoding stops after 2*len(gold)+5 steps; hitting the cap without
# emitting EOS counts as a non-match.
DECODE_CAP_FACTOR = 2
DECODE_CAP_SLACK = 5


def decode_cap(gold_len: int) -> int:
    return DECODE_CAP_FACTOR * gold_len + DECODE_CAP_SLACK


def exact_match(pred_actions: list[str], gold_actions: list[str]) -> bool:
    """Token-for-token equality of two EOS-terminated action sequences."""
    return list(pred_actions) == list(gold_actions)


def target_accuracy(scores, target_cell: int) -> bool:
    """argmax(scores) == target_cell; ties resolve to the lowest index."""
    arr = scores.scores.data if hasattr(scores, "scores") else np.asarray(scores)
    return int(np.argmax(arr)) == int(target_cell)


@dataclass
class ExampleResult:
    referent: str
    exact_match: bool
    target_correct: bool | None
    pred_actions: list[str]
    terminated: bool


@dataclass
class EvalResult:
    per_example: list[ExampleResult]

    @property
    def n(self) -> int:
        return len(self.per_example)

    @property
    def exact_match(self) -> float:
        return float(np.mean([r.exact_match for r in self.per_example]))

    @property
    def target_accuracy(self) -> float | None:
        flags = [r.target_correct for r in self.per_example if r.target_correct is not None]
        if not flags:
            return None
        return float(np.mean(flags))


def evaluate(model, examples: list[Example]) -> EvalResult:
    """Greedy-decode every example and score it (dropout off)."""
    if not examples:
        raise ValueError("no examples to evaluate")
    per_example = []
    for ex in examples:
        decode = model.greedy_decode(ex, decode_cap(len(ex.actions)))
        matched = decode.terminated and exact_match(decode.actions, ex.actions)
        correct = (
            target_accuracy(decode.scores, ex.target_cell) if decode.scores is not None else None
        )
        per_example.append(
            ExampleResult(
                referent=ex.referent,
                exact_match=matched,
                target_correct=correct,
                pred_actions=decode.actions,
                terminated=decode.terminated,
            )
        )
    return EvalResult(per_example=per_example)


def breakdown_by_referent(results: list[ExampleResult]) -> list[tuple[str, int, float]]:
    """(referent_class, count, mean exact match) rows, sorted lexicographically."""
    groups: dict[str, list[bool]] = {}
    for r in results:
        groups.setdefault(r.referent, []).append(r.exact_match)
    return [
        (referent, len(flags), float(np.mean(flags))) for referent, flags in sorted(groups.items())
    ]


def format_mean_std(values: list[float]) -> str:
    """Mean and population standard deviation as "m ± s" with two decimals."""
    if not values:
        raise ValueError("cannot aggregate an empty cell")
    arr = np.asarray(values, dtype=float)
    return f"{arr.mean():.2f} ± {arr.std():.2f}"


@dataclass(frozen=True)
class RunRecord:
    """One evaluated (split, variant, weighting, seed) run; metrics in percent."""

    split: str
    variant: str
    weighting: str
    seed: int
    exact_match: float
    target_accuracy: float | None


def _pct(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def write_results_csv(path: str | Path, records: list[RunRecord]) -> Path:
    path = Path(path)
    ordered = sorted(records, key=lambda r: (r.split, r.variant, r.weighting, r.seed))
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "variant", "weighting", "seed", "exact_match", "target_accuracy"])
        for r in ordered:
            writer.writerow(
                [r.split, r.variant, r.weighting, str(r.seed), _pct(r.exact_match), _pct(r.target_accuracy)]
            )
    return path


def read_results_csv(path: str | Path) -> list[RunRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                RunRecord(
                    split=row["split"],
                    variant=row["variant"],
                    weighting=row["weighting"],
                    seed=int(row["seed"]),
                    exact_match=float(row["exact_match"]),
                    target_accuracy=float(row["target_accuracy"]) if row["target_accuracy"] else None,
                )
            )
    return records


def aggregate_rows(records: list[RunRecord]) -> list[dict[str, str]]:
    """Group runs over seeds into "m ± s" cells, one row per (split, variant, weighting)."""
    groups: dict[tuple[str, str, str], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.split, r.variant, r.weighting), []).append(r)
    rows = []
    for (split, variant, weighting), group in sorted(groups.items()):
        accs = [g.target_accuracy for g in group if g.target_accuracy is not None]
        rows.append(
            {
                "split": split,
                "variant": variant,
                "weighting": weighting,
                "n_seeds": str(len(group)),
                "exact_match": format_mean_std([g.exact_match for g in group]),
                "target_accuracy": format_mean_std(accs) if accs else "",
            }
        )
    return rows


TABLE_COLUMNS = ["split", "variant", "weighting", "n_seeds", "exact_match", "target_accuracy"]
SCATTER_COLUMNS = ["variant", "split", "exact_match", "target_accuracy"]


def write_table_csv(path: str | Path, records: list[RunRecord]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        writer.writerows(aggregate_rows(records))
    return path


def write_scatter_csv(path: str | Path, records: list[RunRecord]) -> Path:
    """Mean exact match vs mean target accuracy, one row per (variant, split)."""
    path = Path(path)
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for r in records:
        groups.setdefault((r.variant, r.split), []).append(r)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCATTER_COLUMNS)
        for (variant, split), group in sorted(groups.items()):
            ems = [g.exact_match for g in group]
            accs = [g.target_accuracy for g in group if g.target_accuracy is not None]
            writer.writerow(
                [
                    variant,
                    split,
                    f"{np.mean(ems):.4f}",
                    f"{np.mean(accs):.4f}" if accs else "",
                ]
            )
    return path


def write_breakdown_csv(path: str | Path, rows: list[tuple[str, int, float]]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["referent", "count", "exact_match"])
        for referent, count, mean in rows:
            writer.writerow([referent, str(count), f"{mean:.4f}"])
    return path


def report(records: list[RunRecord], out_dir: str | Path) -> dict[str, Path]:
    """Write the aggregated table and the scatter data; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "table": write_table_csv(out / "table.csv", records),
        "scatter": write_scatter_csv(out / "scatter.csv", records),
    }
