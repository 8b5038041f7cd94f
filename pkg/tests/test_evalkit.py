"""Metrics, per-referent breakdowns, and the CSV report tables."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridseq.dataset import generate_examples
from gridseq.diffcore import Value
from gridseq.evalkit import (
    EvalResult,
    ExampleResult,
    RunRecord,
    SCATTER_COLUMNS,
    TABLE_COLUMNS,
    aggregate_rows,
    breakdown_by_referent,
    decode_cap,
    evaluate,
    exact_match,
    format_mean_std,
    read_results_csv,
    report,
    target_accuracy,
    write_breakdown_csv,
    write_results_csv,
)
from gridseq.gridworld import GeneratorConfig
from gridseq.model import ModelConfig, Seq2SeqModel, TargetScores
from oracles import group_stats

GEN = GeneratorConfig(d=4, num_objects=3)

ACTIONS_ALPHABET = st.lists(
    st.sampled_from(["walk", "turn left", "turn right"]), max_size=6
)


def result(referent, matched, correct=None):
    return ExampleResult(
        referent=referent,
        exact_match=matched,
        target_correct=correct,
        pred_actions=[],
        terminated=True,
    )


def test_decode_cap_formula():
    assert decode_cap(0) == 5
    assert decode_cap(4) == 13
    assert decode_cap(10) == 25


def test_exact_match_basics():
    assert exact_match(["walk"], ["walk"])
    assert not exact_match(["walk"], ["walk", "walk"])
    assert not exact_match(["turn left"], ["turn right"])
    assert exact_match([], [])


@settings(max_examples=60, deadline=None)
@given(a=ACTIONS_ALPHABET, b=ACTIONS_ALPHABET)
def test_exact_match_is_an_equivalence_check(a, b):
    assert exact_match(a, a)
    assert exact_match(a, b) == exact_match(b, a)
    assert exact_match(a, b) == (a == b)


def test_target_accuracy_accepts_scores_or_arrays():
    scores = TargetScores(Value(np.array([[0.1, 2.0, 0.3]])))
    assert target_accuracy(scores, 1)
    assert not target_accuracy(scores, 0)
    assert target_accuracy(np.array([[0.1, 2.0, 0.3]]), 1)
    # Equal scores resolve to the lowest index.
    assert target_accuracy(np.array([[1.0, 1.0]]), 0)
    assert not target_accuracy(np.array([[1.0, 1.0]]), 1)


def test_eval_result_aggregates():
    res = EvalResult(
        per_example=[
            result("red circle", True, True),
            result("red circle", False, False),
            result("square", True, True),
            result("square", True, False),
        ]
    )
    assert res.n == 4
    assert res.exact_match == pytest.approx(0.75)
    assert res.target_accuracy == pytest.approx(0.5)


def test_eval_result_target_accuracy_none_without_scores():
    res = EvalResult(per_example=[result("square", True, None)])
    assert res.target_accuracy is None


def test_evaluate_scores_a_real_model():
    examples = generate_examples("A", "test", 12, 3, GEN)
    model = Seq2SeqModel(
        ModelConfig(d=4, embed_dim=4, h_e=5, h_d=6, c_out=2, kernel_sizes=(1, 3, 3)),
        np.random.default_rng(0),
    )
    res = evaluate(model, examples)
    assert res.n == 12
    assert 0.0 <= res.exact_match <= 1.0
    assert res.target_accuracy is not None
    for r in res.per_example:
        if not r.terminated:
            assert not r.exact_match  # a cap hit can never count as a match
    with pytest.raises(ValueError):
        evaluate(model, [])


def test_aggregate_equals_count_weighted_breakdown():
    rng = np.random.default_rng(5)
    referents = ["circle", "red circle", "big square", "cylinder"]
    per_example = [
        result(referents[rng.integers(4)], bool(rng.integers(2))) for _ in range(200)
    ]
    res = EvalResult(per_example=per_example)
    rows = breakdown_by_referent(per_example)
    weighted = sum(count * mean for _, count, mean in rows) / sum(
        count for _, count, mean in rows
    )
    assert res.exact_match == pytest.approx(weighted)


def test_breakdown_matches_independent_group_by():
    per_example = [
        result("b", True),
        result("a", False),
        result("b", False),
        result("a", True),
        result("b", True),
    ]
    rows = breakdown_by_referent(per_example)
    want = group_stats((r.referent, r.exact_match) for r in per_example)
    assert [(ref, count) for ref, count, _ in rows] == [(r, c) for r, c, _ in want]
    for (_, _, got), (_, _, expected) in zip(rows, want):
        assert got == pytest.approx(expected)
    assert [ref for ref, _, _ in rows] == sorted(ref for ref, _, _ in rows)


def test_format_mean_std():
    assert format_mean_std([40.0, 60.0]) == "50.00 ± 10.00"
    assert format_mean_std([87.0]) == "87.00 ± 0.00"
    assert format_mean_std([1.0, 2.0, 3.0, 4.0]) == "2.50 ± 1.12"
    with pytest.raises(ValueError):
        format_mean_std([])


def records_fixture():
    return [
        RunRecord("A", "world", "on", 0, 80.0, 90.0),
        RunRecord("A", "world", "on", 1, 60.0, 70.0),
        RunRecord("B", "world", "on", 0, 40.0, 55.0),
        RunRecord("A", "baseline_no_aux", "ablated", 0, 30.0, None),
    ]


def test_results_csv_round_trip(tmp_path):
    path = write_results_csv(tmp_path / "results.csv", records_fixture())
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "split,variant,weighting,seed,exact_match,target_accuracy"
    assert len(lines) == 5
    assert lines[1].startswith("A,baseline_no_aux")  # sorted output
    back = read_results_csv(path)
    assert sorted(back, key=lambda r: (r.split, r.variant, r.seed)) == sorted(
        records_fixture(), key=lambda r: (r.split, r.variant, r.seed)
    )


def test_aggregate_rows_mean_std_cells():
    rows = aggregate_rows(records_fixture())
    by_key = {(r["split"], r["variant"]): r for r in rows}
    world_a = by_key[("A", "world")]
    assert world_a["n_seeds"] == "2"
    assert world_a["exact_match"] == "70.00 ± 10.00"
    assert world_a["target_accuracy"] == "80.00 ± 10.00"
    bare = by_key[("A", "baseline_no_aux")]
    assert bare["target_accuracy"] == ""


def test_report_writes_expected_schemas(tmp_path):
    paths = report(records_fixture(), tmp_path)
    table_header = paths["table"].read_text().split("\n")[0]
    scatter_header = paths["scatter"].read_text().split("\n")[0]
    assert table_header == ",".join(TABLE_COLUMNS)
    assert scatter_header == ",".join(SCATTER_COLUMNS)
    scatter_lines = paths["scatter"].read_text().strip().split("\n")[1:]
    # one row per (variant, split) pair present in the records
    assert len(scatter_lines) == 3


def test_report_is_a_pure_function_of_records(tmp_path):
    a = report(records_fixture(), tmp_path / "a")
    b = report(records_fixture(), tmp_path / "b")
    assert a["table"].read_bytes() == b["table"].read_bytes()
    assert a["scatter"].read_bytes() == b["scatter"].read_bytes()


def test_breakdown_csv_format(tmp_path):
    rows = [("red circle", 3, 2 / 3), ("square", 1, 1.0)]
    path = write_breakdown_csv(tmp_path / "breakdown.csv", rows)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "referent,count,exact_match"
    assert lines[1] == "red circle,3,0.6667"
    assert lines[2] == "square,1,1.0000"


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(["a", "b", "c"]), st.booleans()),
        min_size=1,
        max_size=30,
    )
)
def test_breakdown_invariants(pairs):
    per_example = [result(ref, matched) for ref, matched in pairs]
    rows = breakdown_by_referent(per_example)
    assert sum(count for _, count, _ in rows) == len(pairs)
    assert all(0.0 <= mean <= 1.0 for _, _, mean in rows)
    total = sum(count * mean for _, count, mean in rows) / len(pairs)
    assert total == pytest.approx(np.mean([m for _, m in pairs]))
