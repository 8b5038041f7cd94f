"""Command-line entry point: dataset generation/validation, training,
evaluation, gradient checking, report tables, and the micro-scale experiment.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset, diffcore, evalkit, trainer
from .dataset import SplitSizes, generate_examples, split_files, validate_split
from .diffcore import Value, grad_check
from .gridworld import GeneratorConfig
from .model import ModelConfig, Seq2SeqModel, gold_classes
from .profiles import PROFILES, VARIANT_PRESETS
from .trainer import TrainConfig

CONFIG_KEYS = ("cnn_dropout", "decoder_dropout", "encoder_dropout", "aux_weight")


def _read_overrides(config_path: str | None) -> dict:
    if config_path is None:
        return {}
    raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}; expected {CONFIG_KEYS}")
    return raw


def _default_weighting(variant: str, weighting: str | None) -> str:
    if weighting is not None:
        return weighting
    return "on" if variant in ("world", "both") else "ablated"


def _data_dimensions(examples: list[dataset.Example]) -> int:
    d = examples[0].world.d
    mismatched = [ex.world.d for ex in examples if ex.world.d != d]
    if mismatched:
        raise ValueError(f"mixed grid sizes in dataset: {d} vs {mismatched[0]}")
    return d


def _write_run_config(out_dir: Path, model_cfg: ModelConfig, train_cfg: TrainConfig, split: str):
    payload = {
        "model": dataclasses.asdict(model_cfg),
        "train": dataclasses.asdict(train_cfg),
        "split": split,
    }
    (out_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_run_config(checkpoint_stem: Path) -> tuple[ModelConfig, TrainConfig, str]:
    config_path = checkpoint_stem.parent / "config.json"
    payload = json.loads(config_path.read_text(encoding="utf-8"))
    model_raw = dict(payload["model"])
    model_raw["kernel_sizes"] = tuple(model_raw["kernel_sizes"])
    return ModelConfig(**model_raw), TrainConfig(**payload["train"]), payload.get("split", "")


# ---- subcommands ----


def cmd_generate(args) -> int:
    profile = PROFILES[args.profile]
    sizes = SplitSizes(
        n_train=args.n_train if args.n_train is not None else profile.n_train,
        n_dev=args.n_dev if args.n_dev is not None else profile.n_dev,
        n_test=args.n_test if args.n_test is not None else profile.n_test,
    )
    gen = GeneratorConfig(d=args.d or profile.d, num_objects=args.objects or profile.num_objects)
    paths = dataset.generate_split(
        args.split, sizes, args.seed, args.out, gen=gen, workers=args.workers
    )
    for phase in dataset.PHASES:
        print(f"{phase}: {paths[phase]} ({sizes.for_phase(phase)} examples)")
    print(f"vocab: {paths['vocab']}")
    return 0


def cmd_validate(args) -> int:
    report = validate_split(split_files(args.data), args.split)
    for line in report.summary_lines():
        print(line)
    failed = report.total_violations + report.total_parse_errors
    print(f"total: {report.total_violations} violations, {report.total_parse_errors} parse errors")
    return 1 if failed else 0


def cmd_train(args) -> int:
    data = Path(args.data)
    train_examples = dataset.load_examples(data / "train.jsonl")
    dev_examples = dataset.load_examples(data / "dev.jsonl")
    profile = PROFILES[args.profile]
    overrides = _read_overrides(args.config)
    weighting = _default_weighting(args.variant, args.weighting)
    preset = VARIANT_PRESETS[args.variant]
    model_cfg = ModelConfig(
        d=_data_dimensions(train_examples),
        embed_dim=profile.embed_dim,
        h_e=profile.h_e,
        h_d=profile.h_d,
        c_out=profile.c_out,
        variant=args.variant,
        weighting=weighting,
        aux_weight=overrides.get("aux_weight", preset.get("aux_weight", 0.0)),
        encoder_dropout=overrides.get("encoder_dropout", preset.get("encoder_dropout", 0.0)),
        decoder_dropout=overrides.get("decoder_dropout", preset.get("decoder_dropout", 0.0)),
        cnn_dropout=overrides.get("cnn_dropout", preset.get("cnn_dropout", 0.0)),
    )
    train_cfg = TrainConfig(
        iterations=args.iterations if args.iterations is not None else profile.iterations,
        batch_size=profile.batch_size,
        eval_every=args.eval_every if args.eval_every is not None else profile.eval_every,
        seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_config(out_dir, model_cfg, train_cfg, args.split or "")
    result = trainer.train(train_examples, dev_examples, model_cfg, train_cfg, out_dir)
    tacc = "" if result.best_dev_target_accuracy is None else f"{result.best_dev_target_accuracy:.4f}"
    print(
        f"best step {result.best_step}: dev exact match {result.best_dev_exact_match:.4f}"
        + (f", dev target accuracy {tacc}" if tacc else "")
    )
    print(f"checkpoint: {result.checkpoint_stem}.json / .bin")
    print(f"metrics: {result.metrics_path}")
    return 0


def _evaluate_checkpoint(
    checkpoint_stem: Path, examples: list[dataset.Example]
) -> tuple[evalkit.EvalResult, ModelConfig, TrainConfig, str]:
    model_cfg, train_cfg, split = _load_run_config(checkpoint_stem)
    arrays, _ = diffcore.load_checkpoint(checkpoint_stem)
    model = Seq2SeqModel(model_cfg, np.random.default_rng(0))
    model.load_state(arrays)
    return evalkit.evaluate(model, examples), model_cfg, train_cfg, split


def cmd_eval(args) -> int:
    examples = dataset.load_examples(Path(args.data) / f"{args.phase}.jsonl")
    result, model_cfg, train_cfg, stored_split = _evaluate_checkpoint(Path(args.checkpoint), examples)
    split = args.split or stored_split
    seed = args.seed if args.seed is not None else train_cfg.seed
    record = evalkit.RunRecord(
        split=split,
        variant=model_cfg.variant,
        weighting=model_cfg.weighting,
        seed=seed,
        exact_match=100.0 * result.exact_match,
        target_accuracy=None if result.target_accuracy is None else 100.0 * result.target_accuracy,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalkit.write_results_csv(out / "results.csv", [record])
    evalkit.write_breakdown_csv(
        out / "breakdown.csv", evalkit.breakdown_by_referent(result.per_example)
    )
    tacc = "" if result.target_accuracy is None else f", target accuracy {result.target_accuracy:.4f}"
    print(f"{split}/{args.phase}: exact match {result.exact_match:.4f}{tacc} over {result.n} examples")
    print(f"wrote {out / 'results.csv'} and {out / 'breakdown.csv'}")
    return 0


def cmd_report(args) -> int:
    records = []
    for path in args.results:
        records.extend(evalkit.read_results_csv(path))
    paths = evalkit.report(records, args.out)
    for row in evalkit.aggregate_rows(records):
        print(
            f"{row['split']:<4} {row['variant']:<16} {row['weighting']:<8} "
            f"em {row['exact_match']:<16} tacc {row['target_accuracy']}"
        )
    print(f"wrote {paths['table']} and {paths['scatter']}")
    return 0


# ---- gradient-check suite ----


def _primitive_checks(rng: np.random.Generator) -> dict[str, callable]:
    """Scalar-loss closures exercising every autodiff primitive."""
    a = Value(rng.normal(size=(3, 4)), name="a")
    b = Value(rng.normal(size=(3, 4)), name="b")
    m = Value(rng.normal(size=(4, 5)), name="m")
    r34 = rng.normal(size=(3, 4))
    r35 = rng.normal(size=(3, 5))
    table = Value(rng.normal(size=(6, 3)), name="table")
    img = Value(rng.normal(size=(5, 5, 3)), name="img")
    kern = Value(rng.normal(size=(3, 3, 3, 2)), name="kern")
    kbias = Value(rng.normal(size=(2,)), name="kbias")
    x1 = Value(rng.normal(size=(1, 3)), name="x1")
    h1 = Value(rng.normal(size=(1, 4)), name="h1")
    c1 = Value(rng.normal(size=(1, 4)), name="c1")
    w_lstm = Value(rng.normal(size=(7, 16)) * 0.4, name="w_lstm")
    b_lstm = Value(rng.normal(size=(16,)) * 0.4, name="b_lstm")
    logits = Value(rng.normal(size=(1, 5)), name="logits")
    lb = Value(rng.normal(size=(5,)), name="lb")
    seq = Value(rng.normal(size=(6, 3)), name="seq")
    q1 = Value(rng.normal(size=(1, 4)), name="q1")
    keys = Value(rng.normal(size=(6, 5)), name="keys")
    proj = Value(rng.normal(size=(6, 7)), name="proj")
    w_q = Value(rng.normal(size=(4, 7)), name="w_q")
    a_bias = Value(rng.normal(size=(7,)), name="a_bias")
    v_att = Value(rng.normal(size=(7, 1)), name="v_att")

    checks = {
        "add": (lambda: ((a + b).tanh() * r34).sum(), [a, b]),
        "mul": (lambda: ((a * b).tanh() * r34).sum(), [a, b]),
        "matmul": (lambda: ((a @ m).tanh() * r35).sum(), [a, m]),
        "concat": (lambda: (diffcore.concat([a, b], axis=1).tanh()).sum(), [a, b]),
        "slice": (lambda: (a[1:3, 0:2].tanh()).sum(), [a]),
        "transpose_reshape": (lambda: (a.T.reshape(2, 6).tanh()).sum(), [a]),
        "tanh": (lambda: (a.tanh() * r34).sum(), [a]),
        "sigmoid": (lambda: (a.sigmoid() * r34).sum(), [a]),
        "relu": (lambda: (a.relu() * r34).sum(), [a]),
        "softmax": (lambda: (diffcore.softmax(a, axis=1) * r34).sum(), [a]),
        "log_softmax": (lambda: (diffcore.log_softmax(a, axis=1) * r34).sum(), [a]),
        "embedding_lookup": (
            lambda: (diffcore.embedding_lookup(table, [0, 2, 1, 2]).tanh()).sum(),
            [table],
        ),
        "conv2d_same": (
            lambda: (diffcore.conv2d_same(img, kern, kbias).tanh()).sum(),
            [img, kern, kbias],
        ),
        "lstm_cell": (
            lambda: (diffcore.lstm_cell(x1, h1, c1, w_lstm, b_lstm).tanh()).sum(),
            [x1, h1, c1, w_lstm, b_lstm],
        ),
        "linear": (
            lambda: (diffcore.linear(a, m, lb).tanh() * r35).sum(),
            [a, m, lb],
        ),
        "lstm_sequence": (
            lambda: (diffcore.lstm_sequence(seq, w_lstm, b_lstm).tanh()).sum(),
            [seq, w_lstm, b_lstm],
        ),
        "lstm_sequence_reverse": (
            lambda: (diffcore.lstm_sequence(seq, w_lstm, b_lstm, reverse=True).tanh()).sum(),
            [seq, w_lstm, b_lstm],
        ),
        "additive_attention": (
            lambda: (
                diffcore.additive_attention(q1, keys, proj, w_q, a_bias, v_att).tanh()
            ).sum(),
            [q1, keys, proj, w_q, a_bias, v_att],
        ),
        "dropout": (
            lambda: (
                diffcore.dropout(a, 0.4, np.random.default_rng(11), True).tanh()
            ).sum(),
            [a],
        ),
        "cross_entropy": (lambda: diffcore.cross_entropy(logits, 2), [logits]),
    }
    return checks


def _full_model_check(variant: str, seed: int) -> tuple[callable, list[Value]]:
    rng = np.random.default_rng(seed)
    example = generate_examples("A_random", "train", 1, seed, GeneratorConfig(d=4, num_objects=3))[0]
    cfg = ModelConfig(
        d=4, embed_dim=5, h_e=7, h_d=8, c_out=4, kernel_sizes=(1, 3, 5),
        variant=variant, weighting="on", aux_weight=0.4,
    )
    model = Seq2SeqModel(cfg, rng)

    def f():
        logits, scores = model.full_forward(example, mode="train", rng=None)
        return trainer.total_loss(
            logits, gold_classes(example.actions), scores, example.target_cell, cfg.aux_weight
        )

    return f, list(model.params.values())


def gradcheck_suite(eps: float = 1e-5, coords: int = 60, seed: int = 0) -> dict[str, float]:
    """Max relative error per check: every primitive plus both full-model losses."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, (f, params) in _primitive_checks(rng).items():
        results[name] = grad_check(f, params, eps=eps, coords=coords, rng=rng).max_rel_err
    for variant in ("world", "both"):
        f, params = _full_model_check(variant, seed)
        results[f"full_model_{variant}"] = grad_check(
            f, params, eps=eps, coords=coords, rng=rng
        ).max_rel_err
    return results


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(eps=args.eps, coords=args.coords, seed=args.seed)
    for name, err in results.items():
        print(f"{name:<22} max relative error {err:.3e}")
    worst = max(results.values())
    print(f"overall max relative error {worst:.3e}")
    if worst < 1e-3:
        return 0
    print("FAIL: exceeds 1e-3", file=sys.stderr)
    return 1


def cmd_repro_micro(args) -> int:
    profile = PROFILES["micro"]
    out = Path(args.out)
    records: list[evalkit.RunRecord] = []
    for split in args.splits:
        data_dir = out / "data" / split
        if not (data_dir / "train.jsonl").exists():
            dataset.generate_split(
                split, profile.sizes, args.seed, data_dir,
                gen=profile.generator, workers=args.workers,
            )
        train_examples = dataset.load_examples(data_dir / "train.jsonl")
        dev_examples = dataset.load_examples(data_dir / "dev.jsonl")
        test_examples = dataset.load_examples(data_dir / "test.jsonl")
        for variant in args.variants:
            weighting = _default_weighting(variant, None)
            for seed in args.seeds:
                run_dir = out / "runs" / f"{split}_{variant}_s{seed}"
                model_cfg = profile.model_config(variant=variant, weighting=weighting)
                train_cfg = profile.train_config(seed=seed, iterations=args.iterations)
                run_dir.mkdir(parents=True, exist_ok=True)
                _write_run_config(run_dir, model_cfg, train_cfg, split)
                result = trainer.train(train_examples, dev_examples, model_cfg, train_cfg, run_dir)
                test_result = evalkit.evaluate(result.model, test_examples)
                evalkit.write_breakdown_csv(
                    run_dir / "breakdown.csv",
                    evalkit.breakdown_by_referent(test_result.per_example),
                )
                record = evalkit.RunRecord(
                    split=split,
                    variant=variant,
                    weighting=weighting,
                    seed=seed,
                    exact_match=100.0 * test_result.exact_match,
                    target_accuracy=None
                    if test_result.target_accuracy is None
                    else 100.0 * test_result.target_accuracy,
                )
                records.append(record)
                tacc = "" if record.target_accuracy is None else f" tacc {record.target_accuracy:.2f}"
                print(f"{split} {variant} seed {seed}: em {record.exact_match:.2f}{tacc}")
    evalkit.write_results_csv(out / "results.csv", records)
    evalkit.report(records, out)
    print(f"wrote {out / 'results.csv'}, {out / 'table.csv'}, {out / 'scatter.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridseq",
        description="Grid-world instruction following: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate train/dev/test JSONL for one split")
    p.add_argument("--split", required=True, help="A, B, C, or E (or the full split name)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES), default="micro")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-dev", type=int, default=None)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--d", type=int, default=None, help="grid side length override")
    p.add_argument("--objects", type=int, default=None, help="objects per world override")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="re-check every record of a generated split")
    p.add_argument("data", help="directory holding train/dev/test JSONL files")
    p.add_argument("--split", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train one model on a generated split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="world",
                   choices=("baseline_no_aux", "baseline_aux", "world", "both"))
    p.add_argument("--weighting", choices=("on", "ablated"), default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", choices=sorted(PROFILES), default="micro")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--config", default=None,
                   help="JSON with cnn_dropout/decoder_dropout/encoder_dropout/aux_weight")
    p.add_argument("--split", default=None, help="split label stored with the run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split phase")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint stem (without .json/.bin)")
    p.add_argument("--out", required=True)
    p.add_argument("--phase", choices=("train", "dev", "test"), default="test")
    p.add_argument("--split", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and the full model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="aggregate per-seed results into the comparison tables")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("repro-micro", help="end-to-end micro experiment across splits and variants")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="dataset generation seed")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="training seeds")
    p.add_argument("--splits", nargs="+", default=["A", "B", "C", "E"])
    p.add_argument(
        "--variants", nargs="+",
        default=["baseline_no_aux", "baseline_aux", "world", "both"],
        choices=("baseline_no_aux", "baseline_aux", "world", "both"),
    )
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_repro_micro)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
