"""Training loop: combined sequence + target-cell loss, Adam, seeded runs,
checkpoints selected by dev exact match, and a small hyperparameter grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evalkit
from .dataset import Example
from .diffcore import Value, cross_entropy, save_checkpoint
from .model import ModelConfig, Seq2SeqModel, TargetScores, gold_classes


class NaNLossError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError(f"iterations must be > 0, got {self.iterations}")
        if self.batch_size <= 0:
            raise ValueError(f"batch_size must be > 0, got {self.batch_size}")
        if self.eval_every <= 0:
            raise ValueError(f"eval_every must be > 0, got {self.eval_every}")


def loss_parts(
    seq_logits: list[Value],
    gold: list[int],
    scores: TargetScores | None,
    target_cell: int,
    aux_weight: float,
) -> tuple[Value, Value, Value | None]:
    """(total, sequence, auxiliary) losses for one teacher-forced example.

    total = (1-w) * mean per-token cross-entropy + w * target cross-entropy;
    without scores (or with w=0) it reduces to the sequence loss alone.
    """
    if len(seq_logits) != len(gold):
        raise ValueError(f"{len(seq_logits)} logit rows for {len(gold)} gold tokens")
    if not gold:
        raise ValueError("empty gold sequence")
    seq_loss = cross_entropy(seq_logits[0], gold[0])
    for logits, cls in zip(seq_logits[1:], gold[1:]):
        seq_loss = seq_loss + cross_entropy(logits, cls)
    seq_loss = seq_loss * (1.0 / len(gold))
    if scores is None or aux_weight == 0.0:
        return seq_loss, seq_loss, None
    aux_loss = cross_entropy(scores.scores, target_cell)
    total = seq_loss * (1.0 - aux_weight) + aux_loss * aux_weight
    return total, seq_loss, aux_loss


def total_loss(
    seq_logits: list[Value],
    gold: list[int],
    scores: TargetScores | None,
    target_cell: int,
    aux_weight: float,
) -> Value:
    return loss_parts(seq_logits, gold, scores, target_cell, aux_weight)[0]


class Adam:
    def __init__(
        self,
        params: dict[str, Value],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        bias1 = 1.0 - self.beta1**self.t
        bias2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


@dataclass
class TrainResult:
    best_step: int
    best_dev_exact_match: float
    best_dev_target_accuracy: float | None
    final_loss: float
    checkpoint_stem: Path | None
    metrics_path: Path | None
    model: Seq2SeqModel


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def train(
    train_examples: list[Example],
    dev_examples: list[Example],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Run one seeded training job; returns the model restored to its best step.

    The seed drives three independent streams (parameter init, batch sampling,
    dropout), so identical inputs reproduce identical parameters bit-for-bit.
    """
    if not train_examples:
        raise ValueError("no training examples")
    if not dev_examples:
        raise ValueError("no dev examples")
    streams = np.random.SeedSequence(train_config.seed).spawn(3)
    init_rng, batch_rng, dropout_rng = (np.random.default_rng(s) for s in streams)
    model = Seq2SeqModel(model_config, init_rng)
    opt = Adam(
        model.params,
        learning_rate=train_config.learning_rate,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.adam_eps,
    )

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows: list[list[str]] = []
    best_state = model.state_arrays()
    best_step = 0
    best_em = -1.0
    best_tacc: float | None = None
    n = len(train_examples)
    replace_draw = train_config.batch_size > n
    loss_value = float("nan")

    for step in range(1, train_config.iterations + 1):
        picks = batch_rng.choice(n, size=train_config.batch_size, replace=replace_draw)
        model.zero_grads()
        loss_sum = seq_sum = aux_sum = 0.0
        aux_seen = False
        for idx in picks:
            ex = train_examples[int(idx)]
            logits, scores = model.full_forward(ex, mode="train", rng=dropout_rng)
            total, seq_l, aux_l = loss_parts(
                logits, gold_classes(ex.actions), scores, ex.target_cell, model_config.aux_weight
            )
            if not np.isfinite(total.data):
                raise NaNLossError(f"non-finite loss at iteration {step}")
            total.backward()
            loss_sum += float(total.data)
            seq_sum += float(seq_l.data)
            if aux_l is not None:
                aux_sum += float(aux_l.data)
                aux_seen = True
        inv_b = 1.0 / train_config.batch_size
        for p in model.params.values():
            if p.grad is not None:
                p.grad = p.grad * inv_b
        opt.step()

        loss_value = loss_sum * inv_b
        seq_value = seq_sum * inv_b
        aux_value = aux_sum * inv_b if aux_seen else None
        dev_em: float | None = None
        dev_tacc: float | None = None
        if step % train_config.eval_every == 0 or step == train_config.iterations:
            dev_result = evalkit.evaluate(model, dev_examples)
            dev_em = dev_result.exact_match
            dev_tacc = dev_result.target_accuracy
            if dev_em > best_em:
                best_em = dev_em
                best_tacc = dev_tacc
                best_step = step
                best_state = model.state_arrays()
        rows.append(
            [str(step), _fmt(loss_value), _fmt(seq_value), _fmt(aux_value), _fmt(dev_em), _fmt(dev_tacc)]
        )

    model.load_state(best_state)
    checkpoint_stem = None
    metrics_path = None
    if out is not None:
        checkpoint_stem = out / "best"
        save_checkpoint(checkpoint_stem, model.params, best_step)
        metrics_path = out / "metrics.csv"
        with metrics_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "seq_loss", "aux_loss", "dev_exact_match", "dev_target_acc"])
            writer.writerows(rows)
    return TrainResult(
        best_step=best_step,
        best_dev_exact_match=max(best_em, 0.0),
        best_dev_target_accuracy=best_tacc,
        final_loss=loss_value,
        checkpoint_stem=checkpoint_stem,
        metrics_path=metrics_path,
        model=model,
    )


@dataclass
class GridResult:
    best_index: int
    dev_exact_match: list[float]
    results: list[TrainResult]


def hyper_grid(
    train_examples: list[Example],
    dev_examples: list[Example],
    settings: list[tuple[ModelConfig, TrainConfig]],
    out_dir: str | Path | None = None,
) -> GridResult:
    """Train every setting; the winner is the argmax of dev exact match,
    ties broken by the lower setting index."""
    if not settings:
        raise ValueError("hyper_grid needs at least one setting")
    for i, (model_cfg, _) in enumerate(settings):
        if model_cfg.variant != "baseline_no_aux" and not 0.3 <= model_cfg.aux_weight <= 0.7:
            raise ValueError(
                f"setting {i}: aux_weight {model_cfg.aux_weight} outside the grid range [0.3, 0.7]"
            )
    results = []
    for i, (model_cfg, train_cfg) in enumerate(settings):
        run_dir = Path(out_dir) / f"setting_{i}" if out_dir is not None else None
        results.append(train(train_examples, dev_examples, model_cfg, train_cfg, run_dir))
    scores = [r.best_dev_exact_match for r in results]
    best_index = int(np.argmax(scores))
    return GridResult(best_index=best_index, dev_exact_match=scores, results=results)
