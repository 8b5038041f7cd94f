"""Multi-modal seq2seq network for grid-world instruction following.

A biLSTM encodes the command, a three-kernel CNN encodes the world into one
feature row per cell, and an LSTM decoder with additive attention over both
modalities emits actions. Target-cell heads score every cell: "world" attends
from the final command state over cells, "both" first attends from the world
onto the command and back, "baseline_aux" sums the decoder's world-attention
weights after decoding, and "baseline_no_aux" has no head. With weighting on,
each world-feature row is scaled by its log-softmax target score before the
decoder attends over it, so decoding sees target-aware features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import planner
from .diffcore import (
    Parameter,
    Value,
    additive_attention,
    concat,
    conv2d_same,
    dropout,
    embedding_lookup,
    linear,
    log_softmax,
    lstm_cell,
    lstm_sequence,
    softmax,
    uniform_init,
)
from .gridworld import N_CHANNELS, encode_world
from .language import DEFAULT_VOCAB, EOS_TOKEN, SOS_TOKEN

VARIANTS = ("baseline_no_aux", "baseline_aux", "world", "both")
WEIGHTINGS = ("on", "ablated")

# Decoder output classes, in logit order; inputs prepend the start token.
OUTPUT_CLASSES = (planner.WALK, planner.L_TURN, planner.R_TURN, EOS_TOKEN)
EOS_CLASS = OUTPUT_CLASSES.index(EOS_TOKEN)
DECODER_INPUT_TOKENS = (SOS_TOKEN,) + OUTPUT_CLASSES
_ACTION_CLASS = {action: i for i, action in enumerate(OUTPUT_CLASSES[:-1])}


def action_to_class(action: str) -> int:
    if action not in _ACTION_CLASS:
        raise ValueError(f"unknown action {action!r}; expected one of {OUTPUT_CLASSES[:-1]}")
    return _ACTION_CLASS[action]


def gold_classes(actions: list[str]) -> list[int]:
    """Teacher-forcing targets: one class per action plus the final EOS."""
    return [action_to_class(a) for a in actions] + [EOS_CLASS]


@dataclass(frozen=True)
class ModelConfig:
    d: int = 6
    vocab_size: int = len(DEFAULT_VOCAB)
    embed_dim: int = 25
    h_e: int = 100
    h_d: int = 100
    c_out: int = 50
    kernel_sizes: tuple[int, int, int] = (1, 5, 7)
    encoder_dropout: float = 0.0
    decoder_dropout: float = 0.0
    cnn_dropout: float = 0.0
    variant: str = "world"
    weighting: str = "on"
    aux_weight: float = 0.3
    n_channels: int = N_CHANNELS

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant {self.variant!r} not in {VARIANTS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting {self.weighting!r} not in {WEIGHTINGS}")
        if self.weighting == "on" and self.variant not in ("world", "both"):
            raise ValueError(f"weighting=on needs a target head, got variant {self.variant!r}")
        if not 0.0 <= self.aux_weight <= 1.0:
            raise ValueError(f"aux_weight must be in [0, 1], got {self.aux_weight}")
        if len(self.kernel_sizes) != 3 or any(k % 2 != 1 for k in self.kernel_sizes):
            raise ValueError(f"need three odd kernel sizes, got {self.kernel_sizes}")
        for rate in (self.encoder_dropout, self.decoder_dropout, self.cnn_dropout):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate must be in [0, 1), got {rate}")

    @property
    def world_feature_dim(self) -> int:
        return 3 * self.c_out

    @property
    def aux_input_len(self) -> int:
        return self.d * self.d * self.world_feature_dim + self.h_e

    @property
    def has_precomputed_head(self) -> bool:
        return self.variant in ("world", "both")


@dataclass
class EncodedInputs:
    H_c: Value
    h_c_last: Value
    H_s: Value


class TargetScores:
    """Per-cell target scores and their log-softmax (a proper distribution)."""

    def __init__(self, scores: Value):
        if scores.data.ndim != 2 or scores.data.shape[0] != 1:
            raise ValueError(f"scores must be a (1, n) row, got {scores.data.shape}")
        self.scores = scores
        self.log_probs = log_softmax(scores, axis=1)

    def argmax(self) -> int:
        """Predicted cell; numpy argmax takes the lowest index on ties."""
        return int(np.argmax(self.scores.data))


@dataclass
class GreedyDecode:
    actions: list[str]
    terminated: bool
    scores: TargetScores | None
    step_weights: list[Value] = field(default_factory=list, repr=False)


class Seq2SeqModel:
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, Parameter] = {}
        cfg = config
        feat = cfg.world_feature_dim

        self._weight(rng, "cmd_embed", (cfg.vocab_size, cfg.embed_dim))
        self._weight(rng, "enc_fwd_w", (cfg.embed_dim + cfg.h_e, 4 * cfg.h_e))
        self._lstm_bias("enc_fwd_b", cfg.h_e)
        self._weight(rng, "enc_bwd_w", (cfg.embed_dim + cfg.h_e, 4 * cfg.h_e))
        self._lstm_bias("enc_bwd_b", cfg.h_e)
        self._weight(rng, "cmd_final_w", (2 * cfg.h_e, cfg.h_e))
        self._bias("cmd_final_b", (cfg.h_e,))
        for i, k in enumerate(cfg.kernel_sizes):
            self._weight(rng, f"conv{i}_w", (k, k, cfg.n_channels, cfg.c_out))
            self._bias(f"conv{i}_b", (cfg.c_out,))

        if cfg.variant == "both":
            # query init gain counteracts the attention's 1/sqrt(d_k) damping
            # so key selection starts sharp instead of near-uniform
            self._weight(rng, "aux_cmd_query_w", (feat, 2 * cfg.h_e),
                         gain=math.sqrt(2 * cfg.h_e))
            self._bias("aux_cmd_query_b", (2 * cfg.h_e,))
            self._weight(rng, "aux_cmd_ctx_w", (2 * cfg.h_e, cfg.h_e))
            self._bias("aux_cmd_ctx_b", (cfg.h_e,))
        if cfg.variant in ("world", "both"):
            self._weight(rng, "aux_query_w", (cfg.h_e, feat), gain=math.sqrt(feat))
            self._bias("aux_query_b", (feat,))
            self._weight(rng, "aux_out_w", (cfg.aux_input_len, cfg.d * cfg.d))
            self._bias("aux_out_b", (cfg.d * cfg.d,))

        self._weight(rng, "act_embed", (len(DECODER_INPUT_TOKENS), cfg.embed_dim))
        self._weight(rng, "dec_init_w", (cfg.h_e + feat, cfg.h_d))
        self._bias("dec_init_b", (cfg.h_d,))
        self._weight(rng, "attn_c_q", (cfg.h_d, cfg.h_d))
        self._weight(rng, "attn_c_k", (2 * cfg.h_e, cfg.h_d))
        self._bias("attn_c_b", (cfg.h_d,))
        self._weight(rng, "attn_c_v", (cfg.h_d, 1))
        self._weight(rng, "attn_s_q", (2 * cfg.h_e + cfg.h_d, cfg.h_d))
        self._weight(rng, "attn_s_k", (feat, cfg.h_d))
        self._bias("attn_s_b", (cfg.h_d,))
        self._weight(rng, "attn_s_v", (cfg.h_d, 1))
        dec_in = cfg.embed_dim + 2 * cfg.h_e + feat
        self._weight(rng, "dec_lstm_w", (dec_in + cfg.h_d, 4 * cfg.h_d))
        self._lstm_bias("dec_lstm_b", cfg.h_d)
        self._weight(rng, "out_w", (cfg.h_d, len(OUTPUT_CLASSES)))
        self._bias("out_b", (len(OUTPUT_CLASSES),))

    def _weight(
        self, rng: np.random.Generator, name: str, shape: tuple[int, ...], gain: float = 1.0
    ):
        data = uniform_init(rng, shape)
        self.params[name] = Parameter(data * gain if gain != 1.0 else data, name)

    def _bias(self, name: str, shape: tuple[int, ...]):
        self.params[name] = Parameter(np.zeros(shape), name)

    def _lstm_bias(self, name: str, hidden: int):
        # forget gates start open so cell state survives early training
        data = np.zeros(4 * hidden)
        data[hidden : 2 * hidden] = 1.0
        self.params[name] = Parameter(data, name)

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, p in self.params.items():
            if arrays[name].shape != p.data.shape:
                raise ValueError(
                    f"{name}: stored shape {arrays[name].shape} != model shape {p.data.shape}"
                )
            p.data[...] = arrays[name]

    # ---- encoders ----

    def encode_command(
        self, token_ids: list[int], rng: np.random.Generator | None = None, training: bool = False
    ) -> tuple[Value, Value]:
        cfg = self.config
        ids = [int(t) for t in token_ids]
        if not ids:
            raise ValueError("cannot encode an empty command")
        bad = [t for t in ids if not 0 <= t < cfg.vocab_size]
        if bad:
            raise ValueError(f"token ids {bad} outside vocabulary of size {cfg.vocab_size}")
        emb = embedding_lookup(self.params["cmd_embed"], ids)
        emb = dropout(emb, cfg.encoder_dropout, rng, training)
        n = len(ids)
        fwd = lstm_sequence(emb, self.params["enc_fwd_w"], self.params["enc_fwd_b"])
        bwd = lstm_sequence(emb, self.params["enc_bwd_w"], self.params["enc_bwd_b"], reverse=True)
        H_c = concat([fwd, bwd], axis=1)
        final = concat([fwd[n - 1 : n, :], bwd[0:1, :]], axis=1)
        h_c_last = linear(final, self.params["cmd_final_w"], self.params["cmd_final_b"])
        return H_c, h_c_last

    def encode_state(
        self, grid: np.ndarray, rng: np.random.Generator | None = None, training: bool = False
    ) -> Value:
        cfg = self.config
        grid = np.asarray(grid, dtype=np.float64)
        expected = (cfg.d, cfg.d, cfg.n_channels)
        if grid.shape != expected:
            raise ValueError(f"grid shape {grid.shape} != expected {expected}")
        x = Value(grid)
        maps = [
            conv2d_same(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"]).relu()
            for i in range(len(cfg.kernel_sizes))
        ]
        features = dropout(concat(maps, axis=2), cfg.cnn_dropout, rng, training)
        # C-order reshape: row r, column c lands at row r*d + c, matching target indices
        return features.reshape(cfg.d * cfg.d, cfg.world_feature_dim)

    def encode_inputs(
        self,
        token_ids: list[int],
        grid: np.ndarray,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> EncodedInputs:
        H_c, h_c_last = self.encode_command(token_ids, rng, training)
        return EncodedInputs(H_c=H_c, h_c_last=h_c_last, H_s=self.encode_state(grid, rng, training))

    # ---- target heads ----

    @staticmethod
    def dot_attention(query: Value, keys: Value) -> tuple[Value, Value]:
        """Scaled dot-product attention of one query row over key rows.

        Returns (weights, context) where context is the weighted sum of keys.
        """
        if query.shape[1] != keys.shape[1]:
            raise ValueError(f"query dim {query.shape} incompatible with keys {keys.shape}")
        scale = 1.0 / math.sqrt(keys.shape[1])
        weights = softmax((query @ keys.T) * scale, axis=1)
        return weights, weights @ keys

    def _scored_cells(self, H_s: Value, query_state: Value) -> Value:
        """Scale every cell row by its attention weight and classify the target cell."""
        query = linear(query_state, self.params["aux_query_w"], self.params["aux_query_b"])
        weights, _ = self.dot_attention(query, H_s)
        weighted = H_s * weights.T
        v = concat([weighted.reshape(1, -1), query_state], axis=1)
        if v.shape[1] != self.config.aux_input_len:
            raise ValueError(f"aux input length {v.shape[1]} != {self.config.aux_input_len}")
        return linear(v, self.params["aux_out_w"], self.params["aux_out_b"])

    def predict_target_world(self, H_s: Value, h_c_last: Value) -> TargetScores:
        return TargetScores(self._scored_cells(H_s, h_c_last))

    def predict_target_both(self, H_s: Value, H_c: Value) -> TargetScores:
        query = linear(
            H_s.mean(axis=0, keepdims=True),
            self.params["aux_cmd_query_w"],
            self.params["aux_cmd_query_b"],
        )
        _, command_context = self.dot_attention(query, H_c)
        h_tilde_c = linear(
            command_context, self.params["aux_cmd_ctx_w"], self.params["aux_cmd_ctx_b"]
        )
        return TargetScores(self._scored_cells(H_s, h_tilde_c))

    @staticmethod
    def predict_target_baseline_aux(step_weights: list[Value]) -> TargetScores:
        if not step_weights:
            raise RuntimeError("no decoder attention weights recorded; decode first")
        total = step_weights[0]
        for w in step_weights[1:]:
            total = total + w
        return TargetScores(total)

    @staticmethod
    def weight_world_encodings(H_s: Value, log_probs: Value) -> Value:
        """Scale row i of H_s by log_probs[i] (a negative multiplier)."""
        return H_s * log_probs.T

    # ---- decoder ----

    def init_decoder_state(self, h_c_last: Value, H_s: Value) -> tuple[Value, Value]:
        summary = concat([h_c_last, H_s.mean(axis=0, keepdims=True)], axis=1)
        h0 = linear(summary, self.params["dec_init_w"], self.params["dec_init_b"])
        return h0, Value(np.zeros((1, self.config.h_d)))

    def project_attention_keys(self, H_c: Value, H_s_eff: Value) -> tuple[Value, Value]:
        """Key projections are fixed per example; compute them once, reuse each step."""
        return H_c @ self.params["attn_c_k"], H_s_eff @ self.params["attn_s_k"]

    def decode_step(
        self,
        prev_emb: Value,
        state: tuple[Value, Value],
        H_c: Value,
        H_s_eff: Value,
        projected_keys: tuple[Value, Value] | None = None,
        rng: np.random.Generator | None = None,
        training: bool = False,
    ) -> tuple[Value, tuple[Value, Value], Value]:
        """One decoder step; returns (action logits, new state, world attention weights)."""
        p = self.params
        h_prev, c_prev = state
        if projected_keys is None:
            projected_keys = self.project_attention_keys(H_c, H_s_eff)
        proj_c, proj_s = projected_keys
        n_tokens = H_c.shape[0]
        n_cells = H_s_eff.shape[0]
        att_c = additive_attention(
            h_prev, H_c, proj_c, p["attn_c_q"], p["attn_c_b"], p["attn_c_v"]
        )
        ctx_c = att_c[:, n_tokens:]
        world_query = concat([ctx_c, h_prev], axis=1)
        att_s = additive_attention(
            world_query, H_s_eff, proj_s, p["attn_s_q"], p["attn_s_b"], p["attn_s_v"]
        )
        w_s = att_s[:, :n_cells]
        ctx_s = att_s[:, n_cells:]
        x = concat([prev_emb, ctx_c, ctx_s], axis=1)
        step = lstm_cell(x, h_prev, c_prev, p["dec_lstm_w"], p["dec_lstm_b"])
        h = step[:, : self.config.h_d]
        c = step[:, self.config.h_d :]
        visible = dropout(h, self.config.decoder_dropout, rng, training)
        logits = linear(visible, p["out_w"], p["out_b"])
        return logits, (h, c), w_s

    def _prepare_decode(
        self, example, rng: np.random.Generator | None, training: bool
    ) -> tuple[EncodedInputs, TargetScores | None, Value, tuple[Value, Value], tuple[Value, Value]]:
        cfg = self.config
        token_ids = DEFAULT_VOCAB.encode(example.command)
        grid = encode_world(example.world)
        enc = self.encode_inputs(token_ids, grid, rng, training)
        scores = None
        if cfg.variant == "world":
            scores = self.predict_target_world(enc.H_s, enc.h_c_last)
        elif cfg.variant == "both":
            scores = self.predict_target_both(enc.H_s, enc.H_c)
        H_s_eff = enc.H_s
        if cfg.weighting == "on" and scores is not None:
            H_s_eff = self.weight_world_encodings(enc.H_s, scores.log_probs)
        state = self.init_decoder_state(enc.h_c_last, enc.H_s)
        keys = self.project_attention_keys(enc.H_c, H_s_eff)
        return enc, scores, H_s_eff, state, keys

    def full_forward(
        self, example, mode: str = "train", rng: np.random.Generator | None = None
    ) -> tuple[list[Value], TargetScores | None]:
        """Teacher-forced pass over one example.

        Returns one logit row per gold step (actions plus EOS) and the target
        scores for the configured variant (None for baseline_no_aux).
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        training = mode == "train"
        enc, scores, H_s_eff, state, keys = self._prepare_decode(example, rng, training)
        input_ids = [0] + [action_to_class(a) + 1 for a in example.actions]
        logits_steps: list[Value] = []
        attn_steps: list[Value] = []
        for token in input_ids:
            prev_emb = self.params["act_embed"][token : token + 1, :]
            logits, state, w_s = self.decode_step(
                prev_emb, state, enc.H_c, H_s_eff, keys, rng, training
            )
            logits_steps.append(logits)
            attn_steps.append(w_s)
        if self.config.variant == "baseline_aux":
            scores = self.predict_target_baseline_aux(attn_steps)
        return logits_steps, scores

    def greedy_decode(self, example, max_steps: int) -> GreedyDecode:
        """Decode with argmax until EOS or the step cap (dropout off)."""
        enc, scores, H_s_eff, state, keys = self._prepare_decode(example, None, False)
        actions: list[str] = []
        attn_steps: list[Value] = []
        terminated = False
        token = 0
        for _ in range(max_steps):
            prev_emb = self.params["act_embed"][token : token + 1, :]
            logits, state, w_s = self.decode_step(prev_emb, state, enc.H_c, H_s_eff, keys)
            attn_steps.append(w_s)
            cls = int(np.argmax(logits.data))
            if cls == EOS_CLASS:
                terminated = True
                break
            actions.append(OUTPUT_CLASSES[cls])
            token = cls + 1
        if self.config.variant == "baseline_aux":
            scores = self.predict_target_baseline_aux(attn_steps)
        return GreedyDecode(
            actions=actions, terminated=terminated, scores=scores, step_weights=attn_steps
        )
