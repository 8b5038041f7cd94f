"""Command grammar, referent resolution, and the token vocabulary.

Commands have the surface form "walk to a/the [small|big] [color] [shape]".
Size words resolve relative to the other matching objects in the world:
"small" picks the strictly smallest candidate, "big" the strictly largest,
and ties are errors rather than arbitrary choices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .gridworld import COLORS, SHAPES, WorldState

SIZE_WORDS = ("small", "big")
ARTICLES = ("a", "the")

PAD_TOKEN = "<pad>"
SOS_TOKEN = "<sos>"
EOS_TOKEN = "<eos>"
RESERVED_TOKENS = (PAD_TOKEN, SOS_TOKEN, EOS_TOKEN)
COMMAND_WORDS = ("walk", "to") + ARTICLES + SIZE_WORDS + COLORS + SHAPES


class ReferentError(Exception):
    """Base for referent resolution failures."""


class NoReferentError(ReferentError):
    """No object in the world matches the command."""


class AmbiguousReferentError(ReferentError):
    """The command does not pick out a unique object."""


class UnsatisfiableConstraintsError(Exception):
    """Rejection sampling exhausted its attempt budget."""


class Vocabulary:
    """Bidirectional token/index map with stable reserved indices (PAD, SOS, EOS)."""

    def __init__(self, words: tuple[str, ...] = COMMAND_WORDS):
        self._tokens = RESERVED_TOKENS + tuple(words)
        if len(set(self._tokens)) != len(self._tokens):
            raise ValueError("vocabulary tokens must be unique")
        self._index = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def pad(self) -> int:
        return self._index[PAD_TOKEN]

    @property
    def sos(self) -> int:
        return self._index[SOS_TOKEN]

    @property
    def eos(self) -> int:
        return self._index[EOS_TOKEN]

    def index(self, token: str) -> int:
        return self._index[token]

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, words: list[str]) -> list[int]:
        return [self._index[w] for w in words]

    def decode(self, ids: list[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    def to_json_list(self) -> list[str]:
        return list(self._tokens)

    @classmethod
    def from_json_list(cls, tokens: list[str]) -> "Vocabulary":
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("reserved tokens missing or reordered")
        return cls(tuple(tokens[len(RESERVED_TOKENS):]))


DEFAULT_VOCAB = Vocabulary()


@dataclass(frozen=True)
class Command:
    shape_word: str
    color_word: Optional[str] = None
    size_word: Optional[str] = None
    article: str = "the"
    verb: str = "walk_to"

    def __post_init__(self):
        if self.shape_word not in SHAPES:
            raise ValueError(f"unknown shape word {self.shape_word!r}")
        if self.color_word is not None and self.color_word not in COLORS:
            raise ValueError(f"unknown color word {self.color_word!r}")
        if self.size_word is not None and self.size_word not in SIZE_WORDS:
            raise ValueError(f"unknown size word {self.size_word!r}")
        if self.article not in ARTICLES:
            raise ValueError(f"unknown article {self.article!r}")
        if self.verb != "walk_to":
            raise ValueError(f"unsupported verb {self.verb!r}")

    def words(self) -> list[str]:
        out = ["walk", "to", self.article]
        if self.size_word:
            out.append(self.size_word)
        if self.color_word:
            out.append(self.color_word)
        out.append(self.shape_word)
        return out

    def token_ids(self, vocab: Vocabulary = DEFAULT_VOCAB) -> list[int]:
        return vocab.encode(self.words())

    @classmethod
    def from_words(cls, words: list[str]) -> "Command":
        if len(words) < 4 or words[0] != "walk" or words[1] != "to" or words[2] not in ARTICLES:
            raise ValueError(f"malformed command {words!r}")
        article = words[2]
        rest = list(words[3:])
        size_word = rest.pop(0) if rest and rest[0] in SIZE_WORDS else None
        color_word = rest.pop(0) if rest and rest[0] in COLORS else None
        if len(rest) != 1 or rest[0] not in SHAPES:
            raise ValueError(f"malformed command {words!r}")
        return cls(shape_word=rest[0], color_word=color_word, size_word=size_word, article=article)


def referent_class(cmd: Command) -> str:
    """Breakdown key for a command: its present descriptive words, space-joined."""
    parts = [cmd.size_word, cmd.color_word, cmd.shape_word]
    return " ".join(p for p in parts if p)


def resolve_referent(cmd: Command, world: WorldState) -> tuple[int, int]:
    """Return the cell of the unique object the command refers to.

    Candidates are the objects matching the shape word and, when present, the
    color word. Without a size word the candidate set must be a singleton.
    "small"/"big" select the candidate of strictly minimal/maximal size; size
    ties are ambiguous.
    """
    candidates = [
        (pos, obj)
        for pos, obj in world.objects()
        if obj.shape == cmd.shape_word
        and (cmd.color_word is None or obj.color == cmd.color_word)
    ]
    if not candidates:
        raise NoReferentError(f"no object matches {referent_class(cmd)!r}")
    if cmd.size_word is None:
        if len(candidates) != 1:
            raise AmbiguousReferentError(
                f"{referent_class(cmd)!r} matches {len(candidates)} objects"
            )
        return candidates[0][0]
    sizes = [obj.size for _, obj in candidates]
    wanted = min(sizes) if cmd.size_word == "small" else max(sizes)
    hits = [pos for pos, obj in candidates if obj.size == wanted]
    if len(hits) != 1:
        raise AmbiguousReferentError(
            f"{referent_class(cmd)!r}: {len(hits)} candidates tie at size {wanted}"
        )
    return hits[0]


def sample_command(
    rng: np.random.Generator,
    world: WorldState,
    allowed: Optional[Callable[[Command, tuple[int, int]], bool]] = None,
    attempts: int = 1000,
) -> Command:
    """Rejection-sample a command that resolves uniquely in `world`.

    `allowed(cmd, target_cell)` imposes split-specific constraints on top of
    unique resolution; after `attempts` failures the constraints are deemed
    unsatisfiable for this world.
    """
    color_choices = (None,) + COLORS
    size_choices = (None,) + SIZE_WORDS
    for _ in range(attempts):
        cmd = Command(
            shape_word=SHAPES[rng.integers(len(SHAPES))],
            color_word=color_choices[rng.integers(len(color_choices))],
            size_word=size_choices[rng.integers(len(size_choices))],
            article=ARTICLES[rng.integers(len(ARTICLES))],
        )
        try:
            cell = resolve_referent(cmd, world)
        except ReferentError:
            continue
        if allowed is None or allowed(cmd, cell):
            return cmd
    raise UnsatisfiableConstraintsError(
        f"no admissible command found in {attempts} attempts"
    )
