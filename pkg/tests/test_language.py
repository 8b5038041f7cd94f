"""Vocabulary, command grammar, and referent resolution."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridseq.gridworld import AgentPose, GeneratorConfig, ObjectSpec, WorldState, sample_world
from gridseq.language import (
    AmbiguousReferentError,
    COMMAND_WORDS,
    Command,
    DEFAULT_VOCAB,
    NoReferentError,
    RESERVED_TOKENS,
    UnsatisfiableConstraintsError,
    Vocabulary,
    referent_class,
    resolve_referent,
    sample_command,
)


def world_with(objects):
    cells = {pos: ObjectSpec(*spec) for pos, spec in objects.items()}
    return WorldState(d=4, cells=cells, agent=AgentPose(0, 0, "south"))


def test_vocabulary_reserved_indices():
    vocab = Vocabulary()
    assert vocab.pad == 0
    assert vocab.sos == 1
    assert vocab.eos == 2
    assert vocab.token(0) == "<pad>"
    assert len(vocab) == len(RESERVED_TOKENS) + len(COMMAND_WORDS)


def test_vocabulary_encode_decode_round_trip():
    vocab = Vocabulary()
    words = ["walk", "to", "the", "small", "red", "circle"]
    assert vocab.decode(vocab.encode(words)) == words


def test_vocabulary_json_round_trip():
    vocab = Vocabulary()
    back = Vocabulary.from_json_list(vocab.to_json_list())
    assert back.to_json_list() == vocab.to_json_list()


def test_vocabulary_json_requires_reserved_prefix():
    tokens = DEFAULT_VOCAB.to_json_list()
    with pytest.raises(ValueError):
        Vocabulary.from_json_list(tokens[1:])


def test_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary(("walk", "walk"))


def test_command_words_ordering():
    cmd = Command(shape_word="circle", color_word="red", size_word="small", article="a")
    assert cmd.words() == ["walk", "to", "a", "small", "red", "circle"]
    bare = Command(shape_word="square")
    assert bare.words() == ["walk", "to", "the", "square"]


def test_command_from_words_round_trip():
    for cmd in (
        Command("circle"),
        Command("square", color_word="blue"),
        Command("cylinder", size_word="big", article="a"),
        Command("circle", color_word="yellow", size_word="small"),
    ):
        assert Command.from_words(cmd.words()) == cmd


def test_command_from_words_rejects_malformed():
    for words in (
        ["walk", "to", "the"],
        ["run", "to", "the", "circle"],
        ["walk", "to", "circle"],
        ["walk", "to", "the", "red", "small", "circle"],  # size must precede color
        ["walk", "to", "the", "circle", "red"],
    ):
        with pytest.raises(ValueError):
            Command.from_words(words)


def test_command_token_ids_match_vocabulary():
    cmd = Command("circle", color_word="red")
    assert cmd.token_ids() == DEFAULT_VOCAB.encode(cmd.words())


def test_referent_class_joins_present_words():
    assert referent_class(Command("circle")) == "circle"
    assert referent_class(Command("circle", color_word="red")) == "red circle"
    assert (
        referent_class(Command("circle", color_word="red", size_word="big"))
        == "big red circle"
    )


def test_resolve_unique_shape():
    world = world_with({(1, 1): ("circle", "red", 2), (2, 2): ("square", "blue", 1)})
    assert resolve_referent(Command("circle"), world) == (1, 1)
    assert resolve_referent(Command("square", color_word="blue"), world) == (2, 2)


def test_resolve_requires_match():
    world = world_with({(1, 1): ("circle", "red", 2)})
    with pytest.raises(NoReferentError):
        resolve_referent(Command("cylinder"), world)
    with pytest.raises(NoReferentError):
        resolve_referent(Command("circle", color_word="green"), world)


def test_resolve_ambiguous_without_size_word():
    world = world_with({(1, 1): ("circle", "red", 2), (3, 3): ("circle", "blue", 3)})
    with pytest.raises(AmbiguousReferentError):
        resolve_referent(Command("circle"), world)


def test_resolve_size_words_pick_extremes():
    world = world_with(
        {
            (0, 1): ("circle", "red", 1),
            (1, 1): ("circle", "red", 3),
            (2, 2): ("circle", "blue", 4),
        }
    )
    assert resolve_referent(Command("circle", size_word="small"), world) == (0, 1)
    assert resolve_referent(Command("circle", size_word="big"), world) == (2, 2)
    assert (
        resolve_referent(Command("circle", color_word="red", size_word="big"), world)
        == (1, 1)
    )


def test_resolve_size_is_relative_not_absolute():
    # A size-3 object counts as "small" when everything else is larger.
    world = world_with({(1, 1): ("circle", "red", 3), (2, 2): ("circle", "blue", 4)})
    assert resolve_referent(Command("circle", size_word="small"), world) == (1, 1)


def test_resolve_size_tie_is_ambiguous():
    world = world_with({(1, 1): ("circle", "red", 2), (2, 2): ("circle", "blue", 2)})
    with pytest.raises(AmbiguousReferentError):
        resolve_referent(Command("circle", size_word="small"), world)


def test_sample_command_resolves_in_world():
    # Some worlds admit no uniquely-resolving command (all-tie layouts);
    # those must raise rather than return an ambiguous command.
    rng = np.random.default_rng(5)
    gen = GeneratorConfig(d=4, num_objects=4)
    resolved = 0
    for _ in range(40):
        world = sample_world(rng, gen)
        try:
            cmd = sample_command(rng, world)
        except UnsatisfiableConstraintsError:
            continue
        cell = resolve_referent(cmd, world)
        assert cell in world.cells
        resolved += 1
    assert resolved >= 30


def test_sample_command_honors_allowed_predicate():
    rng = np.random.default_rng(9)
    world = world_with({(1, 1): ("circle", "red", 2), (2, 2): ("square", "blue", 1)})
    cmd = sample_command(rng, world, allowed=lambda c, cell: cell == (2, 2))
    assert resolve_referent(cmd, world) == (2, 2)


def test_sample_command_exhausts_attempts():
    rng = np.random.default_rng(1)
    world = world_with({(1, 1): ("circle", "red", 2)})
    with pytest.raises(UnsatisfiableConstraintsError):
        sample_command(rng, world, allowed=lambda c, cell: False, attempts=64)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sampled_commands_parse_and_re_resolve(seed):
    rng = np.random.default_rng(seed)
    world = sample_world(rng, GeneratorConfig(d=4, num_objects=3))
    cmd = sample_command(rng, world)
    again = Command.from_words(cmd.words())
    assert resolve_referent(again, world) == resolve_referent(cmd, world)
