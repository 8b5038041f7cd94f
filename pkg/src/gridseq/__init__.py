"""Grid-world instruction following with target-aware sequence decoding.

Subpackages: gridworld (states and tensors), language (commands and referent
resolution), planner (canonical action plans), dataset (split generation and
validation), diffcore (autodiff engine), model (seq2seq network with target
heads), trainer (optimization), evalkit (metrics and reports), cli.
"""

__version__ = "0.1.0"

from .dataset import Example, SplitConstraints, SplitSizes, generate_split, validate_split
from .diffcore import Value, grad_check
from .gridworld import AgentPose, GeneratorConfig, ObjectSpec, WorldState, encode_world
from .language import Command, Vocabulary, resolve_referent
from .model import ModelConfig, Seq2SeqModel
from .planner import plan, simulate
from .trainer import TrainConfig, train

__all__ = [
    "AgentPose",
    "Command",
    "Example",
    "GeneratorConfig",
    "ModelConfig",
    "ObjectSpec",
    "Seq2SeqModel",
    "SplitConstraints",
    "SplitSizes",
    "TrainConfig",
    "Value",
    "Vocabulary",
    "WorldState",
    "encode_world",
    "generate_split",
    "grad_check",
    "plan",
    "resolve_referent",
    "simulate",
    "train",
    "validate_split",
    "__version__",
]
