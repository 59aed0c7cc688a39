"""xentlab: cross-entropy games on a tiny register machine.

Parse any text into an SXGL program, run it against a pool of model
backends, score and train on the resulting rewards, measure transfer
between games, and let the curriculum loop invent the next game.
"""

from .config import Config, default_config
from .errors import XentError
from .models import RemoteBackend
from .sxgl import Program, code_length, concat, parse
from .tokens import TokenString, Vocab, byte_vocab
from .vm import GameOutcome, RunParams, run

__version__ = "0.1.0"

__all__ = [
    "Config",
    "GameOutcome",
    "Program",
    "RemoteBackend",
    "RunParams",
    "TokenString",
    "Vocab",
    "XentError",
    "byte_vocab",
    "code_length",
    "concat",
    "default_config",
    "parse",
    "run",
    "__version__",
]
