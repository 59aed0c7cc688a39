"""modeladapter: HTTP model serving for the xent wire protocol.

POST /logprobs, /sample, /generate; GET /vocab, /health, /schema.  All
numeric fields are float64, tokens cross the wire as ids, and every
response echoes the served tokenizer's hash.
"""

__version__ = "0.1.0"

from .app import create_app
from .models import (
    BigramModel,
    ServedModel,
    UniformModel,
    UnseededModel,
    default_models,
)
from .vocab import WireVocab

__all__ = [
    "BigramModel",
    "ServedModel",
    "UniformModel",
    "UnseededModel",
    "WireVocab",
    "create_app",
    "default_models",
    "__version__",
]
