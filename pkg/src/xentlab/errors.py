"""Typed errors shared across the package.

Exit-code mapping used by the CLI: ConfigError and subclasses mean the
request itself was bad (exit 2), the runtime errors mean a game or a
measurement failed while executing (exit 3).
"""

from __future__ import annotations


class XentError(Exception):
    """Base class for all package errors."""


class ConfigError(XentError):
    """Invalid configuration, arguments, or program text."""


class VocabMismatchError(ConfigError):
    """A remote peer or checkpoint was built against a different vocab."""


class UnsupportedTemplateError(ConfigError):
    """The named game template is a documented stub, not an emitter."""


class InvalidLengthError(ConfigError):
    """A register length or count was out of range."""


class CaretRangeError(XentError):
    """A caret value left the [0, L] range."""


class CopyOverflowError(XentError):
    """copy_into_left with a source caret beyond the destination caret."""


class EstimationError(XentError):
    """A score estimate could not be formed (for example, every rollout aborted)."""


class TrainingError(XentError):
    """A policy-gradient batch was unusable."""


class CapabilityError(XentError):
    """A backend was asked for something it cannot do (such as seeded sampling)."""


class TransportError(XentError):
    """A remote backend call failed after the configured retries."""
