"""Shared fixtures: small configs and evaluators the whole suite reuses."""

from __future__ import annotations

import pytest

from xentlab.config import Config, apply_overrides, default_config
from xentlab.corpus import EmitParams
from xentlab.tokens import byte_vocab
from xentlab.transfer import Evaluator


@pytest.fixture(scope="session")
def vocab():
    return byte_vocab()


@pytest.fixture()
def config() -> Config:
    return default_config()


@pytest.fixture()
def small_config() -> Config:
    """A config sized for fast loops: short games, few rollouts."""
    return apply_overrides(
        default_config(),
        [
            "game.length=12",
            "plan.n_rollouts=3",
            "phi.batch=4",
            "loop.candidates=4",
        ],
    )


@pytest.fixture()
def evaluator(config) -> Evaluator:
    return Evaluator(config)


@pytest.fixture()
def emit_params(config) -> EmitParams:
    return config.emit_params()


def roles_override(params: EmitParams, **roles: str) -> EmitParams:
    """Copy emit params with some template roles rebound."""
    return EmitParams(
        vocab=params.vocab,
        k=params.k,
        u=params.u,
        length=params.length,
        elicit_len=params.elicit_len,
        feedback_len=params.feedback_len,
        alpha=params.alpha,
        separator=params.separator,
        roles={**params.roles, **roles},
    )
