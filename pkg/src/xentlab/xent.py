"""The cross-entropy scoring calculus.

xent measures how surprised a judge model is by a target sequence under
an optional prefix.  Per-token losses are clipped at -ln(p_min) so that
a single impossible token cannot dominate a score.  On top of it sit
signed sums, the ensure nonlinearity used when scores are flushed to
rewards, and a few text-level deltas (truth split, information gain,
model contrast, anomaly profiles).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError
from .models import Backend

DEFAULT_P_MIN = 1e-6

TRUE_PROMPT = "The following statement is true:"
FALSE_PROMPT = "The following statement is false:"


def _check_p_min(p_min: float) -> float:
    if not 0.0 < p_min < 1.0:
        raise ConfigError(f"p_min must be in (0, 1), got {p_min}")
    return -math.log(p_min)


def anomaly_profile(
    backend: Backend,
    target: Sequence[int],
    prefix: Sequence[int] = (),
    p_min: float = DEFAULT_P_MIN,
) -> list[float]:
    """Per-token clipped losses of target given prefix."""
    cap = _check_p_min(p_min)
    lps = backend.logprobs(prefix, target)
    return [min(-lp, cap) for lp in lps]


def xent(
    backend: Backend,
    target: Sequence[int],
    prefix: Sequence[int] = (),
    p_min: float = DEFAULT_P_MIN,
) -> float:
    """Clipped cross-entropy of target under the judge, given prefix."""
    return math.fsum(anomaly_profile(backend, target, prefix, p_min))


@dataclass(frozen=True)
class XentTerm:
    sign: int  # +1 or -1
    backend: Backend
    target: tuple[int, ...]
    prefix: tuple[int, ...] = ()


def xent_sum(terms: Sequence[XentTerm], p_min: float = DEFAULT_P_MIN) -> float:
    if not terms:
        raise ConfigError("xent_sum needs at least one term")
    total = 0.0
    for t in terms:
        if t.sign not in (1, -1):
            raise ConfigError(f"term sign must be +1 or -1, got {t.sign}")
        total += t.sign * xent(t.backend, t.target, t.prefix, p_min)
    return total


def ensure(score: float, lam: float = 2.0) -> float:
    """Compress gains and amplify losses: S/lam if S >= 0 else lam*S."""
    if lam <= 1.0:
        raise ConfigError(f"ensure lambda must be > 1, got {lam}")
    return score / lam if score >= 0 else score * lam


def join(parts: Sequence[Sequence[int]], separator: int) -> tuple[int, ...]:
    """Concatenate token chunks with a single separator between nonempty ones.

    Empty chunks vanish entirely, so conditioning on nothing extra is the
    identity rather than a stray separator.
    """
    out: list[int] = []
    for chunk in parts:
        if not chunk:
            continue
        if out:
            out.append(separator)
        out.extend(chunk)
    return tuple(out)


# === text-level deltas ===


def tf_delta(
    backend: Backend,
    statement: Sequence[int],
    context: Sequence[int] = (),
    separator: int = 32,
    prompts: Sequence[tuple[Sequence[int], Sequence[int]]] | None = None,
    p_min: float = DEFAULT_P_MIN,
) -> float:
    """Log-probability edge of a statement under a truth frame vs a falsity frame.

    prompts is a list of (true_frame, false_frame) token pairs; the delta
    is averaged over it.  When omitted, the single default English pair
    is used (byte vocabs only).
    """
    if prompts is None:
        prompts = [(backend.vocab.encode(TRUE_PROMPT), backend.vocab.encode(FALSE_PROMPT))]
    if not prompts:
        raise ConfigError("tf_delta needs at least one prompt pair")
    total = 0.0
    for true_p, false_p in prompts:
        x_true = xent(backend, statement, join([context, true_p], separator), p_min)
        x_false = xent(backend, statement, join([context, false_p], separator), p_min)
        total += x_false - x_true
    return total / len(prompts)


def info_gain(
    backend: Backend,
    history: Sequence[int],
    question: Sequence[int],
    target: Sequence[int],
    separator: int = 32,
    p_min: float = DEFAULT_P_MIN,
) -> float:
    """How much knowing history helps predict target, given question."""
    base = xent(backend, target, tuple(question), p_min)
    informed = xent(backend, target, join([question, history], separator), p_min)
    return base - informed


def contrast_delta(
    backend_a: Backend,
    backend_b: Backend,
    target: Sequence[int],
    context: Sequence[int] = (),
    p_min: float = DEFAULT_P_MIN,
) -> float:
    """Log-probability edge of backend_a over backend_b on the same target."""
    return xent(backend_b, target, context, p_min) - xent(backend_a, target, context, p_min)
