"""The curriculum meta objective O = (q*d + b*p) / l.

q raises the summed backward transfers (new game teaching old games) to
the power 1-delta; d raises self-transfer over the telescoped
history-to-candidate transfer to the power delta; b is an optional
external benchmark increment weighted by pressure p; l is the
candidate's code length.  All transfer sums arrive as exact rationals
from the transfer layer, so fusing history steps leaves q and d
bit-identical.

Conventions at the edges: an empty history bootstraps q := 1 and the
diversity denominator := 1; exponent 0 means the factor is exactly 1;
a nonpositive base under a fractional exponent clamps the factor to 0
with a flag; denominators below epsilon_floor are floored, flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .config import ExternalEvalSpec, MetaSpec, ScheduleSpec
from .errors import ConfigError, EstimationError
from .models import Checkpoint
from .sxgl import Program, code_length, parse
from .transfer import (
    Evaluator,
    EvalPlan,
    History,
    Measurements,
    PhiParams,
    make_plan,
    measure_candidate,
)

_SCORERS: dict[str, Callable[[Checkpoint], float]] = {}


def register_scorer(name: str, fn: Callable[[Checkpoint], float]) -> None:
    """Expose an external benchmark E(checkpoint) -> float by name."""
    _SCORERS[name] = fn


def _poly(coeffs: list[float], t: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * t + c
    return acc


def _schedule_factor(s: ScheduleSpec | None, t: float) -> float:
    if s is None:
        return 1.0
    den = _poly(s.denominator, t)
    if den == 0.0:
        raise ConfigError(f"schedule denominator vanished at T={t}")
    return _poly(s.numerator, t) / den


def effective_meta(meta: MetaSpec, t_elapsed: float) -> tuple[float, float]:
    """delta and pressure after their schedules, clamped to valid ranges."""
    delta = meta.delta * _schedule_factor(meta.delta_schedule, t_elapsed)
    pressure = meta.pressure * _schedule_factor(meta.pressure_schedule, t_elapsed)
    return min(max(delta, 0.0), 1.0), max(pressure, 0.0)


def _powered(base: float, expo: float, flags: list[str], label: str) -> float:
    if expo == 0.0:
        return 1.0
    if expo == 1.0:
        return base
    if base <= 0.0:
        flags.append(f"{label}_nonpositive_base")
        return 0.0
    return base ** expo


@dataclass
class OBreakdown:
    o: float
    q: float
    d: float
    b: float
    l: int
    qd: float
    delta: float
    pressure: float
    sum_new_to_old: float
    t_self: float
    telescoped: float
    k: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "o": self.o,
            "q": self.q,
            "d": self.d,
            "b": self.b,
            "l": self.l,
            "qd": self.qd,
            "delta": self.delta,
            "pressure": self.pressure,
            "sum_new_to_old": self.sum_new_to_old,
            "t_self": self.t_self,
            "telescoped": self.telescoped,
            "k": self.k,
            "flags": sorted(self.flags),
        }


def quality_value(ms: Measurements, k: int, delta: float, mode: str, flags: list[str]) -> float:
    if k == 0:
        flags.append("quality_bootstrap")
        return 1.0
    if mode == "clipped":
        s = sum((max(x, Fraction(0)) for x in ms.new_to_old_exact), Fraction(0))
    else:
        s = sum(ms.new_to_old_exact, Fraction(0))
        if mode == "strict" and s < 0:
            raise EstimationError(
                "negative quality sum in strict mode; gate should have rejected"
            )
    return _powered(float(s), 1.0 - delta, flags, "quality")


def diversity_value(
    ms: Measurements,
    k: int,
    delta: float,
    epsilon_floor: float,
    flags: list[str],
    mode: str = "clipped",
) -> float:
    if mode == "strict" and ms.t_self_exact < 0:
        raise EstimationError(
            "candidate does not teach itself (negative self-transfer) in strict mode"
        )
    if k == 0:
        flags.append("diversity_bootstrap")
        denom = Fraction(1)
    else:
        denom = ms.telescoped_exact
        if denom < Fraction(epsilon_floor):
            flags.append("diversity_denominator_floored")
            denom = Fraction(epsilon_floor)
    ratio = float(ms.t_self_exact / denom)
    return _powered(ratio, delta, flags, "diversity")


def benchmark_value(
    ev: Evaluator,
    before: Checkpoint,
    after: Checkpoint,
    spec: ExternalEvalSpec,
) -> Fraction:
    """b = E(trained) - E(untrained) under the configured external eval."""
    if spec.kind == "callback":
        if not spec.scorer or spec.scorer not in _SCORERS:
            raise ConfigError(f"no registered scorer named {spec.scorer!r}")
        fn = _SCORERS[spec.scorer]
        return Fraction(float(fn(after))) - Fraction(float(fn(before)))
    if not spec.source:
        raise ConfigError("heldout_game eval needs a source program")
    program = parse(spec.source, k=ev.config.game.registers, u=ev.config.models, vocab=ev.vocab)
    plan = make_plan(spec.seed, spec.n_rollouts, ev.config.plan.player)
    return ev.score_exact(after, program, plan) - ev.score_exact(before, program, plan)


def evaluate(
    ev: Evaluator,
    history: History,
    h: Program,
    plan: EvalPlan,
    phi: PhiParams,
    meta: MetaSpec,
    mode: str = "clipped",
    measurements: Measurements | None = None,
    t_elapsed: float | None = None,
) -> OBreakdown:
    ms = measurements or measure_candidate(ev, history, h, plan, phi)
    if t_elapsed is None:
        t_elapsed = float(sum(code_length(g) for g in history.games))
    delta, pressure = effective_meta(meta, t_elapsed)
    flags: list[str] = list(ms.phi_flags)
    k = history.k
    q = quality_value(ms, k, delta, mode, flags)
    d = diversity_value(ms, k, delta, meta.epsilon_floor, flags, mode)
    if pressure > 0.0:
        if meta.external_eval is None:
            raise ConfigError("pressure > 0 needs meta.external_eval")
        b = float(benchmark_value(ev, history.m_last, ms.trained, meta.external_eval))
    else:
        b = 0.0
        flags.append("benchmark_skipped")
    l = code_length(h)
    qd = q * d
    o = (qd + b * pressure) / l
    return OBreakdown(
        o=o,
        q=q,
        d=d,
        b=b,
        l=l,
        qd=qd,
        delta=delta,
        pressure=pressure,
        sum_new_to_old=float(sum(ms.new_to_old_exact, Fraction(0))),
        t_self=float(ms.t_self_exact),
        telescoped=float(ms.telescoped_exact),
        k=k,
        flags=flags,
    )


def quality(
    ev: Evaluator,
    history: History,
    h: Program,
    plan: EvalPlan,
    phi: PhiParams,
    delta: float,
    mode: str = "clipped",
) -> float:
    flags: list[str] = []
    ms = measure_candidate(ev, history, h, plan, phi)
    return quality_value(ms, history.k, delta, mode, flags)


def diversity(
    ev: Evaluator,
    history: History,
    h: Program,
    plan: EvalPlan,
    phi: PhiParams,
    delta: float,
    epsilon_floor: float = 1e-9,
) -> float:
    flags: list[str] = []
    ms = measure_candidate(ev, history, h, plan, phi)
    return diversity_value(ms, history.k, delta, epsilon_floor, flags)
