"""Scores, training, and transfer values.

The score of a game for a checkpoint is the mean player reward over a
plan of seeded rollouts.  Scores are accumulated from per-segment
reward atoms in exact rational arithmetic, which is what makes the
identities downstream (concatenation additivity, telescoping, history
fusion) hold bitwise instead of approximately.

Training is one policy-gradient step per game segment, applied in
order.  Phi of a concatenation therefore equals the composition of the
parts' updates, checkpoint for checkpoint.

A transfer value T_G(H) is the score increment on H caused by training
on G, measured with the same plan before and after (common random
numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from .config import BindingSpec, Config
from .errors import ConfigError, EstimationError, TrainingError
from .models import (
    Backend,
    Checkpoint,
    Episode,
    LogitTableBackend,
    NGramBackend,
    RemoteBackend,
    UniformBackend,
    init_checkpoint,
    train_policy_gradient,
)
from .seeds import mix, spawn
from .sxgl import Program, concat, segment_hash, segment_programs, segments
from .vm import GameOutcome, run

SeedSpec = int | tuple[int, ...]


@dataclass(frozen=True)
class EvalPlan:
    """Seeds for a batch of rollouts; one spec per rollout.

    An int spec seeds every segment through the content-keyed derivation
    in the VM; a tuple pins per-segment seeds explicitly.
    """

    seeds: tuple[SeedSpec, ...]
    player: str = "m0"

    @property
    def n_rollouts(self) -> int:
        return len(self.seeds)

    def key(self) -> tuple:
        return (self.player, self.seeds)


def make_plan(seed: int, n_rollouts: int, player: str = "m0") -> EvalPlan:
    if n_rollouts < 1:
        raise ConfigError(f"a plan needs at least one rollout, got {n_rollouts}")
    return EvalPlan(seeds=tuple(spawn(seed, n_rollouts)), player=player)


@dataclass(frozen=True)
class PhiParams:
    batch: int = 8
    eta: float = 0.05
    seed: SeedSpec = 0
    reward_scale: float = 1.0
    reward_shift: float = 0.0

    def key(self) -> tuple:
        return (self.batch, self.eta, self.seed, self.reward_scale, self.reward_shift)


@dataclass
class ScoreStats:
    exact: Fraction
    n_rollouts: int
    n_aborted: int
    rollout_totals: tuple[Fraction, ...] = ()

    @property
    def value(self) -> float:
        return float(self.exact)

    @property
    def sd(self) -> float:
        """Sample standard deviation of per-rollout totals (0.0 if n < 2)."""
        n = len(self.rollout_totals)
        if n < 2:
            return 0.0
        mean = sum(self.rollout_totals, Fraction(0)) / n
        var = sum(((x - mean) ** 2 for x in self.rollout_totals), Fraction(0)) / (n - 1)
        return math.sqrt(float(var))


class Evaluator:
    """Builds model pools from a config and caches score measurements."""

    def __init__(self, config: Config) -> None:
        self.config = config
        self.vocab = config.vocab.build()
        self.params = config.run_params()
        self.player_name = config.trainable_name
        self._static: dict[str, Backend] = {}
        self._table_backends: dict[str, LogitTableBackend] = {}
        self._scores: dict[tuple, ScoreStats] = {}
        for spec in config.bindings:
            if spec.kind in ("uniform", "ngram", "remote"):
                self._static[spec.name] = self._build_static(spec)

    def _build_static(self, spec: BindingSpec) -> Backend:
        mc = self.config.game.max_context
        if spec.kind == "uniform":
            return UniformBackend(self.vocab, mc)
        if spec.kind == "ngram":
            return NGramBackend(
                self.vocab,
                window=spec.window,
                corpus=self.vocab.encode(spec.corpus_text),
                smoothing=spec.smoothing,
                max_context=mc,
            )
        return RemoteBackend(
            url=spec.url or "",
            vocab=self.vocab,
            model_id=spec.model_id,
            max_context=mc,
            retries=spec.retries,
        )

    def init_player(self) -> Checkpoint:
        spec = next(b for b in self.config.bindings if b.trainable)
        return init_checkpoint(
            self.vocab,
            window=spec.table_window,
            rows=spec.rows,
            init=spec.init,
            init_scale=spec.init_scale,
            init_seed=spec.init_seed,
        )

    def _table(self, ckpt: Checkpoint) -> LogitTableBackend:
        key = ckpt.fingerprint()
        be = self._table_backends.get(key)
        if be is None:
            be = LogitTableBackend(ckpt, self.vocab, self.config.game.max_context)
            if len(self._table_backends) > 512:
                self._table_backends.clear()
            self._table_backends[key] = be
        return be

    def pool(self, ckpt: Checkpoint) -> dict[str, Backend]:
        out: dict[str, Backend] = {}
        for spec in self.config.bindings:
            if spec.kind in ("logit_table", "clone"):
                out[spec.name] = self._table(ckpt)
            else:
                out[spec.name] = self._static[spec.name]
        return out

    # === scoring ===

    def rollout(
        self,
        ckpt: Checkpoint,
        program: Program,
        seeds: SeedSpec,
        want_trace: bool = False,
        record_player: bool = False,
    ) -> GameOutcome:
        return run(
            program,
            self.pool(ckpt),
            self.params,
            seeds,
            self.vocab,
            want_trace=want_trace,
            player=self.player_name if record_player else None,
        )

    def score_stats(self, ckpt: Checkpoint, program: Program, plan: EvalPlan) -> ScoreStats:
        key = (ckpt.fingerprint(), program.fingerprint(), plan.key())
        hit = self._scores.get(key)
        if hit is not None:
            return hit
        total = Fraction(0)
        aborted = 0
        totals: list[Fraction] = []
        for spec in plan.seeds:
            out = self.rollout(ckpt, program, spec)
            if out.aborted:
                aborted += 1
                totals.append(Fraction(0))
                continue
            one = Fraction(0)
            for seg in out.segment_rewards:
                one += Fraction(seg[plan.player])
            totals.append(one)
            total += one
        if aborted == plan.n_rollouts:
            raise EstimationError(
                f"all {plan.n_rollouts} rollouts aborted; no score estimate"
            )
        stats = ScoreStats(
            exact=total / plan.n_rollouts,
            n_rollouts=plan.n_rollouts,
            n_aborted=aborted,
            rollout_totals=tuple(totals),
        )
        self._scores[key] = stats
        return stats

    def score_exact(self, ckpt: Checkpoint, program: Program, plan: EvalPlan) -> Fraction:
        return self.score_stats(ckpt, program, plan).exact

    def score(self, ckpt: Checkpoint, program: Program, plan: EvalPlan) -> float:
        return self.score_stats(ckpt, program, plan).value

    # === training ===

    def train_phi(
        self,
        ckpt: Checkpoint,
        program: Program,
        phi: PhiParams,
    ) -> tuple[Checkpoint, list[str]]:
        """One policy-gradient step per segment, in order."""
        flags: list[str] = []
        segs = segments(program)
        seg_progs = segment_programs(program, self.vocab)
        if isinstance(phi.seed, int):
            seg_seeds = [mix(phi.seed, segment_hash(s)) for s in segs]
        else:
            seg_seeds = [int(s) for s in phi.seed]
            if len(seg_seeds) != len(segs):
                raise ConfigError(
                    f"phi seed tuple has {len(seg_seeds)} entries for {len(segs)} segments"
                )
        if phi.batch < 2:
            raise ConfigError(f"phi batch must be >= 2, got {phi.batch}")
        for j, segp in enumerate(seg_progs):
            episodes: list[Episode] = []
            aborted = 0
            for b in range(phi.batch):
                out = self.rollout(
                    ckpt, segp, (mix(seg_seeds[j], b),), record_player=True
                )
                if out.aborted:
                    aborted += 1
                    continue
                episodes.append(
                    Episode(
                        steps=out.segment_player_steps[0],
                        reward=out.segment_rewards[0][self.player_name],
                    )
                )
            if aborted:
                flags.append(f"segment_{j}_aborted_{aborted}")
            if not any(ep.steps for ep in episodes):
                flags.append(f"segment_{j}_no_player_elicit")
                continue
            if len(episodes) < 2:
                raise TrainingError(
                    f"segment {j}: only {len(episodes)} usable episodes of {phi.batch}"
                )
            new = train_policy_gradient(
                ckpt,
                episodes,
                phi.eta,
                seed=seg_seeds[j],
                reward_scale=phi.reward_scale,
                reward_shift=phi.reward_shift,
            )
            if new is ckpt:
                flags.append(f"segment_{j}_zero_variance")
            ckpt = new
        return ckpt, flags


@dataclass
class TransferResult:
    value_exact: Fraction
    before_exact: Fraction
    after_exact: Fraction
    trained: Checkpoint
    flags: list[str]

    @property
    def value(self) -> float:
        return float(self.value_exact)


def transfer(
    ev: Evaluator,
    ckpt: Checkpoint,
    g: Program,
    h: Program,
    plan: EvalPlan,
    phi: PhiParams,
) -> TransferResult:
    """T_G(H) at ckpt: how much training on g moves the score of h."""
    before = ev.score_exact(ckpt, h, plan)
    trained, flags = ev.train_phi(ckpt, g, phi)
    after = ev.score_exact(trained, h, plan)
    return TransferResult(
        value_exact=after - before,
        before_exact=before,
        after_exact=after,
        trained=trained,
        flags=flags,
    )


# === curriculum history ===


@dataclass
class HistoryStep:
    game: Program
    phi_seed: SeedSpec
    batch: int
    eta: float
    flags: tuple[str, ...] = ()


class History:
    """Games chosen so far plus the checkpoint trajectory they produced.

    archive="full" keeps every checkpoint (needed by the strict gate and
    per-step telescoping audits); archive="latest" keeps only the
    first and latest.
    """

    def __init__(self, m0: Checkpoint, archive: str = "full") -> None:
        if archive not in ("full", "latest"):
            raise ConfigError(f"unknown archive mode {archive!r}")
        self.archive = archive
        self._first = m0
        self._last = m0
        self._checkpoints: list[Checkpoint] | None = [m0] if archive == "full" else None
        self.steps: list[HistoryStep] = []

    @property
    def k(self) -> int:
        return len(self.steps)

    @property
    def games(self) -> list[Program]:
        return [s.game for s in self.steps]

    @property
    def m_first(self) -> Checkpoint:
        return self._first

    @property
    def m_last(self) -> Checkpoint:
        return self._last

    def checkpoint(self, j: int) -> Checkpoint:
        if self._checkpoints is not None:
            return self._checkpoints[j]
        if j == 0:
            return self._first
        if j == self.k:
            return self._last
        raise ConfigError(
            f"checkpoint {j} not archived (mode 'latest' keeps only 0 and {self.k})"
        )

    def append(self, step: HistoryStep, new_ckpt: Checkpoint) -> None:
        self.steps.append(step)
        self._last = new_ckpt
        if self._checkpoints is not None:
            self._checkpoints.append(new_ckpt)


def fuse_steps(history: History, j: int, vocab=None) -> History:
    """Replace steps (j-1, j) with their concatenation.

    The fused step pins per-segment training seeds to exactly what the
    two original steps used, so rebuilding the fused history reproduces
    the same checkpoints bit for bit.  Requires the full archive.
    """
    if j < 1 or j >= history.k:
        raise ConfigError(f"fuse needs adjacent pair (j-1, j) with 1 <= j < {history.k}")
    if history.archive != "full":
        raise ConfigError("fusing needs the full checkpoint archive")

    def resolved(step: HistoryStep) -> list[int]:
        segs = segments(step.game)
        if isinstance(step.phi_seed, int):
            return [mix(step.phi_seed, segment_hash(s)) for s in segs]
        return list(step.phi_seed)

    a, b = history.steps[j - 1], history.steps[j]
    if (a.batch, a.eta) != (b.batch, b.eta):
        raise ConfigError("cannot fuse steps with different phi parameters")
    fused_game = concat(a.game, b.game, vocab)
    fused = HistoryStep(
        game=fused_game,
        phi_seed=tuple(resolved(a) + resolved(b)),
        batch=a.batch,
        eta=a.eta,
        flags=a.flags + b.flags,
    )
    out = History(history.m_first, archive="full")
    for i, step in enumerate(history.steps):
        if i == j - 1:
            out.append(fused, history.checkpoint(j + 1))
        elif i == j:
            continue
        else:
            out.append(step, history.checkpoint(i + 1))
    return out


# === candidate measurement and the positivity gate ===


@dataclass
class Measurements:
    """Everything the gate and the meta objective need about one candidate."""

    trained: Checkpoint
    new_to_old_exact: list[Fraction]  # T_H^{Mk}(G_j) for each old game
    t_self_exact: Fraction  # T_H^{Mk}(H)
    telescoped_exact: Fraction  # S_{Mk}(H) - S_{M0}(H)
    s_last_h_exact: Fraction  # S_{Mk}(H)
    old_to_new_exact: list[Fraction] | None  # per-step increments, full archive only
    phi_flags: list[str]

    def new_to_old(self) -> list[float]:
        return [float(x) for x in self.new_to_old_exact]


def measure_candidate(
    ev: Evaluator,
    history: History,
    h: Program,
    plan: EvalPlan,
    phi: PhiParams,
    want_old_to_new: bool = False,
) -> Measurements:
    mk = history.m_last
    s_before_h = ev.score_exact(mk, h, plan)
    trained, phi_flags = ev.train_phi(mk, h, phi)
    t_self = ev.score_exact(trained, h, plan) - s_before_h
    new_to_old = [
        ev.score_exact(trained, g, plan) - ev.score_exact(mk, g, plan)
        for g in history.games
    ]
    telescoped = s_before_h - ev.score_exact(history.m_first, h, plan)
    old_to_new = None
    if want_old_to_new:
        if history.archive != "full":
            raise ConfigError("per-step old-to-new transfers need the full archive")
        old_to_new = [
            ev.score_exact(history.checkpoint(j + 1), h, plan)
            - ev.score_exact(history.checkpoint(j), h, plan)
            for j in range(history.k)
        ]
    return Measurements(
        trained=trained,
        new_to_old_exact=new_to_old,
        t_self_exact=t_self,
        telescoped_exact=telescoped,
        s_last_h_exact=s_before_h,
        old_to_new_exact=old_to_new,
        phi_flags=phi_flags,
    )


@dataclass
class GateResult:
    accepted: bool
    mode: str
    new_to_old: list[float]
    new_to_old_clipped: list[float] | None
    old_to_new: list[float] | None
    t_self: float
    telescoped: float
    flags: list[str]
    measurements: Measurements


def gate_positive(
    ev: Evaluator,
    history: History,
    h: Program,
    plan: EvalPlan,
    phi: PhiParams,
    mode: str = "clipped",
    measurements: Measurements | None = None,
) -> GateResult:
    """Decide whether a candidate may join the curriculum.

    strict: every backward transfer onto an old game and every per-step
    forward transfer must be strictly positive; needs the full archive.
    An empty history accepts vacuously.  clipped: always accepted,
    negative terms recorded clipped at zero.  raw: always accepted,
    nothing clipped.
    """
    if mode not in ("strict", "clipped", "raw"):
        raise ConfigError(f"unknown gate mode {mode!r}")
    ms = measurements or measure_candidate(
        ev, history, h, plan, phi, want_old_to_new=(mode == "strict")
    )
    if mode == "strict" and ms.old_to_new_exact is None:
        ms = replace(
            ms,
            old_to_new_exact=[
                ev.score_exact(history.checkpoint(j + 1), h, plan)
                - ev.score_exact(history.checkpoint(j), h, plan)
                for j in range(history.k)
            ],
        )
    flags = list(ms.phi_flags)
    clipped = None
    if mode == "strict":
        ok_back = all(x > 0 for x in ms.new_to_old_exact)
        ok_fwd = all(x > 0 for x in ms.old_to_new_exact or [])
        accepted = ok_back and ok_fwd
    else:
        accepted = True
        if mode == "clipped":
            clipped = [max(float(x), 0.0) for x in ms.new_to_old_exact]
            if any(x < 0 for x in ms.new_to_old_exact):
                flags.append("clipped_negative_transfer")
    return GateResult(
        accepted=accepted,
        mode=mode,
        new_to_old=ms.new_to_old(),
        new_to_old_clipped=clipped,
        old_to_new=[float(x) for x in ms.old_to_new_exact] if ms.old_to_new_exact else None,
        t_self=float(ms.t_self_exact),
        telescoped=float(ms.telescoped_exact),
        flags=flags,
        measurements=ms,
    )
