"""The curriculum loop: propose, gate, evaluate, pick, train, persist.

Each step proposes C candidate games, measures every candidate against
the history (one shared evaluation plan per step), drops gate failures,
ranks survivors by the meta objective (ties: shorter source, then
lexicographic), trains the player on the winner, and appends it to the
history.  A step whose every candidate fails is retried with fresh
proposals up to loop.retries times and then recorded as failed.

A run writes a replayable directory:

  config.json               the full config
  steps.jsonl               one record per step
  candidates/step-N.jsonl   every candidate's measurement for audit
  games/step-N.sxgl         the chosen game, verbatim
  checkpoints/init.*        the initial player
  checkpoints/step-N.*      the player after each step

Nothing in it depends on wall-clock state, so rerunning from
config.json reproduces every file bit for bit.
"""

from __future__ import annotations

import json
import math
import shutil
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .corpus import TruncationWarning, emit, sample_game
from .errors import ConfigError, EstimationError, TrainingError, TransportError, XentError
from .meta import evaluate
from .models import RemoteBackend, load_checkpoint, save_checkpoint
from .seeds import mix
from .sxgl import Program, code_length, concat, is_instruction_text, parse
from .transfer import (
    Evaluator,
    EvalPlan,
    History,
    HistoryStep,
    PhiParams,
    gate_positive,
    make_plan,
    measure_candidate,
)

_PLAN_STREAM = 11
_PHI_STREAM = 22
_SAMPLER_STREAM = 33


@dataclass
class Candidate:
    program: Program
    origin: str


@dataclass
class CandidateRecord:
    origin: str
    source: str
    l: int
    accepted: bool
    o: float
    breakdown: dict | None
    gate: dict | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "origin": self.origin,
            "source": self.source,
            "l": self.l,
            "accepted": self.accepted,
            "o": self.o if math.isfinite(self.o) else None,
            "breakdown": self.breakdown,
            "gate": self.gate,
            "error": self.error,
        }


@dataclass
class StepRecord:
    k: int
    chosen_source: str | None
    chosen_origin: str | None
    breakdown: dict | None
    novel: bool | None
    theta_new: float | None
    maintenance: list[float] | None
    plan_seed: int
    phi_seed: int
    failed: bool
    flags: list[str]
    candidates: list[CandidateRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "chosen_source": self.chosen_source,
            "chosen_origin": self.chosen_origin,
            "breakdown": self.breakdown,
            "novel": self.novel,
            "theta_new": self.theta_new,
            "maintenance": self.maintenance,
            "plan_seed": self.plan_seed,
            "phi_seed": self.phi_seed,
            "failed": self.failed,
            "flags": sorted(self.flags),
        }


# === samplers ===


class Sampler:
    """Candidate game proposers: template, mutation, remote_llm."""

    def __init__(self, config: Config) -> None:
        self.spec = config.sampler
        self.config = config
        self.texts = config.sampler_texts()
        self.emit_params = config.emit_params()
        self._remote: RemoteBackend | None = None
        if self.spec.kind == "remote_llm":
            if not self.spec.adapter_url:
                raise ConfigError("remote_llm sampler needs adapter_url")
            self._remote = RemoteBackend(
                self.spec.adapter_url,
                self.emit_params.vocab,
                model_id=self.spec.model_id,
            )

    def _template_one(self, rng: np.random.Generator) -> Candidate:
        name, game_map = sample_game(
            rng, self.emit_params, self.texts, self.spec.templates
        )
        return Candidate(emit(name, game_map, self.emit_params), f"template:{name}")

    def _mutate(self, rng: np.random.Generator, base: Program, history: History) -> Candidate:
        lines = base.source.splitlines() or ["x<<x"]
        op = ("insert_data", "delete_line", "rename_reg", "swap_judge", "concat_history")[
            int(rng.integers(0, 5))
        ]
        k, u = self.config.game.registers, self.config.models
        if op == "insert_data":
            text = self.texts[int(rng.integers(0, len(self.texts)))]
            lines.insert(int(rng.integers(0, len(lines) + 1)), text)
        elif op == "delete_line" and len(lines) > 1:
            del lines[int(rng.integers(0, len(lines)))]
        elif op == "rename_reg":
            i, j = rng.choice(k, size=2, replace=False)
            tmp = chr(0)
            lines = [
                ln.replace(f"s{i}", tmp).replace(f"s{j}", f"s{i}").replace(tmp, f"s{j}")
                for ln in lines
            ]
        elif op == "swap_judge":
            target = f"m{int(rng.integers(0, u))}"
            idxs = [n for n, ln in enumerate(lines) if ln.startswith("x<<m")]
            if idxs:
                lines[idxs[int(rng.integers(0, len(idxs)))]] = f"x<<{target}"
        elif op == "concat_history" and history.games:
            other = history.games[int(rng.integers(0, len(history.games)))]
            return Candidate(
                concat(base, other, self.emit_params.vocab), "mutation:concat_history"
            )
        return Candidate(
            parse("\n".join(lines), k=k, u=u, vocab=self.emit_params.vocab),
            f"mutation:{op}",
        )

    def _remote_one(self, rng: np.random.Generator, seed: int) -> Candidate:
        assert self._remote is not None
        text = self._remote.generate(self.spec.prompt, max_tokens=256, seed=seed)
        if "```" in text:
            inner = text.split("```")[1]
            text = inner.split("\n", 1)[1] if "\n" in inner else inner
        program = parse(
            text.strip("\n"),
            k=self.config.game.registers,
            u=self.config.models,
            vocab=self.emit_params.vocab,
        )
        n_instr = sum(1 for ln in program.source.splitlines() if
                      is_instruction_text(ln, program.k, program.u))
        if n_instr == 0:
            raise ConfigError("remote candidate has no instruction lines")
        return Candidate(program, "remote")

    def propose(
        self, history: History, count: int, step_index: int, attempt: int
    ) -> tuple[list[Candidate], list[str]]:
        rng = np.random.default_rng(
            mix(self.spec.seed, _SAMPLER_STREAM, step_index, attempt)
        )
        flags: list[str] = []
        out: list[Candidate] = []
        seen: set[str] = set()
        tries = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            while len(out) < count and tries < 50 * count:
                tries += 1
                try:
                    if self.spec.kind == "mutation" and (history.games or out):
                        pool = history.games + [c.program for c in out]
                        base = pool[int(rng.integers(0, len(pool)))]
                        cand = self._mutate(rng, base, history)
                    elif self.spec.kind == "remote_llm":
                        cand = self._remote_one(
                            rng, mix(self.spec.seed, step_index, tries)
                        )
                    else:
                        cand = self._template_one(rng)
                except TransportError:
                    flags.append("remote_fallback")
                    cand = self._template_one(rng)
                except (ConfigError, XentError):
                    continue
                if code_length(cand.program) > self.config.loop.l_max:
                    continue
                if cand.program.source in seen:
                    continue
                seen.add(cand.program.source)
                out.append(cand)
            tries = 0
            while len(out) < count:  # duplicates beat an undersized batch
                tries += 1
                if tries > 50 * count:
                    raise ConfigError(
                        f"cannot propose {count} candidates within l_max="
                        f"{self.config.loop.l_max}"
                    )
                cand = self._template_one(rng)
                if code_length(cand.program) > self.config.loop.l_max:
                    continue
                flags.append("proposal_padding")
                out.append(cand)
        return out, flags


# === one step ===


def cog_step(
    ev: Evaluator,
    history: History,
    sampler: Sampler,
    config: Config,
    step_index: int,
) -> StepRecord:
    loop = config.loop
    plan_seed = mix(loop.master_seed, _PLAN_STREAM, step_index)
    phi_seed = mix(loop.master_seed, _PHI_STREAM, step_index)
    plan = make_plan(plan_seed, config.plan.n_rollouts, config.plan.player)
    phi = PhiParams(
        batch=config.phi.batch,
        eta=config.phi.eta,
        seed=phi_seed,
        reward_scale=config.phi.reward_scale,
        reward_shift=config.phi.reward_shift,
    )
    flags: list[str] = []
    records: list[CandidateRecord] = []
    survivors: list = []  # (breakdown, candidate, measurements)

    for attempt in range(loop.retries + 1):
        candidates, prop_flags = sampler.propose(
            history, loop.candidates, step_index, attempt
        )
        flags += prop_flags
        records = []
        survivors = []
        for cand in candidates:
            rec = CandidateRecord(
                origin=cand.origin,
                source=cand.program.source,
                l=code_length(cand.program),
                accepted=False,
                o=-math.inf,
                breakdown=None,
                gate=None,
            )
            records.append(rec)
            try:
                ms = measure_candidate(
                    ev,
                    history,
                    cand.program,
                    plan,
                    phi,
                    want_old_to_new=(loop.gate_mode == "strict"),
                )
                gate = gate_positive(
                    ev, history, cand.program, plan, phi, loop.gate_mode, ms
                )
                rec.gate = {
                    "accepted": gate.accepted,
                    "new_to_old": gate.new_to_old,
                    "old_to_new": gate.old_to_new,
                    "t_self": gate.t_self,
                    "telescoped": gate.telescoped,
                    "flags": sorted(gate.flags),
                }
                if not gate.accepted:
                    continue
                ob = evaluate(
                    ev,
                    history,
                    cand.program,
                    plan,
                    phi,
                    config.meta,
                    mode=loop.gate_mode,
                    measurements=ms,
                )
                rec.accepted = True
                rec.o = ob.o
                rec.breakdown = ob.to_dict()
                if math.isfinite(ob.o):
                    survivors.append((ob, cand, ms))
            except (TrainingError, EstimationError) as e:
                rec.error = f"{type(e).__name__}: {e}"
        if survivors:
            break
        flags.append(f"cul_de_sac_attempt_{attempt}")

    if not survivors:
        return StepRecord(
            k=history.k,
            chosen_source=None,
            chosen_origin=None,
            breakdown=None,
            novel=None,
            theta_new=None,
            maintenance=None,
            plan_seed=plan_seed,
            phi_seed=phi_seed,
            failed=True,
            flags=flags + ["cul_de_sac"],
            candidates=records,
        )

    survivors.sort(key=lambda t: (-t[0].o, t[0].l, t[1].program.source))
    best_ob, best_cand, best_ms = survivors[0]
    theta = loop.theta_coeff * abs(float(best_ms.s_last_h_exact)) + loop.theta_floor
    novel = float(best_ms.telescoped_exact) < theta
    history.append(
        HistoryStep(
            game=best_cand.program,
            phi_seed=phi_seed,
            batch=phi.batch,
            eta=phi.eta,
            flags=tuple(best_ms.phi_flags),
        ),
        best_ms.trained,
    )
    maintenance = None
    if loop.maintenance:
        maintenance = [
            float(ev.score_exact(history.m_last, g, plan)) for g in history.games
        ]
    return StepRecord(
        k=history.k - 1,
        chosen_source=best_cand.program.source,
        chosen_origin=best_cand.origin,
        breakdown=best_ob.to_dict(),
        novel=novel,
        theta_new=theta,
        maintenance=maintenance,
        plan_seed=plan_seed,
        phi_seed=phi_seed,
        failed=False,
        flags=flags,
        candidates=records,
    )


# === the loop and its run directory ===


@dataclass
class RunResult:
    run_dir: Path
    history: History
    steps: list[StepRecord]


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_loop(config: Config, steps: int, out_dir: str | Path) -> RunResult:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"run directory {out} exists and is not empty")
    (out / "candidates").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "games").mkdir(exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(config.model_dump(), sort_keys=True, indent=1)
    )
    ext = ".json" if config.checkpoint_format == "json" else ".npz"

    if config.loop.gate_mode == "strict" and config.loop.archive_mode != "full":
        raise ConfigError("strict gating needs the full checkpoint archive")
    ev = Evaluator(config)
    ckpt = ev.init_player()
    save_checkpoint(ckpt, out / "checkpoints" / f"init{ext}")
    history = History(ckpt, archive=config.loop.archive_mode)
    sampler = Sampler(config)
    records: list[StepRecord] = []

    with open(out / "steps.jsonl", "w") as steps_f:
        for i in range(steps):
            rec = cog_step(ev, history, sampler, config, i)
            records.append(rec)
            steps_f.write(_dump(rec.to_dict()) + "\n")
            with open(out / "candidates" / f"step-{i}.jsonl", "w") as cf:
                for cr in rec.candidates:
                    cf.write(_dump(cr.to_dict()) + "\n")
            if rec.failed:
                # a cul-de-sac step would only repeat; stop with the record
                break
            (out / "games" / f"step-{i}.sxgl").write_text(rec.chosen_source or "")
            save_checkpoint(history.m_last, out / "checkpoints" / f"step-{i}{ext}")
    return RunResult(run_dir=out, history=history, steps=records)


def load_history(run_dir: str | Path, config: Config | None = None) -> tuple[Config, History]:
    """Rebuild a full-archive History from a run directory on disk."""
    src = Path(run_dir)
    cfg = config or Config.model_validate(json.loads((src / "config.json").read_text()))
    ext = ".json" if cfg.checkpoint_format == "json" else ".npz"
    m0 = load_checkpoint(src / "checkpoints" / f"init{ext}")
    history = History(m0, archive="full")
    vocab = cfg.vocab.build()
    if (src / "steps.jsonl").exists():
        with open(src / "steps.jsonl") as fh:
            for raw in fh:
                rec = json.loads(raw)
                if rec.get("failed"):
                    continue
                i = rec["k"]
                game = parse(
                    (src / "games" / f"step-{i}.sxgl").read_text(),
                    k=cfg.game.registers,
                    u=cfg.models,
                    vocab=vocab,
                )
                ckpt = load_checkpoint(src / "checkpoints" / f"step-{i}{ext}")
                history.append(
                    HistoryStep(
                        game=game,
                        phi_seed=rec["phi_seed"],
                        batch=cfg.phi.batch,
                        eta=cfg.phi.eta,
                        flags=(),
                    ),
                    ckpt,
                )
    return cfg, history


@dataclass
class ReplayReport:
    match: bool
    mismatches: list[str]


def _compare_trees(a: Path, b: Path, mismatches: list[str]) -> None:
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    if files_a != files_b:
        mismatches.append(f"file sets differ: {files_a} vs {files_b}")
        return
    for rel in files_a:
        pa, pb = a / rel, b / rel
        if pa.suffix in (".json", ".jsonl", ".sxgl"):
            if pa.read_text() != pb.read_text():
                mismatches.append(f"{rel}: text differs")
        elif pa.suffix == ".npz":
            ca, cb = load_checkpoint(pa), load_checkpoint(pb)
            if ca.fingerprint() != cb.fingerprint():
                mismatches.append(f"{rel}: checkpoint differs")
        elif pa.read_bytes() != pb.read_bytes():
            mismatches.append(f"{rel}: bytes differ")


def replay(run_dir: str | Path) -> ReplayReport:
    """Re-run a directory from its config and verify bit-identical output."""
    src = Path(run_dir)
    config = Config.model_validate(json.loads((src / "config.json").read_text()))
    n_steps = sum(1 for _ in open(src / "steps.jsonl"))
    tmp = Path(tempfile.mkdtemp(prefix="xentlab-replay-"))
    try:
        run_loop(config, n_steps, tmp / "run")
        mismatches: list[str] = []
        _compare_trees(src, tmp / "run", mismatches)
        return ReplayReport(match=not mismatches, mismatches=mismatches)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
