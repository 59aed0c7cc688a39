"""The SXGL interpreter.

One run executes a program segment by segment.  A segment begins with
completely fresh state (registers, contexts, scores, prefix, judge,
input binding, RNG) and ends at its x<<x line, which pushes each
model's raw score register into its reward (the ensure nonlinearity is
applied only by the explicit x>>m flush).  Segment randomness is seeded
as mix(rollout_seed, segment_text_hash), so a segment behaves
bit-identically whether it runs standalone or inside a concatenation.

Aborts (copy overflow, a data-pull on a segment's first line) zero all
rewards for the whole run and mark the outcome.

Trace entries are dicts with stable keys: line, op, segment,
reward_deltas, caret_moves, plus op-specific extras (xent, sampled,
model, context_truncated).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError, CopyOverflowError
from .models import Backend
from .seeds import mix
from .sxgl import Line, Program, segment_hash, segments
from .tokens import (
    Vocab,
    append_advance,
    copy_into_left,
    fill_left_region,
    move_caret,
    new_register,
    nonpad,
)
from .xent import ensure, xent


@dataclass(frozen=True)
class RunParams:
    length: int = 16
    lam: float = 2.0
    p_min: float = 1e-6
    max_context: int = 64
    default_judge: str = "m0"
    temperature: float = 1.0


Steps = tuple[tuple[tuple[int, ...], int], ...]


@dataclass
class GameOutcome:
    rewards: dict[str, float]
    segment_rewards: list[dict[str, float]]
    segment_player_steps: list[Steps]
    seeds: list[int]
    aborted: str | None = None
    trace: list[dict] | None = None

    def reward_vector(self, names: Sequence[str]) -> list[float]:
        return [self.rewards[n] for n in names]


class _Abort(Exception):
    def __init__(self, tag: str) -> None:
        super().__init__(tag)
        self.tag = tag


def resolve_seeds(seeds: int | Sequence[int], segs: list[tuple[Line, ...]]) -> list[int]:
    """int seed -> one derived seed per segment, keyed by segment text."""
    if isinstance(seeds, int):
        return [mix(seeds, segment_hash(seg)) for seg in segs]
    out = [int(s) for s in seeds]
    if len(out) != len(segs):
        raise ConfigError(f"got {len(out)} seeds for {len(segs)} segments")
    return out


def run(
    program: Program,
    pool: dict[str, Backend],
    params: RunParams,
    seeds: int | Sequence[int],
    vocab: Vocab,
    want_trace: bool = False,
    player: str | None = None,
) -> GameOutcome:
    segs = segments(program)
    seg_seeds = resolve_seeds(seeds, segs)
    names = [f"m{i}" for i in range(program.u)]
    for n in set(names) | {params.default_judge}:
        if n not in pool:
            raise ConfigError(f"no backend bound for {n}")

    trace: list[dict] | None = [] if want_trace else None
    segment_rewards: list[dict[str, float]] = []
    segment_steps: list[Steps] = []
    aborted: str | None = None
    pad = vocab.pad_id
    offset = 0

    for si, seg in enumerate(segs):
        regs = [new_register(params.length, pad) for _ in range(program.k)]
        contexts: dict[str, tuple[int, ...]] = {n: () for n in names}
        scores: dict[str, float] = {n: 0.0 for n in names}
        seg_reward: dict[str, float] = {n: 0.0 for n in names}
        steps: list[tuple[tuple[int, ...], int]] = []
        prefix: tuple[int, ...] = ()
        judge = params.default_judge
        input_reg: int | None = None
        seg_seed = seg_seeds[si]
        draw = 0

        def sample_from(mn: str, n_tok: int) -> list[int]:
            nonlocal draw
            if n_tok == 0:
                return []
            ctx = contexts[mn]
            toks = pool[mn].sample(ctx, n_tok, params.temperature, mix(seg_seed, draw))
            draw += 1
            if mn == player:
                for i, t in enumerate(toks):
                    steps.append((ctx + tuple(toks[:i]), t))
            return toks

        def judge_xent() -> tuple[float, bool]:
            target = () if input_reg is None else regs[input_reg].written()
            val = xent(pool[judge], target, prefix, params.p_min)
            truncated = len(prefix) + len(target) - 1 > params.max_context
            return val, truncated

        def bounded(seq: tuple[int, ...], entry: dict) -> tuple[int, ...]:
            if len(seq) > params.max_context:
                entry["context_truncated"] = True
                return seq[-params.max_context :]
            return seq

        try:
            for li, line in enumerate(seg):
                if line.instr is None:
                    continue
                instr = line.instr
                lhs, op, rhs = instr.lhs, instr.op, instr.rhs
                entry: dict = {
                    "line": offset + li,
                    "op": str(instr),
                    "segment": si,
                    "reward_deltas": {},
                    "caret_moves": {},
                }
                pair = (lhs.kind, op, rhs.kind)

                if pair == ("x", "<<", "x"):
                    for n in names:
                        val = scores[n]
                        seg_reward[n] += val
                        scores[n] = 0.0
                        if val != 0.0:
                            entry["reward_deltas"][n] = val
                elif pair == ("x", ">>", "x"):
                    prefix = ()
                elif pair == ("x", "<<", "s"):
                    input_reg = rhs.index
                elif pair == ("x", ">>", "s"):
                    old = regs[rhs.index].caret
                    regs[rhs.index] = move_caret(regs[rhs.index], 1)
                    entry["caret_moves"][f"s{rhs.index}"] = [old, regs[rhs.index].caret]
                elif pair == ("x", "<<", "m"):
                    judge = f"m{rhs.index}"
                elif pair == ("x", ">>", "m"):
                    mn = f"m{rhs.index}"
                    val = ensure(scores[mn], params.lam)
                    seg_reward[mn] += val
                    scores[mn] = 0.0
                    if val != 0.0:
                        entry["reward_deltas"][mn] = val
                elif pair == ("s", "<<", "x"):
                    old = regs[lhs.index].caret
                    regs[lhs.index] = move_caret(regs[lhs.index], -1)
                    entry["caret_moves"][f"s{lhs.index}"] = [old, regs[lhs.index].caret]
                elif pair == ("s", ">>", "x"):
                    prefix = bounded(
                        prefix + nonpad(regs[lhs.index].unwritten(), pad), entry
                    )
                elif pair == ("s", "<<", "m"):
                    mn = f"m{rhs.index}"
                    reg = regs[lhs.index]
                    toks = sample_from(mn, reg.length - reg.caret)
                    old = reg.caret
                    regs[lhs.index] = append_advance(reg, toks)
                    entry["caret_moves"][f"s{lhs.index}"] = [old, regs[lhs.index].caret]
                    entry["sampled"] = toks
                    entry["model"] = mn
                elif pair == ("s", ">>", "m"):
                    mn = f"m{rhs.index}"
                    contexts[mn] = bounded(
                        contexts[mn] + regs[lhs.index].written(), entry
                    )
                elif pair == ("s", "<<", "s"):
                    if lhs.index == rhs.index:
                        if li == 0:
                            raise _Abort("missing_previous_line")
                        toks = vocab.encode(seg[li - 1].raw)
                    else:
                        toks = regs[rhs.index].unwritten()
                    old = regs[lhs.index].caret
                    regs[lhs.index] = append_advance(regs[lhs.index], toks)
                    entry["caret_moves"][f"s{lhs.index}"] = [old, regs[lhs.index].caret]
                elif pair == ("s", ">>", "s"):
                    if lhs.index == rhs.index:
                        if li == 0:
                            raise _Abort("missing_previous_line")
                        toks = vocab.encode(seg[li - 1].raw)
                        regs[lhs.index] = fill_left_region(regs[lhs.index], toks)
                    else:
                        try:
                            old = regs[rhs.index].caret
                            regs[rhs.index] = copy_into_left(
                                regs[rhs.index], regs[lhs.index]
                            )
                            entry["caret_moves"][f"s{rhs.index}"] = [
                                old,
                                regs[rhs.index].caret,
                            ]
                        except CopyOverflowError:
                            raise _Abort("copy_overflow") from None
                elif pair == ("m", "<<", "x"):
                    mn = f"m{lhs.index}"
                    val, truncated = judge_xent()
                    scores[mn] += val
                    entry["xent"] = val
                    entry["context_truncated"] = truncated
                elif pair == ("m", ">>", "x"):
                    mn = f"m{lhs.index}"
                    val, truncated = judge_xent()
                    scores[mn] -= val
                    entry["xent"] = val
                    entry["context_truncated"] = truncated
                elif pair == ("m", "<<", "s"):
                    mn = f"m{lhs.index}"
                    contexts[mn] = bounded(
                        contexts[mn] + regs[rhs.index].unwritten(), entry
                    )
                elif pair == ("m", ">>", "s"):
                    mn = f"m{lhs.index}"
                    reg = regs[rhs.index]
                    toks = sample_from(mn, reg.caret)
                    regs[rhs.index] = fill_left_region(reg, toks)
                    entry["sampled"] = toks
                    entry["model"] = mn
                elif pair == ("m", "<<", "m"):
                    ml, mr = f"m{lhs.index}", f"m{rhs.index}"
                    if ml == mr:
                        contexts[ml] = ()
                    else:
                        contexts[ml] = contexts[mr]
                        contexts[mr] = ()
                elif pair == ("m", ">>", "m"):
                    ml, mr = f"m{lhs.index}", f"m{rhs.index}"
                    if ml == mr:
                        scores[ml] = 0.0
                    else:
                        scores[mr] += scores[ml]
                        scores[ml] = 0.0

                if trace is not None:
                    trace.append(entry)
        except _Abort as a:
            aborted = a.tag
            if trace is not None:
                trace.append(
                    {
                        "line": offset + li,
                        "op": str(line.instr) if line.instr else None,
                        "segment": si,
                        "reward_deltas": {},
                        "caret_moves": {},
                        "abort": a.tag,
                    }
                )

        segment_rewards.append(seg_reward)
        segment_steps.append(tuple(steps))
        offset += len(seg)
        if aborted:
            break

    if aborted:
        rewards = {n: 0.0 for n in names}
        segment_rewards = [{n: 0.0 for n in names} for _ in segment_rewards]
        segment_steps = [() for _ in segment_steps]
    else:
        rewards = {
            n: sum(sr[n] for sr in segment_rewards) for n in names
        }

    return GameOutcome(
        rewards=rewards,
        segment_rewards=segment_rewards,
        segment_player_steps=segment_steps,
        seeds=seg_seeds,
        aborted=aborted,
        trace=trace,
    )
