"""Curriculum loop: proposal samplers, single steps, run directories."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from xentlab.config import Config, apply_overrides, default_config
from xentlab.curriculum import (
    CandidateRecord,
    Sampler,
    StepRecord,
    cog_step,
    load_history,
    replay,
    run_loop,
)
from xentlab.errors import ConfigError, TransportError
from xentlab.seeds import mix
from xentlab.sxgl import code_length, parse
from xentlab.transfer import Evaluator, History, HistoryStep, PhiParams

FAST = [
    "game.length=8",
    "plan.n_rollouts=2",
    "phi.batch=2",
    "phi.eta=0.05",
    "loop.candidates=3",
    "loop.retries=1",
    "sampler.elicit_len=2",
    "sampler.feedback_len=2",
]


def cfg_with(*extra: str) -> Config:
    return apply_overrides(default_config(), FAST + list(extra))


def fresh(cfg: Config) -> tuple[Evaluator, History, Sampler]:
    ev = Evaluator(cfg)
    return ev, History(ev.init_player(), archive=cfg.loop.archive_mode), Sampler(cfg)


def grown(ev: Evaluator, hist: History, cfg: Config, source: str) -> None:
    """Train one real step into the history so k > 0."""
    game = parse(source, k=cfg.game.registers, u=cfg.models)
    phi = PhiParams(batch=cfg.phi.batch, eta=cfg.phi.eta, seed=415)
    new, flags = ev.train_phi(hist.m_last, game, phi)
    hist.append(
        HistoryStep(game=game, phi_seed=415, batch=phi.batch, eta=phi.eta,
                    flags=tuple(flags)),
        new,
    )


# --- proposal sampling ---


class TestPropose:
    def test_deterministic_per_seed_step_attempt(self):
        cfg = cfg_with()
        _, hist, sampler = fresh(cfg)
        a, fa = sampler.propose(hist, 5, step_index=0, attempt=0)
        b, fb = sampler.propose(hist, 5, step_index=0, attempt=0)
        assert [c.program.source for c in a] == [c.program.source for c in b]
        assert [c.origin for c in a] == [c.origin for c in b]
        assert fa == fb
        c, _ = sampler.propose(hist, 5, step_index=0, attempt=1)
        assert [x.program.source for x in c] != [x.program.source for x in a]

    def test_sources_are_deduplicated(self):
        cfg = cfg_with()
        _, hist, sampler = fresh(cfg)
        out, flags = sampler.propose(hist, 6, step_index=1, attempt=0)
        sources = [c.program.source for c in out]
        assert len(set(sources)) == 6
        assert "proposal_padding" not in flags

    def test_template_origins_name_the_template(self):
        cfg = cfg_with()
        _, hist, sampler = fresh(cfg)
        out, _ = sampler.propose(hist, 6, step_index=2, attempt=0)
        for cand in out:
            kind, _, name = cand.origin.partition(":")
            assert kind == "template"
            assert name

    def test_l_max_bounds_every_candidate(self):
        cfg = cfg_with("loop.l_max=80")
        _, hist, sampler = fresh(cfg)
        out, _ = sampler.propose(hist, 6, step_index=0, attempt=0)
        assert all(code_length(c.program) <= 80 for c in out)

    def test_unreachable_l_max_is_an_error(self):
        cfg = cfg_with("loop.l_max=4")
        _, hist, sampler = fresh(cfg)
        with pytest.raises(ConfigError):
            sampler.propose(hist, 2, step_index=0, attempt=0)

    def test_exhausted_space_pads_with_duplicates(self):
        # one template on one text admits exactly one distinct game
        cfg = cfg_with(
            'sampler.templates=["pretraining"]', 'sampler.texts=["abcd"]'
        )
        _, hist, sampler = fresh(cfg)
        out, flags = sampler.propose(hist, 3, step_index=0, attempt=0)
        assert len(out) == 3
        assert len({c.program.source for c in out}) == 1
        assert flags.count("proposal_padding") == 2


class TestMutationSampler:
    def test_empty_history_starts_from_a_template(self):
        cfg = cfg_with("sampler.kind=mutation")
        _, hist, sampler = fresh(cfg)
        out, _ = sampler.propose(hist, 6, step_index=0, attempt=0)
        assert out[0].origin.startswith("template:")
        assert any(c.origin.startswith("mutation:") for c in out[1:])

    def test_each_operator_yields_a_parsed_program(self):
        cfg = cfg_with("sampler.kind=mutation")
        ev, hist, sampler = fresh(cfg)
        base = parse(
            "x<<m1\nsome data line\nx<<s0\nm0>>x\nx<<x",
            k=cfg.game.registers,
            u=cfg.models,
        )
        hist.append(
            HistoryStep(game=base, phi_seed=0, batch=2, eta=0.0), ev.init_player()
        )
        seen: set[str] = set()
        for seed in range(200):
            cand = sampler._mutate(np.random.default_rng(seed), base, hist)
            op = cand.origin.removeprefix("mutation:")
            seen.add(op)
            assert cand.program.k == base.k and cand.program.u == base.u
            if op == "insert_data":
                assert len(cand.program.source.splitlines()) == 6
            elif op == "delete_line":
                assert len(cand.program.source.splitlines()) == 4
            elif op == "rename_reg":
                assert len(cand.program.source.splitlines()) == 5
            elif op == "swap_judge":
                judged = [
                    ln
                    for ln in cand.program.source.splitlines()
                    if ln.startswith("x<<m")
                ]
                assert len(judged) == 1
            elif op == "concat_history":
                assert cand.program.source.startswith(base.source)
                assert code_length(cand.program) == 2 * code_length(base) + 1
        assert seen == {
            "insert_data",
            "delete_line",
            "rename_reg",
            "swap_judge",
            "concat_history",
        }

    def test_rename_swaps_registers_both_ways(self):
        cfg = cfg_with("sampler.kind=mutation")
        ev, hist, sampler = fresh(cfg)
        base = parse("x<<s0\ns1>>x\nx<<x", k=cfg.game.registers, u=cfg.models)
        for seed in range(200):
            cand = sampler._mutate(np.random.default_rng(seed), base, hist)
            if cand.origin == "mutation:rename_reg":
                lines = cand.program.source.splitlines()
                regs = sorted(ln[-2:] if ln[0] == "x" else ln[:2] for ln in lines[:2])
                assert len(set(regs)) == 2  # a clean swap never merges registers
                break
        else:
            pytest.fail("rename_reg never sampled")


class _StubRemote:
    def __init__(self, reply):
        self.reply = reply
        self.calls = 0

    def generate(self, prompt: str, max_tokens: int = 256, seed: int = 0) -> str:
        self.calls += 1
        if isinstance(self.reply, Exception):
            raise self.reply
        return self.reply


class TestRemoteSampler:
    def test_adapter_url_is_required(self):
        cfg = cfg_with("sampler.kind=remote_llm")
        with pytest.raises(ConfigError, match="adapter_url"):
            Sampler(cfg)

    def test_fenced_reply_is_unwrapped(self):
        cfg = cfg_with(
            "sampler.kind=remote_llm", "sampler.adapter_url=http://adapter"
        )
        _, hist, sampler = fresh(cfg)
        sampler._remote = _StubRemote("```sxgl\ns0<<m0\nx<<s0\nm0>>x\nx<<x\n```")
        out, flags = sampler.propose(hist, 1, step_index=0, attempt=0)
        assert out[0].origin == "remote"
        assert out[0].program.source == "s0<<m0\nx<<s0\nm0>>x\nx<<x"
        assert flags == []

    def test_transport_failure_falls_back_to_templates(self):
        cfg = cfg_with(
            "sampler.kind=remote_llm", "sampler.adapter_url=http://adapter"
        )
        _, hist, sampler = fresh(cfg)
        sampler._remote = _StubRemote(TransportError("adapter down"))
        out, flags = sampler.propose(hist, 2, step_index=0, attempt=0)
        assert "remote_fallback" in flags
        assert all(c.origin.startswith("template:") for c in out)

    def test_reply_without_instructions_is_rejected(self):
        cfg = cfg_with(
            "sampler.kind=remote_llm", "sampler.adapter_url=http://adapter"
        )
        _, hist, sampler = fresh(cfg)
        stub = _StubRemote("just prose, nothing executable")
        sampler._remote = stub
        out, flags = sampler.propose(hist, 1, step_index=0, attempt=0)
        assert stub.calls == 50  # every try rejected before padding kicks in
        assert [c.origin for c in out] != ["remote"]
        assert "proposal_padding" in flags


# --- one step ---


class TestCogStep:
    def test_trains_the_winner_into_the_history(self):
        cfg = cfg_with()
        ev, hist, sampler = fresh(cfg)
        before = hist.m_first.fingerprint()
        rec = cog_step(ev, hist, sampler, cfg, step_index=0)
        assert rec.failed is False
        assert rec.k == 0 and hist.k == 1
        assert rec.plan_seed == mix(cfg.loop.master_seed, 11, 0)
        assert rec.phi_seed == mix(cfg.loop.master_seed, 22, 0)
        assert len(rec.candidates) == cfg.loop.candidates
        assert rec.chosen_source in {r.source for r in rec.candidates}
        assert hist.games[0].source == rec.chosen_source
        assert hist.m_first.fingerprint() == before
        assert isinstance(rec.breakdown, dict) and math.isfinite(rec.breakdown["o"])
        assert rec.theta_new > 0
        assert isinstance(rec.novel, bool)
        assert rec.maintenance is not None and len(rec.maintenance) == 1

    def test_step_is_deterministic(self):
        cfg = cfg_with()
        recs = []
        for _ in range(2):
            ev, hist, sampler = fresh(cfg)
            recs.append(cog_step(ev, hist, sampler, cfg, step_index=0).to_dict())
        assert recs[0] == recs[1]

    def test_equal_objectives_break_ties_by_length_then_source(self):
        # eta=0 leaves the player untouched, so every candidate scores the
        # same objective and the ordering is decided purely by the tie key
        cfg = cfg_with("phi.eta=0.0")
        ev, hist, sampler = fresh(cfg)
        rec = cog_step(ev, hist, sampler, cfg, step_index=0)
        accepted = [r for r in rec.candidates if r.accepted]
        assert len(accepted) == len(rec.candidates)
        assert {r.o for r in accepted} == {0.0}
        want = min(accepted, key=lambda r: (r.l, r.source))
        assert rec.chosen_source == want.source
        assert rec.novel is True  # nothing telescopes when training is a no-op

    def test_maintenance_can_be_disabled(self):
        cfg = cfg_with("loop.maintenance=false")
        ev, hist, sampler = fresh(cfg)
        rec = cog_step(ev, hist, sampler, cfg, step_index=0)
        assert rec.maintenance is None

    def test_strict_gate_with_no_transfer_dead_ends(self):
        cfg = cfg_with("loop.gate_mode=strict", "phi.eta=0.0")
        ev, hist, sampler = fresh(cfg)
        grown(ev, hist, cfg, "s0<<m0\nx<<s0\nm0>>x\nx<<x")
        rec = cog_step(ev, hist, sampler, cfg, step_index=0)
        assert rec.failed is True
        assert "cul_de_sac" in rec.flags
        assert {"cul_de_sac_attempt_0", "cul_de_sac_attempt_1"} <= set(rec.flags)
        assert rec.chosen_source is None and rec.breakdown is None
        assert hist.k == 1  # nothing appended
        assert all(r.gate is not None and not r.gate["accepted"]
                   for r in rec.candidates)

    def test_strict_gate_vacuously_accepts_the_first_step(self):
        cfg = cfg_with("loop.gate_mode=strict", "phi.eta=0.0")
        ev, hist, sampler = fresh(cfg)
        rec = cog_step(ev, hist, sampler, cfg, step_index=0)
        assert rec.failed is False
        assert all(r.gate["accepted"] for r in rec.candidates)


class TestRecords:
    def test_candidate_to_dict_maps_non_finite_o_to_null(self):
        rec = CandidateRecord(
            origin="template:x", source="x<<x", l=4, accepted=False,
            o=-math.inf, breakdown=None, gate=None,
        )
        assert rec.to_dict()["o"] is None
        rec.o = 0.25
        assert rec.to_dict()["o"] == 0.25

    def test_step_to_dict_sorts_flags_and_omits_candidates(self):
        rec = StepRecord(
            k=0, chosen_source=None, chosen_origin=None, breakdown=None,
            novel=None, theta_new=None, maintenance=None, plan_seed=1,
            phi_seed=2, failed=True, flags=["zeta", "alpha"],
            candidates=[CandidateRecord("t", "x<<x", 4, False, 0.0, None, None)],
        )
        d = rec.to_dict()
        assert d["flags"] == ["alpha", "zeta"]
        assert "candidates" not in d
        json.dumps(d)  # records must serialize as-is


# --- the loop and its run directory ---


class TestRunLoop:
    def test_writes_the_documented_layout(self, tmp_path):
        cfg = cfg_with()
        out = tmp_path / "run"
        res = run_loop(cfg, 2, out)
        assert res.history.k == 2 and len(res.steps) == 2

        stored = Config.model_validate(json.loads((out / "config.json").read_text()))
        assert stored == cfg

        lines = (out / "steps.jsonl").read_text().splitlines()
        assert [json.loads(ln) for ln in lines] == [s.to_dict() for s in res.steps]
        for i, step in enumerate(res.steps):
            cand_lines = (out / "candidates" / f"step-{i}.jsonl").read_text().splitlines()
            assert [json.loads(ln) for ln in cand_lines] == [
                c.to_dict() for c in step.candidates
            ]
            assert (out / "games" / f"step-{i}.sxgl").read_text() == step.chosen_source
            assert (out / "checkpoints" / f"step-{i}.npz").exists()
            assert step.maintenance is not None and len(step.maintenance) == i + 1
            assert step.plan_seed == mix(cfg.loop.master_seed, 11, i)
        assert (out / "checkpoints" / "init.npz").exists()

    def test_refuses_a_non_empty_directory(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / "leftover.txt").write_text("old data")
        with pytest.raises(ConfigError, match="not empty"):
            run_loop(cfg_with(), 1, out)

    def test_zero_steps_still_persists_config_and_init(self, tmp_path):
        out = tmp_path / "run"
        res = run_loop(cfg_with(), 0, out)
        assert res.history.k == 0 and res.steps == []
        assert (out / "config.json").exists()
        assert (out / "steps.jsonl").read_text() == ""
        assert (out / "checkpoints" / "init.npz").exists()
        assert list((out / "games").iterdir()) == []

    def test_halts_once_a_step_dead_ends(self, tmp_path):
        cfg = cfg_with("loop.gate_mode=strict", "phi.eta=0.0", "loop.retries=0")
        out = tmp_path / "run"
        res = run_loop(cfg, 4, out)
        assert [s.failed for s in res.steps] == [False, True]
        assert res.history.k == 1
        assert len((out / "steps.jsonl").read_text().splitlines()) == 2
        assert sorted(p.name for p in (out / "games").iterdir()) == ["step-0.sxgl"]
        assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [
            "init.npz",
            "step-0.npz",
        ]

    def test_strict_gating_requires_the_full_archive(self, tmp_path):
        cfg = cfg_with("loop.gate_mode=strict", "loop.archive_mode=latest")
        with pytest.raises(ConfigError, match="archive"):
            run_loop(cfg, 1, tmp_path / "run")

    def test_json_checkpoint_format_round_trips(self, tmp_path):
        cfg = cfg_with("checkpoint_format=json")
        out = tmp_path / "run"
        res = run_loop(cfg, 1, out)
        assert (out / "checkpoints" / "init.json").exists()
        _, hist = load_history(out)
        assert hist.m_last.fingerprint() == res.history.m_last.fingerprint()

    def test_load_history_rebuilds_the_trajectory(self, tmp_path):
        out = tmp_path / "run"
        res = run_loop(cfg_with(), 2, out)
        cfg2, hist = load_history(out)
        assert hist.k == 2
        assert [g.source for g in hist.games] == [s.chosen_source for s in res.steps]
        assert hist.m_last.fingerprint() == res.history.m_last.fingerprint()
        assert hist.m_first.fingerprint() == res.history.m_first.fingerprint()

    def test_load_history_skips_failed_steps(self, tmp_path):
        cfg = cfg_with("loop.gate_mode=strict", "phi.eta=0.0", "loop.retries=0")
        out = tmp_path / "run"
        res = run_loop(cfg, 3, out)
        assert res.steps[-1].failed
        _, hist = load_history(out)
        assert hist.k == 1
        assert hist.m_last.fingerprint() == res.history.m_last.fingerprint()

    def test_replay_matches_bit_for_bit(self, tmp_path):
        out = tmp_path / "run"
        run_loop(cfg_with(), 2, out)
        report = replay(out)
        assert report.mismatches == []
        assert report.match is True

    def test_replay_flags_a_tampered_run(self, tmp_path):
        out = tmp_path / "run"
        run_loop(cfg_with(), 1, out)
        game = out / "games" / "step-0.sxgl"
        game.write_text(game.read_text() + "\nextra line")
        report = replay(out)
        assert report.match is False
        assert any("step-0.sxgl" in m for m in report.mismatches)
