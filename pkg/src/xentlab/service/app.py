"""HTTP surface over the core package.

The service is stateless between requests: each request resolves its
own config, builds an evaluator, runs, and returns JSON.  Run
directories written by /train live on the server's filesystem, which is
the local machine when the bundled CLI drives the app in process.
"""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import Config, apply_overrides, config_from_dict, default_config
from ..corpus import STUB_TEMPLATES, EmitParams, emit, list_templates, sample_game
from ..curriculum import load_history, replay, run_loop
from ..errors import ConfigError, XentError
from ..meta import evaluate
from ..models import Checkpoint, load_checkpoint
from ..sxgl import Program, code_length, parse, segments
from ..transfer import Evaluator, History, gate_positive, measure_candidate, transfer
from ..xent import anomaly_profile, contrast_delta, info_gain, tf_delta
from . import schemas as S


def _resolve_config(req: S.ConfiguredRequest) -> Config:
    cfg = config_from_dict(req.config) if req.config is not None else default_config()
    if req.overrides:
        cfg = apply_overrides(cfg, req.overrides)
    return cfg


def _parse_program(cfg: Config, ev: Evaluator, source: str) -> Program:
    return parse(source, k=cfg.game.registers, u=cfg.models, vocab=ev.vocab)


def _checkpoint(ev: Evaluator, path: str | None) -> Checkpoint:
    if path is None:
        return ev.init_player()
    ckpt = load_checkpoint(path)
    if ckpt.vocab_hash != ev.vocab.hash():
        raise ConfigError(f"checkpoint {path} was built for a different vocab")
    return ckpt


def _error_response(status: int, exc: Exception, category: str) -> JSONResponse:
    body = S.ErrorResponse(
        error=S.ErrorBody(
            type=type(exc).__name__, message=str(exc), category=category
        )
    )
    return JSONResponse(status_code=status, content=body.model_dump())


def create_app() -> FastAPI:
    app = FastAPI(title="xentlab", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(_req: Request, exc: ConfigError) -> JSONResponse:
        return _error_response(400, exc, "config")

    @app.exception_handler(XentError)
    async def _runtime_error(_req: Request, exc: XentError) -> JSONResponse:
        return _error_response(409, exc, "runtime")

    @app.exception_handler(RequestValidationError)
    async def _validation_error(
        _req: Request, exc: RequestValidationError
    ) -> JSONResponse:
        return _error_response(400, exc, "config")

    @app.get("/health", response_model=S.HealthResponse)
    def health() -> S.HealthResponse:
        return S.HealthResponse(status="ok", version=__version__)

    @app.post("/parse", response_model=S.ParseResponse)
    def parse_endpoint(req: S.ParseRequest) -> S.ParseResponse:
        cfg = _resolve_config(req)
        ev = Evaluator(cfg)
        program = _parse_program(cfg, ev, req.source)
        lines = [
            S.ParsedLine(
                index=i,
                text=line.raw,
                kind=line.kind,
                lhs=str(line.instr.lhs) if line.instr else None,
                op=line.instr.op if line.instr else None,
                rhs=str(line.instr.rhs) if line.instr else None,
            )
            for i, line in enumerate(program.lines)
        ]
        n_instr = sum(1 for l in program.lines if l.instr is not None)
        return S.ParseResponse(
            lines=lines,
            code_length=code_length(program),
            n_instructions=n_instr,
            n_data=len(program.lines) - n_instr,
            n_segments=len(segments(program)),
            fingerprint=program.fingerprint(),
        )

    @app.post("/run", response_model=S.RunResponse)
    def run_endpoint(req: S.RunRequest) -> S.RunResponse:
        cfg = _resolve_config(req)
        ev = Evaluator(cfg)
        program = _parse_program(cfg, ev, req.source)
        out = ev.rollout(ev.init_player(), program, req.seed, want_trace=req.trace)
        return S.RunResponse(
            rewards=out.rewards,
            segment_rewards=out.segment_rewards,
            aborted=out.aborted,
            seeds=out.seeds,
            trace=out.trace,
        )

    @app.post("/score", response_model=S.ScoreResponse)
    def score_endpoint(req: S.ScoreRequest) -> S.ScoreResponse:
        cfg = _resolve_config(req)
        ev = Evaluator(cfg)
        program = _parse_program(cfg, ev, req.source)
        stats = ev.score_stats(
            _checkpoint(ev, req.checkpoint), program, cfg.eval_plan()
        )
        return S.ScoreResponse(
            mean=stats.value,
            sd=stats.sd,
            n_rollouts=stats.n_rollouts,
            n_aborted=stats.n_aborted,
        )

    @app.post("/transfer", response_model=S.TransferResponse)
    def transfer_endpoint(req: S.TransferRequest) -> S.TransferResponse:
        cfg = _resolve_config(req)
        ev = Evaluator(cfg)
        g = _parse_program(cfg, ev, req.g_source)
        h = _parse_program(cfg, ev, req.h_source)
        res = transfer(
            ev,
            _checkpoint(ev, req.checkpoint),
            g,
            h,
            cfg.eval_plan(),
            cfg.phi_params(),
        )
        return S.TransferResponse(
            value=res.value,
            score_before=float(res.before_exact),
            score_after=float(res.after_exact),
            flags=list(res.flags),
        )

    @app.post("/meta", response_model=S.MetaResponse)
    def meta_endpoint(req: S.MetaRequest) -> S.MetaResponse:
        cfg = _resolve_config(req)
        if req.run_dir is not None:
            cfg, history = load_history(req.run_dir, cfg if req.config else None)
            ev = Evaluator(cfg)
        else:
            ev = Evaluator(cfg)
            history = History(ev.init_player(), archive="full")
        program = _parse_program(cfg, ev, req.source)
        plan = cfg.eval_plan()
        phi = cfg.phi_params()
        ms = measure_candidate(
            ev,
            history,
            program,
            plan,
            phi,
            want_old_to_new=(cfg.loop.gate_mode == "strict"),
        )
        breakdown = evaluate(
            ev,
            history,
            program,
            plan,
            phi,
            cfg.meta,
            mode=cfg.loop.gate_mode,
            measurements=ms,
        )
        gate = None
        if req.gate:
            g = gate_positive(
                ev, history, program, plan, phi, cfg.loop.gate_mode, ms
            )
            gate = S.GateReport(
                accepted=g.accepted,
                mode=g.mode,
                new_to_old=g.new_to_old,
                old_to_new=g.old_to_new,
                t_self=g.t_self,
                telescoped=g.telescoped,
                flags=sorted(g.flags),
            )
        return S.MetaResponse(breakdown=breakdown.to_dict(), gate=gate)

    @app.post("/train", response_model=S.TrainResponse)
    def train_endpoint(req: S.TrainRequest) -> S.TrainResponse:
        cfg = _resolve_config(req)
        if req.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {req.steps}")
        result = run_loop(cfg, req.steps, req.out_dir)
        return S.TrainResponse(
            run_dir=str(result.run_dir),
            steps=[
                S.TrainStepSummary(
                    k=r.k,
                    failed=r.failed,
                    chosen_source=r.chosen_source,
                    chosen_origin=r.chosen_origin,
                    o=(r.breakdown or {}).get("o"),
                    novel=r.novel,
                    maintenance=r.maintenance,
                    flags=sorted(r.flags),
                )
                for r in result.steps
            ],
        )

    @app.post("/replay", response_model=S.ReplayResponse)
    def replay_endpoint(req: S.ReplayRequest) -> S.ReplayResponse:
        report = replay(req.run_dir)
        return S.ReplayResponse(match=report.match, mismatches=report.mismatches)

    @app.get("/corpus/templates", response_model=S.TemplatesResponse)
    def templates_endpoint() -> S.TemplatesResponse:
        return S.TemplatesResponse(
            templates=[
                S.TemplateInfo(
                    name=t.name,
                    slots=list(t.slots),
                    roles=dict(t.roles),
                    description=t.description,
                )
                for t in list_templates()
            ],
            stubs=dict(STUB_TEMPLATES),
        )

    @app.post("/corpus/emit", response_model=S.EmitResponse)
    def emit_endpoint(req: S.EmitRequest) -> S.EmitResponse:
        cfg = _resolve_config(req)
        params = cfg.emit_params()
        if req.seed is not None:
            import numpy as np

            name, game_map = sample_game(
                np.random.default_rng(req.seed),
                params,
                cfg.sampler_texts(),
                [req.template] if req.template else None,
            )
            program = emit(name, game_map, params)
        else:
            program = emit(req.template, req.map, params)
        return S.EmitResponse(
            source=program.source,
            code_length=code_length(program),
            n_segments=len(segments(program)),
        )

    @app.post("/deltas", response_model=S.DeltasResponse)
    def deltas_endpoint(req: S.DeltasRequest) -> S.DeltasResponse:
        cfg = _resolve_config(req)
        ev = Evaluator(cfg)
        pool = ev.pool(ev.init_player())
        if req.judge not in pool:
            raise ConfigError(f"unknown judge binding {req.judge!r}")
        judge = pool[req.judge]
        enc = ev.vocab.encode
        p_min = cfg.game.p_min
        sep = cfg.game.separator
        if req.kind == "tf":
            value: float | None = tf_delta(
                judge, enc(req.text), enc(req.context), separator=sep, p_min=p_min
            )
            profile: list[float] | None = None
        elif req.kind == "info_gain":
            value = info_gain(
                judge,
                enc(req.context),
                enc(req.question),
                enc(req.text),
                separator=sep,
                p_min=p_min,
            )
            profile = None
        elif req.kind == "contrast":
            if req.second_judge is None or req.second_judge not in pool:
                raise ConfigError("contrast needs second_judge set to a binding name")
            value = contrast_delta(
                judge, pool[req.second_judge], enc(req.text), enc(req.context), p_min
            )
            profile = None
        else:
            value = None
            profile = anomaly_profile(judge, enc(req.text), enc(req.context), p_min)
        return S.DeltasResponse(kind=req.kind, value=value, profile=profile)

    return app
