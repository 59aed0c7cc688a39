"""HTTP surface.

Errors travel as {"error": {"code", "message"}} JSON bodies: 400 for bad
requests (including capability refusals), 503 while models are loading.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import __version__
from .models import CapabilityUnsupported, ServedModel, default_models
from .schemas import (
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    LogprobsRequest,
    LogprobsResponse,
    ModelInfo,
    SampleRequest,
    SampleResponse,
    VocabResponse,
)
from .vocab import WireVocab


class AdapterError(Exception):
    def __init__(self, status: int, code: str, message: str) -> None:
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def create_app(
    models: dict[str, ServedModel] | None = None,
    vocab: WireVocab | None = None,
    *,
    default_model: str | None = None,
    ready: bool = True,
) -> FastAPI:
    vocab = vocab or WireVocab()
    models = models if models is not None else default_models(vocab)
    if not models:
        raise ValueError("at least one model must be served")
    default_model = default_model or next(iter(models))
    if default_model not in models:
        raise ValueError(f"default model {default_model!r} is not served")

    app = FastAPI(title="modeladapter", version=__version__)
    app.state.ready = ready
    vocab_hash = vocab.hash()

    def pick(model_id: str | None) -> ServedModel:
        if not app.state.ready:
            raise AdapterError(503, "loading", "models are still loading")
        name = model_id or default_model
        if name not in models:
            raise AdapterError(400, "unknown_model", f"no model named {name!r}")
        return models[name]

    def check_tokens(*token_lists: list[int]) -> None:
        for ids in token_lists:
            if not vocab.valid(ids):
                bad = [i for i in ids if not 0 <= i < vocab.size]
                raise AdapterError(
                    400,
                    "invalid_tokens",
                    f"token ids {bad[:5]} outside vocab of size {vocab.size}",
                )

    @app.exception_handler(AdapterError)
    async def _adapter_error(request: Request, exc: AdapterError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(
        request: Request, exc: RequestValidationError
    ) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "invalid_request", "message": str(exc)}},
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok" if app.state.ready else "loading",
            version=__version__,
            default_model=default_model,
            models={
                name: ModelInfo(seeded_sampling=m.seeded_sampling)
                for name, m in models.items()
            },
            vocab_hash=vocab_hash,
        )

    @app.get("/vocab", response_model=VocabResponse)
    def vocab_info() -> VocabResponse:
        return VocabResponse(
            kind=vocab.kind,
            size=vocab.size,
            pad_id=vocab.pad_id,
            vocab_hash=vocab_hash,
        )

    @app.get("/schema")
    def schema() -> dict:
        return {
            "version": __version__,
            "requests": {
                "/logprobs": LogprobsRequest.model_json_schema(),
                "/sample": SampleRequest.model_json_schema(),
                "/generate": GenerateRequest.model_json_schema(),
            },
            "responses": {
                "/logprobs": LogprobsResponse.model_json_schema(),
                "/sample": SampleResponse.model_json_schema(),
                "/generate": GenerateResponse.model_json_schema(),
                "/vocab": VocabResponse.model_json_schema(),
                "/health": HealthResponse.model_json_schema(),
            },
        }

    @app.post("/logprobs", response_model=LogprobsResponse)
    def logprobs(req: LogprobsRequest) -> LogprobsResponse:
        model = pick(req.model_id)
        check_tokens(req.context_tokens, req.continuation_tokens)
        lps = model.logprobs(req.context_tokens, req.continuation_tokens)
        return LogprobsResponse(logprobs=lps, vocab_hash=vocab_hash)

    @app.post("/sample", response_model=SampleResponse)
    def sample(req: SampleRequest) -> SampleResponse:
        model = pick(req.model_id)
        check_tokens(req.context_tokens)
        try:
            toks = model.sample(req.context_tokens, req.n, req.temperature, req.seed)
        except CapabilityUnsupported as e:
            raise AdapterError(400, "capability", str(e)) from e
        return SampleResponse(tokens=toks, vocab_hash=vocab_hash)

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest) -> GenerateResponse:
        model = pick(req.model_id)
        try:
            toks = model.sample(
                vocab.encode(req.prompt_text), req.max_tokens, req.temperature, req.seed
            )
        except CapabilityUnsupported as e:
            raise AdapterError(400, "capability", str(e)) from e
        return GenerateResponse(text=vocab.decode(toks), vocab_hash=vocab_hash)

    return app
