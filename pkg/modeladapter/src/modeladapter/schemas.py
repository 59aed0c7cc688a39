"""Wire schemas.

Tokens cross the wire as ids, never text; every response echoes the
served tokenizer's hash so clients can verify it on each call.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class _Request(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())


class LogprobsRequest(_Request):
    model_id: str | None = None
    context_tokens: list[int] = Field(default_factory=list)
    continuation_tokens: list[int] = Field(default_factory=list)


class SampleRequest(_Request):
    model_id: str | None = None
    context_tokens: list[int] = Field(default_factory=list)
    n: int = Field(ge=1)
    temperature: float = Field(default=1.0, gt=0)
    seed: int | None = None


class GenerateRequest(_Request):
    model_id: str | None = None
    prompt_text: str
    max_tokens: int = Field(ge=1)
    temperature: float = Field(default=1.0, gt=0)
    seed: int | None = None


class LogprobsResponse(BaseModel):
    logprobs: list[float]
    vocab_hash: str


class SampleResponse(BaseModel):
    tokens: list[int]
    vocab_hash: str


class GenerateResponse(BaseModel):
    text: str
    vocab_hash: str


class VocabResponse(BaseModel):
    kind: str
    size: int
    pad_id: int
    vocab_hash: str


class ModelInfo(BaseModel):
    seeded_sampling: bool


class HealthResponse(BaseModel):
    status: str
    version: str
    default_model: str
    models: dict[str, ModelInfo]
    vocab_hash: str
