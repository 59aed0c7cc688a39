"""Request and response bodies for the HTTP service.

Every request that touches models or games carries an optional `config`
(a full config document) and `overrides` (dotted `path=value` strings
applied on top).  Omitting both uses the package defaults, so small
experiments need nothing beyond the program text.
"""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConfiguredRequest(_Body):
    config: dict[str, Any] | None = None
    overrides: list[str] = Field(default_factory=list)


# === health ===


class HealthResponse(_Body):
    status: Literal["ok"]
    version: str


# === parse ===


class ParseRequest(ConfiguredRequest):
    source: str


class ParsedLine(_Body):
    index: int
    text: str
    kind: Literal["instruction", "data"]
    lhs: str | None = None
    op: str | None = None
    rhs: str | None = None


class ParseResponse(_Body):
    lines: list[ParsedLine]
    code_length: int
    n_instructions: int
    n_data: int
    n_segments: int
    fingerprint: str


# === run ===


class RunRequest(ConfiguredRequest):
    source: str
    seed: int = 0
    trace: bool = False


class RunResponse(_Body):
    rewards: dict[str, float]
    segment_rewards: list[dict[str, float]]
    aborted: str | None
    seeds: list[int]
    trace: list[dict[str, Any]] | None = None


# === score ===


class ScoreRequest(ConfiguredRequest):
    source: str
    checkpoint: str | None = None


class ScoreResponse(_Body):
    mean: float
    sd: float
    n_rollouts: int
    n_aborted: int


# === transfer ===


class TransferRequest(ConfiguredRequest):
    g_source: str
    h_source: str
    checkpoint: str | None = None


class TransferResponse(_Body):
    value: float
    score_before: float
    score_after: float
    flags: list[str]


# === meta ===


class MetaRequest(ConfiguredRequest):
    source: str
    run_dir: str | None = None
    gate: bool = False


class GateReport(_Body):
    accepted: bool
    mode: str
    new_to_old: list[float]
    old_to_new: list[float] | None
    t_self: float
    telescoped: float
    flags: list[str]


class MetaResponse(_Body):
    breakdown: dict[str, Any]
    gate: GateReport | None = None


# === train (curriculum loop) ===


class TrainRequest(ConfiguredRequest):
    steps: int
    out_dir: str


class TrainStepSummary(_Body):
    k: int
    failed: bool
    chosen_source: str | None
    chosen_origin: str | None
    o: float | None
    novel: bool | None
    maintenance: list[float] | None
    flags: list[str]


class TrainResponse(_Body):
    run_dir: str
    steps: list[TrainStepSummary]


class ReplayRequest(_Body):
    run_dir: str


class ReplayResponse(_Body):
    match: bool
    mismatches: list[str]


# === corpus ===


class TemplateInfo(_Body):
    name: str
    slots: list[str]
    roles: dict[str, str]
    description: str


class TemplatesResponse(_Body):
    templates: list[TemplateInfo]
    stubs: dict[str, str]


class EmitRequest(ConfiguredRequest):
    template: str
    map: dict[str, Any]
    seed: int | None = None


class EmitResponse(_Body):
    source: str
    code_length: int
    n_segments: int


# === text deltas ===


class DeltasRequest(ConfiguredRequest):
    kind: Literal["tf", "info_gain", "contrast", "anomaly"]
    judge: str = "m1"
    second_judge: str | None = None
    text: str = ""
    context: str = ""
    question: str = ""


class DeltasResponse(_Body):
    kind: str
    value: float | None = None
    profile: list[float] | None = None


# === errors ===


class ErrorBody(_Body):
    type: str
    message: str
    category: Literal["config", "runtime", "internal"]


class ErrorResponse(_Body):
    error: ErrorBody
