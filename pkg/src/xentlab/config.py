"""Run configuration.

Everything a run needs lives in one schema-validated Config: the game
geometry, the model bindings (exactly one of which is trainable), the
training step, evaluation plans, the meta objective, the candidate
sampler, and the curriculum loop.  Unknown keys are rejected so typos
fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ConfigError
from .tokens import Vocab, byte_vocab
from .vm import RunParams

DEFAULT_TEXTS = [
    "the cat sat on the mat",
    "the dog sat on the log",
    "a stitch in time saves nine",
    "round and round the garden",
    "ab ab ab ab ab ab",
    "to be or not to be",
]

DEFAULT_NGRAM_TEXT = " ".join(DEFAULT_TEXTS)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VocabSpec(_Model):
    kind: Literal["byte"] = "byte"

    def build(self) -> Vocab:
        return byte_vocab()


class GameSpec(_Model):
    registers: int = 6
    length: int = 32
    max_context: int = 64
    lam: float = 2.0
    p_min: float = 1e-6
    default_judge: str = "m0"
    temperature: float = 1.0
    separator: int = 32

    @field_validator("lam")
    @classmethod
    def _lam(cls, v: float) -> float:
        if v <= 1.0:
            raise ValueError("lam must be > 1")
        return v

    @field_validator("p_min")
    @classmethod
    def _p_min(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise ValueError("p_min must be in (0, 1)")
        return v


class BindingSpec(_Model):
    name: str
    kind: Literal["uniform", "ngram", "logit_table", "remote", "clone"]
    trainable: bool = False
    # ngram
    window: int = 2
    corpus_text: str = DEFAULT_NGRAM_TEXT
    smoothing: float = 1.0
    # logit_table
    rows: int = 32
    init: Literal["zeros", "randn"] = "randn"
    init_scale: float = 0.5
    init_seed: int = 7
    table_window: int = 1
    # remote
    url: Optional[str] = None
    model_id: Optional[str] = None
    retries: int = 2


class PhiSpec(_Model):
    batch: int = 8
    eta: float = 0.1
    seed: int = 0
    reward_scale: float = 1.0
    reward_shift: float = 0.0


class PlanSpec(_Model):
    n_rollouts: int = 16
    seed: int = 1234
    player: str = "m0"


class ScheduleSpec(_Model):
    """Rational function of the elapsed curriculum length T."""

    numerator: list[float] = [1.0]
    denominator: list[float] = [1.0]


class ExternalEvalSpec(_Model):
    kind: Literal["heldout_game", "callback"] = "heldout_game"
    source: Optional[str] = None
    scorer: Optional[str] = None
    n_rollouts: int = 8
    seed: int = 99


class MetaSpec(_Model):
    delta: float = 0.5
    pressure: float = 0.0
    epsilon_floor: float = 1e-9
    delta_schedule: Optional[ScheduleSpec] = None
    pressure_schedule: Optional[ScheduleSpec] = None
    external_eval: Optional[ExternalEvalSpec] = None

    @field_validator("delta")
    @classmethod
    def _delta(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("delta must be in [0, 1]")
        return v

    @field_validator("pressure")
    @classmethod
    def _pressure(cls, v: float) -> float:
        if v < 0.0:
            raise ValueError("pressure must be >= 0")
        return v


class SamplerSpec(_Model):
    kind: Literal["template", "mutation", "remote_llm"] = "template"
    seed: int = 7
    templates: Optional[list[str]] = None
    texts: Optional[list[str]] = None
    elicit_len: int = 4
    feedback_len: int = 4
    alpha: int = 1
    roles: Optional[dict[str, str]] = None
    adapter_url: Optional[str] = None
    model_id: Optional[str] = None
    prompt: str = (
        "Write a short SXGL game. Lines are either data or instructions "
        "of the form OPERAND<<OPERAND / OPERAND>>OPERAND with operands "
        "x, s0..s5, m0..m3. End with x<<x."
    )


class LoopSpec(_Model):
    candidates: int = 32
    l_max: int = 512
    gate_mode: Literal["strict", "clipped", "raw"] = "clipped"
    archive_mode: Literal["full", "latest"] = "full"
    theta_coeff: float = 0.05
    theta_floor: float = 1e-6
    retries: int = 3
    master_seed: int = 0
    maintenance: bool = True


def _default_bindings() -> list[BindingSpec]:
    return [
        BindingSpec(name="m0", kind="logit_table", trainable=True),
        BindingSpec(name="m1", kind="ngram"),
        BindingSpec(name="m2", kind="uniform"),
        BindingSpec(name="m3", kind="clone"),
    ]


class Config(_Model):
    vocab: VocabSpec = VocabSpec()
    game: GameSpec = GameSpec()
    bindings: list[BindingSpec] = Field(default_factory=_default_bindings)
    phi: PhiSpec = PhiSpec()
    plan: PlanSpec = PlanSpec()
    meta: MetaSpec = MetaSpec()
    sampler: SamplerSpec = SamplerSpec()
    loop: LoopSpec = LoopSpec()
    checkpoint_format: Literal["npz", "json"] = "npz"

    @model_validator(mode="after")
    def _coherent(self) -> "Config":
        names = [b.name for b in self.bindings]
        expected = [f"m{i}" for i in range(len(names))]
        if names != expected:
            raise ValueError(f"bindings must be named {expected} in order, got {names}")
        trainable = [b for b in self.bindings if b.trainable]
        if len(trainable) != 1:
            raise ValueError(f"exactly one trainable binding required, got {len(trainable)}")
        if trainable[0].kind != "logit_table":
            raise ValueError("the trainable binding must be a logit_table")
        if self.game.default_judge not in names:
            raise ValueError(f"default_judge {self.game.default_judge} is not a binding")
        if self.plan.player not in names:
            raise ValueError(f"plan player {self.plan.player} is not a binding")
        for b in self.bindings:
            if b.kind == "remote" and not b.url:
                raise ValueError(f"remote binding {b.name} needs a url")
        return self

    @property
    def models(self) -> int:
        return len(self.bindings)

    @property
    def trainable_name(self) -> str:
        return next(b.name for b in self.bindings if b.trainable)

    def run_params(self) -> RunParams:
        return RunParams(
            length=self.game.length,
            lam=self.game.lam,
            p_min=self.game.p_min,
            max_context=self.game.max_context,
            default_judge=self.game.default_judge,
            temperature=self.game.temperature,
        )

    def eval_plan(self):
        from .transfer import make_plan

        return make_plan(self.plan.seed, self.plan.n_rollouts, self.plan.player)

    def phi_params(self):
        from .transfer import PhiParams

        return PhiParams(
            batch=self.phi.batch,
            eta=self.phi.eta,
            seed=self.phi.seed,
            reward_scale=self.phi.reward_scale,
            reward_shift=self.phi.reward_shift,
        )

    def emit_params(self):
        from .corpus import EmitParams

        return EmitParams(
            vocab=self.vocab.build(),
            k=self.game.registers,
            u=self.models,
            length=self.game.length,
            elicit_len=self.sampler.elicit_len,
            feedback_len=self.sampler.feedback_len,
            alpha=self.sampler.alpha,
            separator=self.game.separator,
            roles=self.sampler.roles or {},
        )

    def sampler_texts(self) -> list[str]:
        from .sxgl import is_instruction_text

        out = [
            t
            for t in (self.sampler.texts or DEFAULT_TEXTS)
            if "\n" not in t
            and not is_instruction_text(t, self.game.registers, self.models)
        ]
        if not out:
            raise ConfigError("sampler has no usable texts")
        return out


def default_config() -> Config:
    return Config()


def config_from_dict(data: dict) -> Config:
    try:
        return Config.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from None


def load_config(path: str | Path) -> Config:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_dict(data)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare strings stay strings


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply dotted-path overrides like game.length=32 or meta.delta=0.8."""
    data = cfg.model_dump()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        node = data
        for key in keys[:-1]:
            if isinstance(node, list):
                node = node[int(key)]
            elif key in node:
                node = node[key]
            else:
                raise ConfigError(f"unknown config path {path!r}")
        leaf = keys[-1]
        if isinstance(node, list):
            node[int(leaf)] = _parse_value(raw)
        else:
            if leaf not in node:
                raise ConfigError(f"unknown config path {path!r}")
            node[leaf] = _parse_value(raw)
    return config_from_dict(data)
