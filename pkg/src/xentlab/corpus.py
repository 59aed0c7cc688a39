"""Game templates.

Six emitters turn a map of data texts into a single-segment SXGL
program.  Score registers flush raw through the final x<<x, so each
template's player reward has a closed form:

  pretraining         -xent_J(x)
  rlp                 -xent_M(x_t | x_<t, c)        c elicited
  reverse_prompt      -xent_J(s | t)                t elicited
  distill             xent_M(c | x) - xent_T(c | x) c elicited
  self_distill        xent_M(c | x) - xent_C(c | x, f)
  common_explanation  alpha * sum_i xent_J(t | x_i) - xent_J(x_1..x_n | t)

Two more game families (move-level board games, formal proof search)
are documented stubs: they need engines this package does not ship, so
asking for them raises UnsupportedTemplateError.  Adversarial
prompt-injection variants are reverse_prompt with a hostile map; there
is no separate emitter and no attacker optimization loop.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, UnsupportedTemplateError
from .sxgl import Program, is_instruction_text, parse
from .tokens import Vocab, byte_vocab
from .xent import join


class TruncationWarning(UserWarning):
    """A map text was longer than a register and was cut."""


@dataclass(frozen=True)
class EmitParams:
    vocab: Vocab = field(default_factory=byte_vocab)
    k: int = 6
    u: int = 4
    length: int = 16
    elicit_len: int = 4
    feedback_len: int = 4
    alpha: int = 1
    separator: int = 32
    roles: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Template:
    name: str
    slots: tuple[str, ...]
    roles: dict[str, str]
    description: str


TEMPLATES: tuple[Template, ...] = (
    Template(
        "pretraining",
        ("text",),
        {"player": "m0", "judge": "m0"},
        "Score a fixed text under the judge; no elicitation.",
    ),
    Template(
        "rlp",
        ("prefix", "target"),
        {"player": "m0", "judge": "m0"},
        "Elicit a thought c from the prefix, then score the target given prefix+c.",
    ),
    Template(
        "reverse_prompt",
        ("text",),
        {"player": "m0", "judge": "m1"},
        "Elicit a prompt t for a text s; reward -xent_J(s|t).",
    ),
    Template(
        "distill",
        ("context",),
        {"player": "m0", "teacher": "m1"},
        "Elicit c where the player is more surprised than the teacher.",
    ),
    Template(
        "self_distill",
        ("context",),
        {"player": "m0", "clone": "m3"},
        "Elicit c, get feedback f from a frozen clone, compare xents.",
    ),
    Template(
        "common_explanation",
        ("texts",),
        {"player": "m0", "judge": "m1"},
        "Elicit one t explaining several texts without copying any of them.",
    ),
)

STUB_TEMPLATES: dict[str, str] = {
    "board_game": "move-level two-player games need a rules engine; not shipped",
    "proof_search": "formal proof games need a proof checker; not shipped",
}

_BY_NAME = {t.name: t for t in TEMPLATES}


def list_templates() -> tuple[Template, ...]:
    return TEMPLATES


def _role(template: Template, params: EmitParams, role: str) -> str:
    name = params.roles.get(role, template.roles[role])
    if not name.startswith("m") or not name[1:].isdigit() or int(name[1:]) >= params.u:
        raise ConfigError(f"role {role}={name!r} is not one of m0..m{params.u - 1}")
    return name


def _data_line(text: str, params: EmitParams) -> tuple[str, int]:
    """A map text as a data line, plus its loaded token count."""
    if "\n" in text:
        raise ConfigError("map texts may not contain newlines")
    if is_instruction_text(text, params.k, params.u):
        raise ConfigError(f"map text {text!r} collides with instruction syntax")
    n = len(params.vocab.encode(text))
    if n > params.length:
        warnings.warn(
            f"map text of {n} tokens truncated to register length {params.length}",
            TruncationWarning,
            stacklevel=3,
        )
        n = params.length
    return text, n


def _load(reg: int, text: str, params: EmitParams) -> tuple[list[str], int]:
    line, n = _data_line(text, params)
    return [line, f"s{reg}<<s{reg}"], n


def _elicit(reg: int, model: str, n: int) -> list[str]:
    """Exact-length elicitation: advance the caret n cells, then fill them."""
    return [f"x>>s{reg}"] * n + [f"{model}>>s{reg}"]


def _push_written(reg: int, n: int) -> list[str]:
    """Rewind a register and append its content to the xent prefix."""
    return [f"s{reg}<<x"] * n + [f"s{reg}>>x"]


def _need(params: EmitParams, k: int) -> None:
    if params.k < k:
        raise ConfigError(f"template needs k >= {k}, config has k = {params.k}")
    if params.elicit_len > params.length:
        raise ConfigError("elicit_len cannot exceed the register length")
    if params.feedback_len > params.length:
        raise ConfigError("feedback_len cannot exceed the register length")


def _emit_pretraining(game_map: dict, params: EmitParams) -> list[str]:
    t = _BY_NAME["pretraining"]
    _need(params, 1)
    judge = _role(t, params, "judge")
    player = _role(t, params, "player")
    load, _ = _load(0, game_map["text"], params)
    return [f"x<<{judge}", *load, "x<<s0", f"{player}>>x", "x<<x"]


def _emit_rlp(game_map: dict, params: EmitParams) -> list[str]:
    t = _BY_NAME["rlp"]
    _need(params, 3)
    player = _role(t, params, "player")
    judge = _role(t, params, "judge")
    e = params.elicit_len
    load0, p = _load(0, game_map["prefix"], params)
    load2, _ = _load(2, game_map["target"], params)
    return [
        f"x<<{judge}",
        *load0,
        f"s0>>{player}",
        *_elicit(1, player, e),
        *_push_written(0, p),
        *_push_written(1, e),
        *load2,
        "x<<s2",
        f"{player}>>x",
        "x<<x",
    ]


def _emit_reverse_prompt(game_map: dict, params: EmitParams) -> list[str]:
    t = _BY_NAME["reverse_prompt"]
    _need(params, 2)
    player = _role(t, params, "player")
    judge = _role(t, params, "judge")
    e = params.elicit_len
    load0, _ = _load(0, game_map["text"], params)
    return [
        f"x<<{judge}",
        *load0,
        f"s0>>{player}",
        *_elicit(1, player, e),
        *_push_written(1, e),
        "x<<s0",
        f"{player}>>x",
        "x<<x",
    ]


def _emit_distill(game_map: dict, params: EmitParams) -> list[str]:
    t = _BY_NAME["distill"]
    _need(params, 2)
    player = _role(t, params, "player")
    teacher = _role(t, params, "teacher")
    e = params.elicit_len
    load0, p = _load(0, game_map.get("context", ""), params)
    return [
        *load0,
        f"s0>>{player}",
        *_elicit(1, player, e),
        *_push_written(0, p),
        "x<<s1",
        f"x<<{player}",
        f"{player}<<x",
        f"x<<{teacher}",
        f"{player}>>x",
        "x<<x",
    ]


def _emit_self_distill(game_map: dict, params: EmitParams) -> list[str]:
    t = _BY_NAME["self_distill"]
    _need(params, 3)
    player = _role(t, params, "player")
    clone = _role(t, params, "clone")
    e, f = params.elicit_len, params.feedback_len
    load0, p = _load(0, game_map.get("context", ""), params)
    return [
        *load0,
        f"s0>>{player}",
        *_elicit(1, player, e),
        f"s0>>{clone}",
        f"s1>>{clone}",
        *_elicit(2, clone, f),
        *_push_written(0, p),
        "x<<s1",
        f"x<<{player}",
        f"{player}<<x",
        *_push_written(2, f),
        f"x<<{clone}",
        f"{player}>>x",
        "x<<x",
    ]


def _emit_common_explanation(game_map: dict, params: EmitParams) -> list[str]:
    t = _BY_NAME["common_explanation"]
    texts = list(game_map["texts"])
    if not texts:
        raise ConfigError("common_explanation needs at least one text")
    _need(params, 2 + len(texts))
    if params.alpha < 0:
        raise ConfigError("alpha must be a non-negative integer")
    player = _role(t, params, "player")
    judge = _role(t, params, "judge")
    e = params.elicit_len
    joint_tokens = join([params.vocab.encode(x) for x in texts], params.separator)
    joint = params.vocab.decode(joint_tokens)
    load0, _ = _load(0, joint, params)
    lines = [f"x<<{judge}", *load0, f"s0>>{player}", *_elicit(1, player, e)]
    loaded: list[int] = []
    for i, text in enumerate(texts):
        li, pi = _load(2 + i, text, params)
        lines += li
        loaded.append(pi)
    for i, pi in enumerate(loaded):
        lines += _push_written(2 + i, pi)
        lines += ["x<<s1"]
        lines += [f"{player}<<x"] * params.alpha
        lines += ["x>>x"]
    lines += _push_written(1, e)
    lines += ["x<<s0", f"{player}>>x", "x<<x"]
    return lines


_EMITTERS = {
    "pretraining": _emit_pretraining,
    "rlp": _emit_rlp,
    "reverse_prompt": _emit_reverse_prompt,
    "distill": _emit_distill,
    "self_distill": _emit_self_distill,
    "common_explanation": _emit_common_explanation,
}


def emit(name: str, game_map: dict, params: EmitParams | None = None) -> Program:
    params = params or EmitParams()
    if name in STUB_TEMPLATES:
        raise UnsupportedTemplateError(f"{name}: {STUB_TEMPLATES[name]}")
    if name not in _EMITTERS:
        raise ConfigError(f"unknown template {name!r}")
    lines = _EMITTERS[name](game_map, params)
    return parse("\n".join(lines), k=params.k, u=params.u, vocab=params.vocab)


def _fit_text(text: str, params: EmitParams) -> str | None:
    """Shorten text until it fits one register; None if unusable."""
    if "\n" in text:
        return None
    while text and len(params.vocab.encode(text)) > params.length:
        text = text[:-1]
    if not text or is_instruction_text(text, params.k, params.u):
        return None
    return text


def sample_game(rng: np.random.Generator, params: EmitParams, texts: list[str],
                templates: list[str] | None = None) -> tuple[str, dict]:
    """Draw a (template, map) pair for samplers and tests."""
    usable = [t for t in (_fit_text(x, params) for x in texts) if t is not None]
    if not usable:
        raise ConfigError("no usable map texts")
    names = templates or list(_EMITTERS)
    name = names[int(rng.integers(0, len(names)))]

    def pick() -> str:
        return usable[int(rng.integers(0, len(usable)))]

    if name == "rlp":
        return name, {"prefix": pick(), "target": pick()}
    if name in ("distill", "self_distill"):
        return name, {"context": pick()}
    if name == "common_explanation":
        n = min(2 + int(rng.integers(0, 2)), params.k - 2)
        return name, {"texts": [pick() for _ in range(max(n, 2))]}
    return name, {"text": pick()}
