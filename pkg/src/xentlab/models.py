"""Model backends and the policy-gradient trainer.

Four backends share one interface: uniform, smoothed n-gram, a trainable
hashed-window logit table, and a remote HTTP model.  All of them measure
log-probabilities over the non-pad vocabulary; the pad token is never
sampled and scores a fixed -1e9 so downstream clipping stays finite.

The trainer does one ascent step on centered, normalized per-episode
rewards.  Centering and normalization happen in exact rational
arithmetic, which makes the resulting advantages (and therefore the
updated table) bit-identical under any positive affine reward map.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

from .errors import (
    CapabilityError,
    ConfigError,
    TrainingError,
    TransportError,
    VocabMismatchError,
)
from .tokens import Vocab

PAD_LOGPROB = -1e9

CHECKPOINT_FORMAT_VERSION = 1

_HASH_PRIME = (1 << 61) - 1
_HASH_MULT = 1000003


def context_window(context: Sequence[int], h: int, pad_id: int) -> tuple[int, ...]:
    """Last h tokens of a context, pad-extended on the left."""
    if h == 0:
        return ()
    w = tuple(context[-h:])
    if len(w) < h:
        w = (pad_id,) * (h - len(w)) + w
    return w


def row_index(window: Sequence[int], rows: int) -> int:
    """Stable polynomial hash of a token window onto a row index."""
    acc = 0
    for t in window:
        acc = (acc * _HASH_MULT + t + 1) % _HASH_PRIME
    return acc % rows


# === backend interface ===


class Backend(ABC):
    """A conditional token measure plus a seeded sampler."""

    def __init__(self, vocab: Vocab, max_context: int) -> None:
        self.vocab = vocab
        self.max_context = max_context

    def _clip(self, context: Sequence[int]) -> tuple[int, ...]:
        if len(context) > self.max_context:
            return tuple(context[-self.max_context :])
        return tuple(context)

    @abstractmethod
    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        """Log-probabilities over non-pad ids, ordered by _nonpad_ids."""

    @property
    def nonpad_ids(self) -> np.ndarray:
        ids = getattr(self, "_nonpad_cache", None)
        if ids is None:
            ids = np.array(
                [i for i in range(self.vocab.size) if i != self.vocab.pad_id],
                dtype=np.int64,
            )
            self._nonpad_cache = ids
        return ids

    def logprob(self, context: Sequence[int], token: int) -> float:
        if token == self.vocab.pad_id:
            return PAD_LOGPROB
        lps = self._nonpad_logprobs(self._clip(context))
        pos = token if token < self.vocab.pad_id else token - 1
        return float(lps[pos])

    def logprobs(self, context: Sequence[int], continuation: Sequence[int]) -> list[float]:
        """Per-token log-probabilities of a continuation, autoregressively."""
        out: list[float] = []
        ctx = list(context)
        for t in continuation:
            out.append(self.logprob(ctx, t))
            ctx.append(t)
        return out

    def sample(
        self,
        context: Sequence[int],
        n: int,
        temperature: float = 1.0,
        seed: int = 0,
    ) -> list[int]:
        """Draw n tokens autoregressively; never returns pad."""
        if temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {temperature}")
        rng = np.random.default_rng(seed)
        ctx = list(context)
        out: list[int] = []
        for _ in range(n):
            lps = self._nonpad_logprobs(self._clip(ctx))
            logits = lps / temperature
            logits = logits - logits.max()
            probs = np.exp(logits)
            probs = probs / probs.sum()
            u = rng.random()
            idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
            idx = min(idx, len(probs) - 1)
            token = int(self.nonpad_ids[idx])
            out.append(token)
            ctx.append(token)
        return out


class UniformBackend(Backend):
    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        lp = -math.log(self.vocab.nonpad_size)
        return np.full(self.vocab.nonpad_size, lp, dtype=np.float64)

    def logprob(self, context: Sequence[int], token: int) -> float:
        if token == self.vocab.pad_id:
            return PAD_LOGPROB
        return -math.log(self.vocab.nonpad_size)


class NGramBackend(Backend):
    """Add-constant smoothed n-gram counts over a fixed corpus."""

    def __init__(
        self,
        vocab: Vocab,
        window: int,
        corpus: Sequence[int],
        smoothing: float = 1.0,
        max_context: int = 1 << 30,
    ) -> None:
        super().__init__(vocab, max_context)
        if window < 0:
            raise ConfigError(f"ngram window must be >= 0, got {window}")
        if smoothing <= 0:
            raise ConfigError(f"ngram smoothing must be > 0, got {smoothing}")
        self.window = window
        self.smoothing = smoothing
        self._counts: dict[tuple[int, ...], dict[int, int]] = {}
        self._totals: dict[tuple[int, ...], int] = {}
        for i, tok in enumerate(corpus):
            w = context_window(corpus[:i], window, vocab.pad_id)
            row = self._counts.setdefault(w, {})
            row[tok] = row.get(tok, 0) + 1
            self._totals[w] = self._totals.get(w, 0) + 1

    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        w = context_window(context, self.window, self.vocab.pad_id)
        row = self._counts.get(w, {})
        total = self._totals.get(w, 0)
        den = total + self.smoothing * self.vocab.nonpad_size
        counts = np.full(self.vocab.nonpad_size, self.smoothing, dtype=np.float64)
        for tok, c in row.items():
            if tok == self.vocab.pad_id:
                continue
            pos = tok if tok < self.vocab.pad_id else tok - 1
            counts[pos] += c
        return np.log(counts / den)

    def logprob(self, context: Sequence[int], token: int) -> float:
        if token == self.vocab.pad_id:
            return PAD_LOGPROB
        w = context_window(self._clip(context), self.window, self.vocab.pad_id)
        c = self._counts.get(w, {}).get(token, 0)
        total = self._totals.get(w, 0)
        den = total + self.smoothing * self.vocab.nonpad_size
        return math.log((c + self.smoothing) / den)


# === trainable logit table ===


@dataclass(frozen=True)
class Checkpoint:
    """Immutable parameters of a hashed-window logit table."""

    window: int
    table: np.ndarray  # (rows, vocab_size) float64, logits; pad column unused
    vocab_size: int
    pad_id: int
    vocab_hash: str
    step: int = 0
    kind: str = "logit_table"

    def __post_init__(self) -> None:
        self.table.setflags(write=False)

    @property
    def rows(self) -> int:
        return int(self.table.shape[0])

    def fingerprint(self) -> str:
        head = f"{self.kind}:{self.window}:{self.vocab_size}:{self.pad_id}:{self.step}"
        return hashlib.sha256(head.encode() + self.table.tobytes()).hexdigest()


def init_checkpoint(
    vocab: Vocab,
    window: int = 1,
    rows: int = 64,
    init: str = "zeros",
    init_scale: float = 0.5,
    init_seed: int = 0,
) -> Checkpoint:
    if rows < 1:
        raise ConfigError(f"logit table needs >= 1 row, got {rows}")
    if init == "zeros":
        table = np.zeros((rows, vocab.size), dtype=np.float64)
    elif init == "randn":
        rng = np.random.default_rng(init_seed)
        table = rng.standard_normal((rows, vocab.size)) * init_scale
    else:
        raise ConfigError(f"unknown table init {init!r}")
    return Checkpoint(
        window=window,
        table=table,
        vocab_size=vocab.size,
        pad_id=vocab.pad_id,
        vocab_hash=vocab.hash(),
    )


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write a checkpoint; .json gets a debug text form, anything else npz."""
    path = Path(path)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": ckpt.kind,
        "window": ckpt.window,
        "rows": ckpt.rows,
        "vocab_size": ckpt.vocab_size,
        "pad_id": ckpt.pad_id,
        "vocab_hash": ckpt.vocab_hash,
        "step": ckpt.step,
    }
    if path.suffix == ".json":
        # base64 of raw float64 bytes keeps the round trip bit-exact
        header["table_b64"] = base64.b64encode(ckpt.table.tobytes()).decode()
        path.write_text(json.dumps(header, indent=1))
    else:
        with open(path, "wb") as f:
            np.savez(f, header=json.dumps(header), table=ckpt.table)


def load_checkpoint(path: str | Path, vocab: Vocab | None = None) -> Checkpoint:
    path = Path(path)
    if path.suffix == ".json":
        header = json.loads(path.read_text())
        raw = base64.b64decode(header.pop("table_b64"))
        table = np.frombuffer(raw, dtype=np.float64).reshape(
            header["rows"], header["vocab_size"]
        ).copy()
    else:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            table = np.array(z["table"], dtype=np.float64)
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format in {path}")
    ckpt = Checkpoint(
        window=header["window"],
        table=table,
        vocab_size=header["vocab_size"],
        pad_id=header["pad_id"],
        vocab_hash=header["vocab_hash"],
        step=header["step"],
        kind=header["kind"],
    )
    if vocab is not None and ckpt.vocab_hash != vocab.hash():
        raise VocabMismatchError(f"checkpoint {path} was built for a different vocab")
    return ckpt


class LogitTableBackend(Backend):
    def __init__(self, ckpt: Checkpoint, vocab: Vocab, max_context: int = 1 << 30) -> None:
        if ckpt.vocab_hash != vocab.hash():
            raise VocabMismatchError("checkpoint vocab does not match the active vocab")
        super().__init__(vocab, max_context)
        self.ckpt = ckpt
        self._logprob_cache: dict[int, np.ndarray] = {}

    def _row_logprobs(self, r: int) -> np.ndarray:
        cached = self._logprob_cache.get(r)
        if cached is None:
            logits = self.ckpt.table[r][self.nonpad_ids]
            m = logits.max()
            z = m + math.log(np.exp(logits - m).sum())
            cached = logits - z
            self._logprob_cache[r] = cached
        return cached

    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        w = context_window(context, self.ckpt.window, self.vocab.pad_id)
        return self._row_logprobs(row_index(w, self.ckpt.rows))


# === remote backend ===


class RemoteBackend(Backend):
    """Client for the HTTP model protocol (see the adapter service).

    POST /logprobs {model_id?, context_tokens, continuation_tokens} -> {logprobs}
    POST /sample   {model_id?, context_tokens, n, temperature, seed} -> {tokens}
    POST /generate {model_id?, prompt_text, max_tokens, temperature, seed} -> {text}
    GET  /vocab -> {kind, size, pad_id}

    Every response carries a vocab_hash, checked against the local vocab
    on every call.  A JSON error body {"error": {"code": "capability",
    ...}} maps to CapabilityError; transport failures are retried and
    then raised as TransportError.
    """

    def __init__(
        self,
        url: str,
        vocab: Vocab,
        model_id: str | None = None,
        max_context: int = 1 << 30,
        retries: int = 2,
        client: httpx.Client | None = None,
    ) -> None:
        super().__init__(vocab, max_context)
        self.url = url.rstrip("/")
        self.model_id = model_id
        self.retries = retries
        self._client = client or httpx.Client(timeout=30.0)
        self._handshook = False

    def _request(self, method: str, route: str, body: dict | None = None) -> dict:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                r = self._client.request(method, self.url + route, json=body)
            except httpx.HTTPError as e:
                last = e
                continue
            if r.status_code >= 500:
                last = TransportError(f"{route} -> {r.status_code}")
                continue
            try:
                data = r.json()
            except ValueError as e:
                raise TransportError(f"{route}: non-JSON response") from e
            if isinstance(data, dict) and "error" in data:
                err = data["error"]
                if err.get("code") == "capability":
                    raise CapabilityError(err.get("message", route))
                raise TransportError(f"{route}: {err}")
            if r.status_code >= 400:
                raise TransportError(f"{route} -> {r.status_code}")
            return self._checked(data, route)
        raise TransportError(f"{route} failed after {self.retries + 1} attempts: {last}")

    def _checked(self, data: dict, route: str) -> dict:
        got = data.get("vocab_hash")
        if got is None:
            raise TransportError(f"{route}: response is missing vocab_hash")
        if got != self.vocab.hash():
            raise VocabMismatchError(
                f"{route}: the remote serves a different tokenizer"
            )
        return data

    def _handshake(self) -> None:
        if self._handshook:
            return
        self._request("GET", "/vocab")
        self._handshook = True

    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError("remote backends score whole continuations")

    def logprob(self, context: Sequence[int], token: int) -> float:
        return self.logprobs(context, [token])[0]

    def logprobs(self, context: Sequence[int], continuation: Sequence[int]) -> list[float]:
        self._handshake()
        body = {
            "context_tokens": list(self._clip(context)),
            "continuation_tokens": list(continuation),
        }
        if self.model_id:
            body["model_id"] = self.model_id
        data = self._request("POST", "/logprobs", body)
        lps = [float(x) for x in data["logprobs"]]
        if len(lps) != len(continuation):
            raise TransportError("remote returned a wrong-length logprob vector")
        if any(not math.isfinite(x) or x > 0.0 for x in lps):
            raise TransportError("remote returned an invalid log-probability")
        return lps

    def sample(
        self,
        context: Sequence[int],
        n: int,
        temperature: float = 1.0,
        seed: int = 0,
    ) -> list[int]:
        if temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {temperature}")
        self._handshake()
        body = {
            "context_tokens": list(self._clip(context)),
            "n": n,
            "temperature": temperature,
            "seed": seed,
        }
        if self.model_id:
            body["model_id"] = self.model_id
        data = self._request("POST", "/sample", body)
        toks = [int(t) for t in data["tokens"]]
        if len(toks) != n or any(t == self.vocab.pad_id for t in toks):
            raise TransportError("remote returned an invalid sample")
        return toks

    def generate(
        self,
        prompt: str,
        max_tokens: int = 256,
        temperature: float = 1.0,
        seed: int = 0,
    ) -> str:
        self._handshake()
        body = {
            "prompt_text": prompt,
            "max_tokens": max_tokens,
            "temperature": temperature,
            "seed": seed,
        }
        if self.model_id:
            body["model_id"] = self.model_id
        return str(self._request("POST", "/generate", body)["text"])


# === policy gradient ===


@dataclass(frozen=True)
class Episode:
    """One sampled trajectory: (context, chosen token) pairs plus a reward."""

    steps: tuple[tuple[tuple[int, ...], int], ...]
    reward: float


def normalized_advantages(
    rewards: Sequence[float],
    reward_scale: float = 1.0,
    reward_shift: float = 0.0,
) -> list[float]:
    """Centered, variance-normalized rewards.

    The mean and variance are taken in exact rational arithmetic, so the
    result is bit-identical under rewards -> a*rewards + b for any a > 0.
    reward_scale/reward_shift apply that map inside the rational pipeline.
    """
    if reward_scale <= 0:
        raise ConfigError(f"reward_scale must be > 0, got {reward_scale}")
    for r in rewards:
        if not math.isfinite(r):
            raise TrainingError(f"non-finite episode reward {r!r}")
    a = Fraction(reward_scale)
    b = Fraction(reward_shift)
    rs = [a * Fraction(r) + b for r in rewards]
    n = len(rs)
    mu = sum(rs, Fraction(0)) / n
    centered = [r - mu for r in rs]
    var = sum((c * c for c in centered), Fraction(0)) / n
    if var == 0:
        return [0.0] * n
    out = []
    for c in centered:
        if c == 0:
            out.append(0.0)
        else:
            mag = math.sqrt(float(c * c / var))
            out.append(mag if c > 0 else -mag)
    return out


def train_policy_gradient(
    ckpt: Checkpoint,
    episodes: Sequence[Episode],
    eta: float,
    seed: int = 0,
    reward_scale: float = 1.0,
    reward_shift: float = 0.0,
) -> Checkpoint:
    """One ascent step of REINFORCE with group-normalized advantages.

    A zero-variance batch is a skip, not an error: the checkpoint comes
    back unchanged (identity precisely, so callers can flag it).  The
    seed is part of the stable signature; the update itself is
    deterministic in the episode order.
    """
    if len(episodes) < 2:
        raise TrainingError(f"need at least 2 episodes, got {len(episodes)}")
    if eta < 0:
        raise ConfigError(f"eta must be >= 0, got {eta}")
    advantages = normalized_advantages(
        [e.reward for e in episodes], reward_scale, reward_shift
    )
    if all(adv == 0.0 for adv in advantages):
        return ckpt
    pad = ckpt.pad_id
    nonpad_ids = np.array([i for i in range(ckpt.vocab_size) if i != pad], dtype=np.int64)
    grad = np.zeros_like(ckpt.table)
    row_probs: dict[int, np.ndarray] = {}
    for ep, adv in zip(episodes, advantages):
        if adv == 0.0:
            continue
        for context, token in ep.steps:
            r = row_index(context_window(context, ckpt.window, pad), ckpt.rows)
            probs = row_probs.get(r)
            if probs is None:
                logits = ckpt.table[r][nonpad_ids]
                z = logits - logits.max()
                e = np.exp(z)
                probs = e / e.sum()
                row_probs[r] = probs
            grad[r, nonpad_ids] -= adv * probs
            grad[r, token] += adv
    table = ckpt.table + eta * grad
    return replace(ckpt, table=table, step=ckpt.step + 1)
