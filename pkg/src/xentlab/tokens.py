"""Token space: vocabularies and fixed-length caret strings.

A TokenString is an immutable array of L token cells plus a caret in
[0, L].  The caret splits the string into a written left half and an
unwritten right half; all mutation goes through the small closed set of
operations below, each returning a fresh TokenString.

The reference vocabulary is byte-level: ids 0..255 are the bytes of the
UTF-8 encoding, id 256 is the padding token.  Pad is never sampled by
any backend and is skipped when decoding back to text.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import CaretRangeError, ConfigError, CopyOverflowError, InvalidLengthError

# === vocab ===


@dataclass(frozen=True)
class Vocab:
    size: int
    pad_id: int
    kind: str = "byte"

    def __post_init__(self) -> None:
        if self.size < 2:
            raise InvalidLengthError(f"vocab size must be >= 2, got {self.size}")
        if not 0 <= self.pad_id < self.size:
            raise ConfigError(f"pad_id {self.pad_id} outside vocab of size {self.size}")

    @property
    def nonpad_size(self) -> int:
        return self.size - 1

    def encode(self, text: str) -> tuple[int, ...]:
        if self.kind != "byte":
            raise ConfigError(f"vocab kind {self.kind!r} has no text codec")
        return tuple(text.encode("utf-8"))

    def decode(self, ids: Iterable[int]) -> str:
        if self.kind != "byte":
            raise ConfigError(f"vocab kind {self.kind!r} has no text codec")
        return bytes(i for i in ids if i != self.pad_id).decode("utf-8", errors="replace")

    def hash(self) -> str:
        """Stable identity used in checkpoints and the remote handshake."""
        return hashlib.sha256(f"{self.kind}:{self.size}:{self.pad_id}".encode()).hexdigest()


def byte_vocab() -> Vocab:
    return Vocab(size=257, pad_id=256)


def nonpad(ids: Sequence[int], pad_id: int) -> tuple[int, ...]:
    return tuple(i for i in ids if i != pad_id)


# === token strings ===


@dataclass(frozen=True)
class TokenString:
    tokens: tuple[int, ...]
    caret: int
    pad_id: int

    def __post_init__(self) -> None:
        if not 0 <= self.caret <= len(self.tokens):
            raise CaretRangeError(f"caret {self.caret} outside [0, {len(self.tokens)}]")

    @property
    def length(self) -> int:
        return len(self.tokens)

    def written(self) -> tuple[int, ...]:
        return self.tokens[: self.caret]

    def unwritten(self) -> tuple[int, ...]:
        return self.tokens[self.caret :]


def new_register(length: int, pad_id: int) -> TokenString:
    if length < 1:
        raise InvalidLengthError(f"register length must be >= 1, got {length}")
    return TokenString(tokens=(pad_id,) * length, caret=0, pad_id=pad_id)


def move_caret(ts: TokenString, delta: int) -> TokenString:
    """Shift the caret by delta, saturating at 0 and L."""
    c = min(max(ts.caret + delta, 0), ts.length)
    return TokenString(ts.tokens, c, ts.pad_id)


def append_advance(ts: TokenString, ids: Sequence[int]) -> TokenString:
    """Write ids at the caret and advance past them; overflow is cut."""
    room = ts.length - ts.caret
    w = tuple(ids[:room])
    toks = ts.tokens[: ts.caret] + w + ts.tokens[ts.caret + len(w) :]
    return TokenString(toks, ts.caret + len(w), ts.pad_id)


def fill_left_region(ts: TokenString, ids: Sequence[int]) -> TokenString:
    """Overwrite [0, min(|ids|, caret)) with ids; everything else stays put.

    The caret does not move, and cells between |ids| and the caret keep
    their previous contents.
    """
    w = tuple(ids[: ts.caret])
    toks = w + ts.tokens[len(w) :]
    return TokenString(toks, ts.caret, ts.pad_id)


def copy_into_left(dst: TokenString, src: TokenString) -> TokenString:
    """Move src's written half into dst, flush against dst's caret.

    dst cells [dst.caret - src.caret, dst.caret) receive src's written
    tokens and dst's caret retreats by exactly src.caret.  Unlike
    fill_left_region this refuses to truncate: a source caret beyond the
    destination caret is a hard error.
    """
    if src.caret > dst.caret:
        raise CopyOverflowError(
            f"source caret {src.caret} exceeds destination caret {dst.caret}"
        )
    start = dst.caret - src.caret
    toks = dst.tokens[:start] + src.written() + dst.tokens[dst.caret :]
    return TokenString(toks, start, dst.pad_id)
