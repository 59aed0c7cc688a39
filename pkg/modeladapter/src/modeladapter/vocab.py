"""Tokenizer identity for the wire protocol.

The hash is the contract: clients refuse to talk to a server whose
tokenizer hash differs from their own, so both sides derive it from the
same canonical string.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class WireVocab:
    kind: str = "byte"
    size: int = 257
    pad_id: int = 256

    def __post_init__(self) -> None:
        # served models index non-pad tokens 0..size-2
        if self.pad_id != self.size - 1:
            raise ValueError("the pad id must be the last token id")

    @property
    def nonpad_size(self) -> int:
        return self.size - 1

    def hash(self) -> str:
        return hashlib.sha256(
            f"{self.kind}:{self.size}:{self.pad_id}".encode()
        ).hexdigest()

    def valid(self, ids: Sequence[int]) -> bool:
        return all(0 <= i < self.size for i in ids)

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: Iterable[int]) -> str:
        return bytes(i for i in ids if i != self.pad_id).decode(
            "utf-8", errors="replace"
        )
