"""SXGL: a tiny two-operand language for cross-entropy games.

A program is plain text.  A line of the form OPERAND<<OPERAND or
OPERAND>>OPERAND (operands: x, sN, mN with N in range) is an
instruction; every other line is a data line whose verbatim text can be
pulled into string registers by the instruction that follows it.
Parsing is total: any text is a program.

`x<<x` ends a game segment, flushing scores to rewards and resetting
all machine state.  Programs implicitly end with it; parse appends the
terminator line when the source does not already finish with one.

Program length is counted on the verbatim source text (the empty
program normalizes to "x<<x").
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterator

from .errors import ConfigError
from .tokens import Vocab, byte_vocab

_INSTR_RE = re.compile(r"^\s*(x|s(\d+)|m(\d+))(<<|>>)(x|s(\d+)|m(\d+))\s*$")

TERMINATOR_TEXT = "x<<x"


@dataclass(frozen=True)
class Operand:
    kind: str  # "x", "s", or "m"
    index: int | None = None

    def __str__(self) -> str:
        return self.kind if self.kind == "x" else f"{self.kind}{self.index}"


X = Operand("x")


@dataclass(frozen=True)
class Instruction:
    lhs: Operand
    op: str  # "<<" or ">>"
    rhs: Operand

    def __str__(self) -> str:
        return f"{self.lhs}{self.op}{self.rhs}"


TERMINATOR = Instruction(X, "<<", X)


@dataclass(frozen=True)
class Line:
    raw: str
    instr: Instruction | None

    @property
    def kind(self) -> str:
        return "data" if self.instr is None else "instruction"


def _parse_line(text: str, k: int, u: int) -> Instruction | None:
    m = _INSTR_RE.match(text)
    if not m:
        return None

    def operand(tok: str) -> Operand | None:
        if tok == "x":
            return X
        idx = int(tok[1:])
        # out-of-range register indices demote the line to data
        if tok[0] == "s":
            return Operand("s", idx) if idx < k else None
        return Operand("m", idx) if idx < u else None

    lhs = operand(m.group(1))
    rhs = operand(m.group(5))
    if lhs is None or rhs is None:
        return None
    return Instruction(lhs, m.group(4), rhs)


@dataclass(frozen=True)
class Program:
    lines: tuple[Line, ...]
    source: str
    k: int
    u: int
    source_tokens: tuple[int, ...]

    def fingerprint(self) -> str:
        head = f"{self.k}:{self.u}:".encode()
        return hashlib.sha256(head + self.source.encode()).hexdigest()


def is_instruction_text(text: str, k: int, u: int) -> bool:
    """True when a single line would parse as an instruction."""
    return _parse_line(text, k, u) is not None


def parse(source: str, k: int = 4, u: int = 3, vocab: Vocab | None = None) -> Program:
    """Turn any text into a program. Never fails."""
    if k < 1 or u < 1:
        raise ConfigError(f"need k >= 1 and u >= 1, got k={k}, u={u}")
    vocab = vocab or byte_vocab()
    if source == "":
        source = TERMINATOR_TEXT
    lines = [Line(raw, _parse_line(raw, k, u)) for raw in source.splitlines()]
    if not lines or lines[-1].instr != TERMINATOR:
        lines.append(Line(TERMINATOR_TEXT, TERMINATOR))
    return Program(
        lines=tuple(lines),
        source=source,
        k=k,
        u=u,
        source_tokens=vocab.encode(source),
    )


def code_length(program: Program) -> int:
    """Token count of the verbatim source text."""
    return len(program.source_tokens)


def concat(a: Program, b: Program, vocab: Vocab | None = None) -> Program:
    """Run a, then b.  Line lists are joined as-is, so segment boundaries
    survive even when a's source leans on the implicit terminator."""
    if (a.k, a.u) != (b.k, b.u):
        raise ConfigError("cannot concat programs with different register shapes")
    vocab = vocab or byte_vocab()
    source = a.source + "\n" + b.source
    return Program(
        lines=a.lines + b.lines,
        source=source,
        k=a.k,
        u=a.u,
        source_tokens=vocab.encode(source),
    )


def segments(program: Program) -> list[tuple[Line, ...]]:
    """Split the line list after each terminator. Every segment ends with one."""
    out: list[tuple[Line, ...]] = []
    cur: list[Line] = []
    for line in program.lines:
        cur.append(line)
        if line.instr == TERMINATOR:
            out.append(tuple(cur))
            cur = []
    if cur:  # unreachable for parse/concat output, kept for direct constructions
        cur.append(Line(TERMINATOR_TEXT, TERMINATOR))
        out.append(tuple(cur))
    return out


def segment_programs(program: Program, vocab: Vocab | None = None) -> list[Program]:
    """Each segment as a standalone program with the same register shape."""
    vocab = vocab or byte_vocab()
    out = []
    for seg in segments(program):
        src = "\n".join(line.raw for line in seg)
        out.append(
            Program(
                lines=seg,
                source=src,
                k=program.k,
                u=program.u,
                source_tokens=vocab.encode(src),
            )
        )
    return out


def segment_hash(seg: tuple[Line, ...]) -> int:
    """Stable 63-bit hash of a segment's verbatim text, used to derive
    per-segment seeds.  Identical segments roll identical randomness, so
    scores of concatenated games decompose exactly."""
    src = "\n".join(line.raw for line in seg)
    return int.from_bytes(hashlib.sha256(src.encode()).digest()[:8], "big") >> 1


def iter_instructions(program: Program) -> Iterator[tuple[int, Line]]:
    for i, line in enumerate(program.lines):
        if line.instr is not None:
            yield i, line
