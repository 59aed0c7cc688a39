"""Toy served models.

Each model scores and samples non-pad tokens autoregressively.  Real
deployments would put an actual language model behind the same three
methods; everything above this module only sees the wire schema.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .vocab import WireVocab

# finite stand-in for a token the model can never emit
PAD_LOGPROB = -1e4


class CapabilityUnsupported(Exception):
    """The request needs a feature this model does not provide."""


class ServedModel:
    """Autoregressive scorer/sampler over the non-pad alphabet."""

    seeded_sampling = True

    def __init__(self, vocab: WireVocab) -> None:
        self.vocab = vocab

    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        """Normalized log-probabilities over token ids 0..size-2."""
        raise NotImplementedError

    def logprobs(self, context: Sequence[int], continuation: Sequence[int]) -> list[float]:
        out: list[float] = []
        ctx = list(context)
        for tok in continuation:
            if tok == self.vocab.pad_id:
                out.append(PAD_LOGPROB)
            else:
                out.append(float(self._nonpad_logprobs(tuple(ctx))[tok]))
            ctx.append(tok)
        return out

    def sample(
        self,
        context: Sequence[int],
        n: int,
        temperature: float,
        seed: int | None,
    ) -> list[int]:
        rng = np.random.default_rng(seed)
        ctx = list(context)
        out: list[int] = []
        for _ in range(n):
            logits = self._nonpad_logprobs(tuple(ctx)) / temperature
            z = logits - logits.max()
            p = np.exp(z)
            p /= p.sum()
            tok = int(rng.choice(self.vocab.nonpad_size, p=p))
            out.append(tok)
            ctx.append(tok)
        return out


class UniformModel(ServedModel):
    def __init__(self, vocab: WireVocab) -> None:
        super().__init__(vocab)
        self._row = np.full(vocab.nonpad_size, -np.log(vocab.nonpad_size))

    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        return self._row


class BigramModel(ServedModel):
    """Add-one-smoothed byte bigram fit on a corpus string."""

    def __init__(self, vocab: WireVocab, corpus: str) -> None:
        super().__init__(vocab)
        m = vocab.nonpad_size
        counts = np.ones((m, m))
        unigram = np.ones(m)
        data = vocab.encode(corpus)
        for tok in data:
            unigram[tok] += 1
        for prev, tok in zip(data, data[1:]):
            counts[prev, tok] += 1
        self._rows = np.log(counts / counts.sum(axis=1, keepdims=True))
        self._start = np.log(unigram / unigram.sum())

    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        if not context or context[-1] == self.vocab.pad_id:
            return self._start
        return self._rows[context[-1]]


class UnseededModel(ServedModel):
    """Wrapper for backends whose sampler cannot honor a caller seed.

    Scoring passes through; sampling with an explicit seed is refused so
    clients learn to treat the model as evaluation-only.
    """

    seeded_sampling = False

    def __init__(self, inner: ServedModel) -> None:
        super().__init__(inner.vocab)
        self._inner = inner

    def _nonpad_logprobs(self, context: tuple[int, ...]) -> np.ndarray:
        return self._inner._nonpad_logprobs(context)

    def sample(self, context, n, temperature, seed):
        if seed is not None:
            raise CapabilityUnsupported("this model cannot seed its sampler")
        return self._inner.sample(context, n, temperature, None)


DEFAULT_CORPUS = """\
the cat sat on the mat
a quick brown fox jumps over the lazy dog
x<<s0
m0<<x
s1<<m0
x<<s1
m0>>x
x<<x
the game scores what the model cannot predict
"""


def default_models(vocab: WireVocab) -> dict[str, ServedModel]:
    bigram = BigramModel(vocab, DEFAULT_CORPUS)
    return {
        "bigram": bigram,
        "uniform": UniformModel(vocab),
        "bigram-unseeded": UnseededModel(BigramModel(vocab, DEFAULT_CORPUS)),
    }
