"""Whitespace word tokenizer with a deterministic, corpus-derived vocabulary.

Corpus text is emitted pre-tokenized (tokens separated by single spaces),
so encoding is a dictionary lookup. The base vocabulary is the sorted set
of corpus tokens plus fixed specials; the three latent-slot tokens are
appended later by the curriculum (see `extend_with_latent_tokens`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

from .errors import ContractViolation

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
BEGIN_LATENT = "<|begin-latent|>"
LATENT = "<|latent|>"
END_LATENT = "<|end-latent|>"

_BASE_SPECIALS = (PAD, BOS, EOS, UNK)
LATENT_SPECIALS = (BEGIN_LATENT, LATENT, END_LATENT)


@dataclass
class Tokenizer:
    tokens: Tuple[str, ...]
    ids: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self.ids) != len(self.tokens):
            raise ContractViolation("duplicate tokens in vocabulary")

    # -- construction ------------------------------------------------------

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Tokenizer":
        words = set()
        for text in texts:
            words.update(text.split())
        overlap = words.intersection(_BASE_SPECIALS + LATENT_SPECIALS)
        if overlap:
            raise ContractViolation(f"corpus text collides with special tokens: {overlap}")
        return cls(tokens=_BASE_SPECIALS + tuple(sorted(words)))

    def extend_with_latent_tokens(self) -> "Tokenizer":
        if self.has_latent_tokens:
            raise ContractViolation("latent tokens already present (double initialization)")
        return Tokenizer(tokens=self.tokens + LATENT_SPECIALS)

    # -- properties --------------------------------------------------------

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self.ids[PAD]

    @property
    def bos_id(self) -> int:
        return self.ids[BOS]

    @property
    def eos_id(self) -> int:
        return self.ids[EOS]

    @property
    def unk_id(self) -> int:
        return self.ids[UNK]

    @property
    def has_latent_tokens(self) -> bool:
        return BEGIN_LATENT in self.ids

    @property
    def begin_latent_id(self) -> int:
        return self.ids[BEGIN_LATENT]

    @property
    def latent_id(self) -> int:
        return self.ids[LATENT]

    @property
    def end_latent_id(self) -> int:
        return self.ids[END_LATENT]

    def special_ids(self) -> Tuple[int, ...]:
        present = _BASE_SPECIALS + (LATENT_SPECIALS if self.has_latent_tokens else ())
        return tuple(self.ids[t] for t in present)

    # -- encode / decode ---------------------------------------------------

    def encode(self, text: str) -> List[int]:
        unk = self.unk_id
        return [self.ids.get(w, unk) for w in text.split()]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)
