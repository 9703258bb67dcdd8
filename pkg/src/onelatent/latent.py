"""Sequence templates and continuous latent filling.

Training/inference sequences place a latent block between question and
answer:

    stage 1:    [BOS, q, <|begin-latent|>, <|end-latent|>, cot, answer, EOS]
    stages 2-3: [BOS, q, <|begin-latent|>, <|latent|> x N, <|end-latent|>, answer, EOS]

Supervision covers cot+answer+EOS in stage 1 and answer+EOS in stages 2-3;
question tokens and the latent markers are never supervised.

A latent slot's input embedding is the final hidden state of the previous
position, resolved strictly left to right. `chained_forward` realizes this
with one full-width forward per latent plus a final pass, which keeps every
read/inject step bitwise reproducible (see the determinism policy in
`autograd`); gradients flow through the injected states unless
`stop_gradient` is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractViolation
from .model import ForwardTrace, MicroTransformer
from .tokenizer import Tokenizer

__all__ = [
    "LatentConfig",
    "AssembledSequence",
    "assemble",
    "decompose",
    "assemble_prompt",
    "chained_forward",
    "fill_latents",
    "read_alignment_state",
]

ROLE_BOS = "bos"
ROLE_QUESTION = "question"
ROLE_BEGIN = "begin-latent"
ROLE_LATENT = "latent"
ROLE_END = "end-latent"
ROLE_COT = "cot"
ROLE_ANSWER = "answer"
ROLE_EOS = "eos"


@dataclass(frozen=True)
class LatentConfig:
    begin_latent_id: int
    latent_id: int
    end_latent_id: int
    bos_id: int
    eos_id: int
    pad_id: int
    n_latents: int = 1

    def __post_init__(self):
        trio = {self.begin_latent_id, self.latent_id, self.end_latent_id}
        if len(trio) != 3 or trio & {self.bos_id, self.eos_id, self.pad_id}:
            raise ContractViolation("latent special ids must be three distinct dedicated ids")
        if self.n_latents < 0:
            raise ContractViolation("n_latents must be non-negative")

    @classmethod
    def from_tokenizer(cls, tok: Tokenizer, n_latents: int = 1) -> "LatentConfig":
        if not tok.has_latent_tokens:
            raise ContractViolation("tokenizer lacks latent tokens")
        return cls(
            begin_latent_id=tok.begin_latent_id,
            latent_id=tok.latent_id,
            end_latent_id=tok.end_latent_id,
            bos_id=tok.bos_id,
            eos_id=tok.eos_id,
            pad_id=tok.pad_id,
            n_latents=n_latents,
        )


@dataclass
class AssembledSequence:
    token_ids: List[int]
    roles: List[str]
    supervised: Tuple[int, ...]  # target positions for NTP
    latent_positions: Tuple[int, ...] = ()
    stage: int = 0

    def __post_init__(self):
        if len(self.token_ids) != len(self.roles):
            raise ContractViolation("token/role length mismatch")
        for pos in self.supervised:
            if self.roles[pos] not in (ROLE_COT, ROLE_ANSWER, ROLE_EOS):
                raise ContractViolation(
                    f"supervised position {pos} has role {self.roles[pos]}"
                )

    def __len__(self) -> int:
        return len(self.token_ids)


def assemble(
    q_ids: Sequence[int],
    cot_ids: Optional[Sequence[int]],
    a_ids: Sequence[int],
    stage: int,
    config: LatentConfig,
) -> AssembledSequence:
    if stage not in (1, 2, 3):
        raise ContractViolation(f"stage must be 1, 2 or 3, got {stage}")
    if stage == 1 and cot_ids is None:
        raise ContractViolation("stage 1 requires cot tokens")
    if stage in (2, 3) and cot_ids is not None:
        raise ContractViolation(f"stage {stage} forbids cot tokens")
    q_ids = list(q_ids)
    a_ids = list(a_ids)
    if not q_ids or not a_ids:
        raise ContractViolation("question and answer must be non-empty")

    ids: List[int] = [config.bos_id]
    roles: List[str] = [ROLE_BOS]
    ids.extend(q_ids)
    roles.extend([ROLE_QUESTION] * len(q_ids))
    ids.append(config.begin_latent_id)
    roles.append(ROLE_BEGIN)
    latent_positions: Tuple[int, ...] = ()
    if stage in (2, 3):
        first = len(ids)
        ids.extend([config.latent_id] * config.n_latents)
        roles.extend([ROLE_LATENT] * config.n_latents)
        latent_positions = tuple(range(first, first + config.n_latents))
    ids.append(config.end_latent_id)
    roles.append(ROLE_END)
    if stage == 1:
        ids.extend(cot_ids)
        roles.extend([ROLE_COT] * len(cot_ids))
    ids.extend(a_ids)
    roles.extend([ROLE_ANSWER] * len(a_ids))
    ids.append(config.eos_id)
    roles.append(ROLE_EOS)

    supervised = tuple(
        i for i, r in enumerate(roles) if r in (ROLE_COT, ROLE_ANSWER, ROLE_EOS)
    )
    return AssembledSequence(
        token_ids=ids,
        roles=roles,
        supervised=supervised,
        latent_positions=latent_positions,
        stage=stage,
    )


def decompose(seq: AssembledSequence) -> Tuple[List[int], Optional[List[int]], List[int]]:
    """Recover (q_ids, cot_ids or None, a_ids) from an assembled sequence."""
    q = [t for t, r in zip(seq.token_ids, seq.roles) if r == ROLE_QUESTION]
    cot = [t for t, r in zip(seq.token_ids, seq.roles) if r == ROLE_COT]
    a = [t for t, r in zip(seq.token_ids, seq.roles) if r == ROLE_ANSWER]
    return q, (cot if seq.stage == 1 else None), a


def assemble_prompt(
    q_ids: Sequence[int], mode: str, config: LatentConfig
) -> Tuple[List[int], Tuple[int, ...]]:
    """Inference prompt and latent plan for an evaluation mode.

    onelatent: [BOS, q, BOT, LAT x N, EOT]; decoding starts after EOT.
    cot:       [BOS, q, BOT, EOT]; the model emits cot then the answer.
    nocot:     [BOS, q]; direct answering with no latent block.
    """
    q_ids = list(q_ids)
    if mode == "onelatent":
        ids = [config.bos_id] + q_ids + [config.begin_latent_id]
        first = len(ids)
        ids.extend([config.latent_id] * config.n_latents)
        ids.append(config.end_latent_id)
        return ids, tuple(range(first, first + config.n_latents))
    if mode == "cot":
        return [config.bos_id] + q_ids + [config.begin_latent_id, config.end_latent_id], ()
    if mode == "nocot":
        return [config.bos_id] + q_ids, ()
    raise ContractViolation(f"unknown eval mode: {mode}")


def _source_hidden(trace: ForwardTrace, layer_source) -> Tensor:
    if layer_source == "final":
        return trace.final_hidden
    if trace.layer_hidden is None:
        raise ContractViolation("layer hiddens were not recorded for layer_source")
    return trace.layer_hidden[int(layer_source)]


def chained_forward(
    model: MicroTransformer,
    token_ids: Sequence[int],
    latent_positions: Sequence[int],
    stop_gradient: bool = False,
    layer_source="final",
    want_layer_hidden: bool = False,
) -> ForwardTrace:
    """Forward with latent slots filled strictly left to right.

    For each latent position l (ascending), run the prefix [0, l) with the
    overrides collected so far and read the hidden state at l-1; that
    vector becomes the embedding override at l. A final pass over the full
    sequence produces the trace. This is exactly the read-inject-recompute
    procedure, so it is bitwise identical to performing those passes by
    hand through `forward`.
    """
    plan = sorted(int(p) for p in latent_positions)
    want_layers = want_layer_hidden or layer_source != "final"
    if not plan:
        return model.forward(token_ids, want_layer_hidden=want_layer_hidden)
    if plan[0] == 0:
        raise ContractViolation("latent at position 0 has no predecessor")
    d = model.config.hidden_dim
    ids = list(token_ids)
    filled: Dict[int, ag.Tensor] = {}
    for pos in plan:
        trace = model.forward(
            ids[:pos], overrides=dict(filled), want_layer_hidden=want_layers, need_logits=False
        )
        h = ag.reshape(ag.slice_rows(_source_hidden(trace, layer_source), pos - 1, pos), (d,))
        if stop_gradient:
            h = ag.constant(h.data.copy())
        filled[pos] = h
    return model.forward(ids, overrides=dict(filled), want_layer_hidden=want_layer_hidden)


def fill_latents(
    seq: AssembledSequence,
    model: MicroTransformer,
    stop_gradient: bool = False,
    layer_source="final",
) -> ForwardTrace:
    return chained_forward(
        model,
        seq.token_ids,
        seq.latent_positions,
        stop_gradient=stop_gradient,
        layer_source=layer_source,
    )


def read_alignment_state(trace: ForwardTrace, seq: AssembledSequence) -> Tensor:
    """Final hidden state at the single begin-latent position."""
    bot = [i for i, r in enumerate(seq.roles) if r == ROLE_BEGIN]
    if len(bot) != 1:
        raise ContractViolation(f"expected exactly one begin-latent, found {len(bot)}")
    d = trace.final_hidden.data.shape[-1]
    return ag.reshape(ag.slice_rows(trace.final_hidden, bot[0], bot[0] + 1), (d,))
