"""Decoder-only causal transformer exposing hidden states and embedding overrides.

The same class serves as the trainee and, in frozen mode, as the backbone
for image-target extraction. Design points:

  * pre-norm residual blocks, learned absolute position embeddings,
    untied input/output embeddings, ReLU feed-forward;
  * `forward` accepts a map {position -> d-vector} replacing the token
    embedding at that position before layer 0 (position embeddings are
    still added afterwards), which carries both latent filling and visual
    embedding injection;
  * every forward computes all positions at the sequence's full width, so
    prefix values are bitwise independent of suffix content (see the
    determinism policy in `autograd`);
  * generation re-forwards the whole sequence each step. There is no KV
    cache; at this scale the simplicity and exactness are worth more than
    the speedup.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractViolation, SequenceOverflow

__all__ = ["ModelConfig", "ForwardTrace", "MicroTransformer", "with_extended_vocab"]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_dim: int = 128
    layers: int = 4
    heads: int = 4
    max_seq_len: int = 384
    mlp_ratio: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ContractViolation(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}"
            )
        for name in ("vocab_size", "hidden_dim", "layers", "heads", "max_seq_len"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")


@dataclass
class ForwardTrace:
    """Per-position logits and final hidden states for one sequence.

    `final_hidden` row t is the post-final-norm state that feeds the output
    head; it depends only on positions <= t. `layer_hidden[k]` (optional)
    holds the residual-stream output of block k. `logits` is None only when
    the forward was invoked with need_logits=False (internal filling rounds).
    """

    logits: Optional[Tensor]
    final_hidden: Tensor
    layer_hidden: Optional[List[Tensor]] = None


OverrideVec = Union[np.ndarray, Tensor]


class MicroTransformer:
    def __init__(self, config: ModelConfig, init: bool = True):
        self.config = config
        self.params: Dict[str, Tensor] = {}
        if init:
            self._init_params()

    # -- parameters ----------------------------------------------------------

    def _init_params(self) -> None:
        cfg = self.config
        rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
        d = cfg.hidden_dim
        h = cfg.mlp_ratio * d

        def norm(shape):
            return rng.normal(0.0, 0.02, size=shape)

        p = self.params
        p["tok_emb"] = Tensor(norm((cfg.vocab_size, d)), requires_grad=True)
        p["pos_emb"] = Tensor(norm((cfg.max_seq_len, d)), requires_grad=True)
        for i in range(cfg.layers):
            p[f"l{i}.ln1_g"] = Tensor(np.ones(d), requires_grad=True)
            p[f"l{i}.ln1_b"] = Tensor(np.zeros(d), requires_grad=True)
            p[f"l{i}.w_qkv"] = Tensor(norm((d, 3 * d)), requires_grad=True)
            p[f"l{i}.b_qkv"] = Tensor(np.zeros(3 * d), requires_grad=True)
            p[f"l{i}.w_o"] = Tensor(norm((d, d)), requires_grad=True)
            p[f"l{i}.b_o"] = Tensor(np.zeros(d), requires_grad=True)
            p[f"l{i}.ln2_g"] = Tensor(np.ones(d), requires_grad=True)
            p[f"l{i}.ln2_b"] = Tensor(np.zeros(d), requires_grad=True)
            p[f"l{i}.w_fc1"] = Tensor(norm((d, h)), requires_grad=True)
            p[f"l{i}.b_fc1"] = Tensor(np.zeros(h), requires_grad=True)
            p[f"l{i}.w_fc2"] = Tensor(norm((h, d)), requires_grad=True)
            p[f"l{i}.b_fc2"] = Tensor(np.zeros(d), requires_grad=True)
        p["lnf_g"] = Tensor(np.ones(d), requires_grad=True)
        p["lnf_b"] = Tensor(np.zeros(d), requires_grad=True)
        p["w_out"] = Tensor(norm((d, cfg.vocab_size)), requires_grad=True)
        p["b_out"] = Tensor(np.zeros(cfg.vocab_size), requires_grad=True)

    def param_names(self) -> List[str]:
        """Parameter order is fixed; checkpoints serialize in this order."""
        return list(self.params.keys())

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def set_trainable(self, trainable: bool) -> None:
        for p in self.params.values():
            p.requires_grad = trainable
            if not trainable:
                p.grad = None

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.params.values())

    # -- forward -------------------------------------------------------------

    def forward(
        self,
        token_ids: Sequence[int],
        overrides: Optional[Dict[int, OverrideVec]] = None,
        want_layer_hidden: bool = False,
        need_logits: bool = True,
    ) -> ForwardTrace:
        cfg = self.config
        ids = np.asarray(list(token_ids), dtype=np.int64)
        T = len(ids)
        if T == 0:
            raise ContractViolation("forward requires a non-empty sequence")
        if T > cfg.max_seq_len:
            raise SequenceOverflow(
                f"sequence length {T} exceeds max_seq_len {cfg.max_seq_len}"
            )
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise ContractViolation("token id out of vocabulary range")
        overrides = overrides or {}

        x = ag.embedding(self.params["tok_emb"], ids)
        for pos, vec in sorted(overrides.items()):
            if not (0 <= pos < T):
                raise ContractViolation(f"override position {pos} outside sequence")
            row = vec if isinstance(vec, Tensor) else ag.constant(np.asarray(vec, dtype=np.float64))
            if row.data.shape != (cfg.hidden_dim,):
                raise ContractViolation(
                    f"override at {pos} has shape {row.data.shape}, expected ({cfg.hidden_dim},)"
                )
            x = ag.set_row(x, pos, row)
        x = ag.add(x, ag.slice_rows(self.params["pos_emb"], 0, T))

        layer_hidden: Optional[List[Tensor]] = [] if want_layer_hidden else None
        H, d = cfg.heads, cfg.hidden_dim
        dh = d // H
        for i in range(cfg.layers):
            p = self.params
            h1 = ag.layer_norm(x, p[f"l{i}.ln1_g"], p[f"l{i}.ln1_b"])
            qkv = ag.linear(h1, p[f"l{i}.w_qkv"], p[f"l{i}.b_qkv"])

            def heads(block: Tensor) -> Tensor:
                return ag.swap01(ag.reshape(block, (T, H, dh)))

            q = heads(ag.slice_cols(qkv, 0, d))
            k = heads(ag.slice_cols(qkv, d, 2 * d))
            v = heads(ag.slice_cols(qkv, 2 * d, 3 * d))
            att = ag.causal_attention(q, k, v)
            att = ag.reshape(ag.swap01(att), (T, d))
            x = ag.add(x, ag.linear(att, p[f"l{i}.w_o"], p[f"l{i}.b_o"]))

            h2 = ag.layer_norm(x, p[f"l{i}.ln2_g"], p[f"l{i}.ln2_b"])
            ff = ag.relu(ag.linear(h2, p[f"l{i}.w_fc1"], p[f"l{i}.b_fc1"]))
            ff = ag.linear(ff, p[f"l{i}.w_fc2"], p[f"l{i}.b_fc2"])
            x = ag.add(x, ff)
            if layer_hidden is not None:
                layer_hidden.append(x)

        final_hidden = ag.layer_norm(x, self.params["lnf_g"], self.params["lnf_b"])
        if need_logits:
            logits = ag.linear(final_hidden, self.params["w_out"], self.params["b_out"])
        else:
            logits = None  # type: ignore[assignment]
        return ForwardTrace(logits=logits, final_hidden=final_hidden, layer_hidden=layer_hidden)

    # -- generation ------------------------------------------------------------

    def generate(
        self,
        prompt_ids: Sequence[int],
        max_new_tokens: int,
        latent_plan: Sequence[int] = (),
        eos_id: Optional[int] = None,
        banned_ids: Sequence[int] = (),
    ) -> Tuple[List[int], List[np.ndarray]]:
        """Greedy decoding; returns (generated ids, per-step final hidden).

        `latent_plan` lists prompt positions that are latent slots; they are
        filled by the continuous-filling contract on every re-forward and
        are never sampled. `banned_ids` are excluded from the argmax (used
        for the latent special tokens).
        """
        from .latent import chained_forward  # local import to avoid a cycle

        prompt = list(prompt_ids)
        if not prompt:
            raise ContractViolation("generate requires a non-empty prompt")
        if len(prompt) + max_new_tokens > self.config.max_seq_len:
            raise SequenceOverflow(
                f"prompt {len(prompt)} + budget {max_new_tokens} exceeds "
                f"max_seq_len {self.config.max_seq_len}"
            )
        plan = sorted(int(p) for p in latent_plan)
        for pos in plan:
            if pos <= 0 or pos >= len(prompt):
                raise ContractViolation(f"latent plan position {pos} outside prompt")

        out: List[int] = []
        hiddens: List[np.ndarray] = []
        banned = list(banned_ids)
        seq = list(prompt)
        for _ in range(max_new_tokens):
            trace = chained_forward(self, seq, plan)
            logits = trace.logits.data[-1].copy()
            for b in banned:
                logits[b] = -np.inf
            nxt = int(np.argmax(logits))
            out.append(nxt)
            hiddens.append(trace.final_hidden.data[-1].copy())
            seq.append(nxt)
            if eos_id is not None and nxt == eos_id:
                break
        return out, hiddens


def with_extended_vocab(model: MicroTransformer, extra: int) -> MicroTransformer:
    """Return a model whose vocabulary grew by `extra` mean-initialized slots.

    New input-embedding rows equal the column-wise mean of the existing
    rows; the output head gains matching mean-initialized columns, which
    leaves logits over the pre-existing vocabulary unchanged.
    """
    cfg = model.config
    new_cfg = replace(cfg, vocab_size=cfg.vocab_size + extra)
    out = MicroTransformer(new_cfg, init=False)
    for name, p in model.params.items():
        if name == "tok_emb":
            mean_row = p.data.mean(axis=0, keepdims=True)
            data = np.vstack([p.data, np.repeat(mean_row, extra, axis=0)])
        elif name == "w_out":
            mean_col = p.data.mean(axis=1, keepdims=True)
            data = np.hstack([p.data, np.repeat(mean_col, extra, axis=1)])
        elif name == "b_out":
            data = np.concatenate([p.data, np.full(extra, p.data.mean())])
        else:
            data = p.data.copy()
        out.params[name] = Tensor(data, requires_grad=p.requires_grad)
    return out
