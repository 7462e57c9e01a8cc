"""Four transformer backbone variants over a shared layer stack.

All variants share the same pre-layer-norm blocks and differ only in
attention masking, decoder input wiring, and which hidden states they
expose:

  encoder_only          bidirectional stack, one state per input token
  decoder_multitokens   causal stack over [<s>, t_1..t_n], states for t_1..t_n
  encdec_singletoken    encoder memory + a 1-token decoder, single state
  encdec_multitokens    encoder memory + causal decoder over [<s>, t_1..t_n]

Batches are packed: sequences are concatenated row-wise and kept apart by
block-diagonal additive masks, so every operation stays rank-2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ContractError,
    EmptyInputError,
    SequenceLengthError,
    ShapeError,
    VocabError,
)
from .text import NUM_SPECIALS, START_ID


class Variant(str, Enum):
    ENCODER_ONLY = "encoder_only"
    DECODER_MULTITOKENS = "decoder_multitokens"
    ENCDEC_SINGLETOKEN = "encdec_singletoken"
    ENCDEC_MULTITOKENS = "encdec_multitokens"


@dataclass(frozen=True)
class BackboneConfig:
    variant: Variant
    num_layers: int = 2
    d_model: int = 64
    num_heads: int = 4
    vocab_size: int = 0
    max_seq_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}"
            )
        if self.vocab_size < NUM_SPECIALS:
            raise ContractError(f"vocab_size must be >= {NUM_SPECIALS}")
        if min(self.num_layers, self.d_model, self.num_heads, self.max_seq_len) < 1:
            raise ContractError("num_layers, d_model, num_heads, max_seq_len must be >= 1")


class ParamRegistry:
    """Flat, construction-ordered list of named parameter tensors."""

    def __init__(self):
        self._params: list[tuple[str, Tensor]] = []

    def add(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params.append((name, t))
        return t

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params)


def _normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=shape)


class MultiHeadAttention:
    """Projected multi-head attention; q and k/v may come from different stacks."""

    def __init__(self, d_model: int, num_heads: int, rng, reg: ParamRegistry, prefix: str):
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.wq = reg.add(f"{prefix}.wq", _normal(rng, (d_model, d_model)))
        self.wk = reg.add(f"{prefix}.wk", _normal(rng, (d_model, d_model)))
        self.wv = reg.add(f"{prefix}.wv", _normal(rng, (d_model, d_model)))
        self.wo = reg.add(f"{prefix}.wo", _normal(rng, (d_model, d_model)))
        self.bq = reg.add(f"{prefix}.bq", np.zeros(d_model))
        self.bk = reg.add(f"{prefix}.bk", np.zeros(d_model))
        self.bv = reg.add(f"{prefix}.bv", np.zeros(d_model))
        self.bo = reg.add(f"{prefix}.bo", np.zeros(d_model))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None) -> Tensor:
        qp = ad.add(ad.matmul(q, self.wq), self.bq)
        kp = ad.add(ad.matmul(k, self.wk), self.bk)
        vp = ad.add(ad.matmul(v, self.wv), self.bv)
        inv_sqrt = 1.0 / math.sqrt(self.d_head)
        heads = []
        for h in range(self.num_heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            qh = ad.slice_cols(qp, lo, hi)
            kh = ad.slice_cols(kp, lo, hi)
            vh = ad.slice_cols(vp, lo, hi)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt)
            weights = ad.softmax_rows(scores, mask)
            heads.append(ad.matmul(weights, vh))
        ctx = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
        return ad.add(ad.matmul(ctx, self.wo), self.bo)


class _LayerNorm:
    def __init__(self, d_model: int, reg: ParamRegistry, prefix: str):
        self.gain = reg.add(f"{prefix}.gain", np.ones(d_model))
        self.bias = reg.add(f"{prefix}.bias", np.zeros(d_model))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class _FeedForward:
    def __init__(self, d_model: int, rng, reg: ParamRegistry, prefix: str):
        d_ff = 4 * d_model
        self.w1 = reg.add(f"{prefix}.w1", _normal(rng, (d_model, d_ff)))
        self.b1 = reg.add(f"{prefix}.b1", np.zeros(d_ff))
        self.w2 = reg.add(f"{prefix}.w2", _normal(rng, (d_ff, d_model)))
        self.b2 = reg.add(f"{prefix}.b2", np.zeros(d_model))

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)


class _Block:
    """Pre-LN transformer block: self-attention, optional cross-attention, FFN."""

    def __init__(self, d_model, num_heads, rng, reg, prefix, cross: bool):
        self.ln1 = _LayerNorm(d_model, reg, f"{prefix}.ln1")
        self.attn = MultiHeadAttention(d_model, num_heads, rng, reg, f"{prefix}.attn")
        self.cross_attn = None
        if cross:
            self.ln_cross = _LayerNorm(d_model, reg, f"{prefix}.ln_cross")
            self.cross_attn = MultiHeadAttention(
                d_model, num_heads, rng, reg, f"{prefix}.cross"
            )
        self.ln2 = _LayerNorm(d_model, reg, f"{prefix}.ln2")
        self.ffn = _FeedForward(d_model, rng, reg, f"{prefix}.ffn")

    def __call__(self, x, self_mask, memory=None, cross_mask=None):
        a = self.ln1(x)
        x = ad.add(x, self.attn(a, a, a, self_mask))
        if self.cross_attn is not None:
            c = self.ln_cross(x)
            x = ad.add(x, self.cross_attn(c, memory, memory, cross_mask))
        f = self.ln2(x)
        return ad.add(x, self.ffn(f))


def _self_mask(seg: np.ndarray, pos: np.ndarray, causal: bool) -> np.ndarray:
    allowed = seg[:, None] == seg[None, :]
    if causal:
        allowed &= pos[None, :] <= pos[:, None]
    return np.where(allowed, 0.0, ad.MASK_NEG)


def _cross_mask(seg_q: np.ndarray, seg_kv: np.ndarray) -> np.ndarray:
    return np.where(seg_q[:, None] == seg_kv[None, :], 0.0, ad.MASK_NEG)


class Backbone:
    """One of the four variants; owns the shared token embedding table."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator | None = None):
        self.config = config
        if rng is None:
            rng = np.random.default_rng(config.seed)
        reg = ParamRegistry()
        self._registry = reg
        d = config.d_model
        self.tok_emb = reg.add("tok_emb", _normal(rng, (config.vocab_size, d)))
        self._has_encoder = config.variant != Variant.DECODER_MULTITOKENS
        self._has_decoder = config.variant != Variant.ENCODER_ONLY
        cross = self._has_encoder and self._has_decoder
        if self._has_encoder:
            self.enc_pos = reg.add("enc_pos", _normal(rng, (config.max_seq_len, d)))
            self.enc_blocks = [
                _Block(d, config.num_heads, rng, reg, f"enc.{i}", cross=False)
                for i in range(config.num_layers)
            ]
            self.enc_ln = _LayerNorm(d, reg, "enc.ln_f")
        if self._has_decoder:
            # Row 0 of the decoder table is the <s> slot.
            self.dec_pos = reg.add("dec_pos", _normal(rng, (config.max_seq_len + 1, d)))
            self.dec_blocks = [
                _Block(d, config.num_heads, rng, reg, f"dec.{i}", cross=cross)
                for i in range(config.num_layers)
            ]
            self.dec_ln = _LayerNorm(d, reg, "dec.ln_f")

    def parameters(self) -> list[tuple[str, Tensor]]:
        return self._registry.items()

    def parameter_count(self) -> int:
        return sum(t.data.size for _, t in self.parameters())

    def inert_parameter_names(self) -> set[str]:
        """Parameters that provably cannot affect any output of this variant.

        The single-token variant feeds the decoder exactly one position, so
        its self-attention softmax is the constant 1.0 and the query/key
        projections carry no signal (and can receive no gradient).
        """
        if self.config.variant != Variant.ENCDEC_SINGLETOKEN:
            return set()
        names = set()
        for i in range(self.config.num_layers):
            for p in ("wq", "wk", "bq", "bk"):
                names.add(f"dec.{i}.attn.{p}")
        return names

    def _validate(self, tokens) -> np.ndarray:
        ids = np.asarray(tokens, dtype=np.intp)
        if ids.ndim != 1 or ids.size == 0:
            raise EmptyInputError("encoder input must contain at least one token")
        if ids.size > self.config.max_seq_len:
            raise SequenceLengthError(
                f"sequence of {ids.size} tokens exceeds max_seq_len "
                f"{self.config.max_seq_len}"
            )
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise VocabError(
                f"token id out of range for vocab of size {self.config.vocab_size}"
            )
        return ids

    def encode(self, tokens) -> Tensor:
        """Hidden states for one sequence: [n, d] (or [1, d] for single-token)."""
        states, _ = self.encode_batch([tokens])
        return states

    def encode_batch(self, sequences) -> tuple[Tensor, np.ndarray]:
        """Hidden states for a packed batch.

        Returns (states, starts): sequences are concatenated row-wise and
        ``starts`` holds B+1 offsets delimiting each sequence's rows. For
        the single-token variant there is exactly one row per sequence.
        """
        seqs = [self._validate(s) for s in sequences]
        lengths = np.array([len(s) for s in seqs], dtype=np.intp)
        starts = np.concatenate([[0], np.cumsum(lengths)])
        ids = np.concatenate(seqs)
        seg = np.repeat(np.arange(len(seqs)), lengths)
        pos = np.concatenate([np.arange(n) for n in lengths])
        variant = self.config.variant

        if variant == Variant.ENCODER_ONLY:
            states = self._run_encoder(ids, seg, pos)
            return states, starts

        if variant == Variant.DECODER_MULTITOKENS:
            d_ids, d_seg, d_pos, keep = self._decoder_inputs(seqs, lengths)
            x = self._run_decoder(d_ids, d_seg, d_pos, memory=None, memory_seg=None)
            return ad.gather_rows(x, keep), starts

        memory = self._run_encoder(ids, seg, pos)
        if variant == Variant.ENCDEC_SINGLETOKEN:
            b = len(seqs)
            d_ids = np.full(b, START_ID, dtype=np.intp)
            d_seg = np.arange(b, dtype=np.intp)
            d_pos = np.zeros(b, dtype=np.intp)
            x = self._run_decoder(d_ids, d_seg, d_pos, memory=memory, memory_seg=seg)
            return x, np.arange(b + 1, dtype=np.intp)

        d_ids, d_seg, d_pos, keep = self._decoder_inputs(seqs, lengths)
        x = self._run_decoder(d_ids, d_seg, d_pos, memory=memory, memory_seg=seg)
        return ad.gather_rows(x, keep), starts

    @staticmethod
    def _decoder_inputs(seqs, lengths):
        """Prepend <s> to each sequence; ``keep`` indexes the token-aligned rows."""
        d_ids = np.concatenate([np.concatenate([[START_ID], s]) for s in seqs])
        d_seg = np.repeat(np.arange(len(seqs)), lengths + 1)
        d_pos = np.concatenate([np.arange(n + 1) for n in lengths])
        keep = np.flatnonzero(d_pos > 0)
        return d_ids, d_seg, d_pos, keep

    def _run_encoder(self, ids, seg, pos) -> Tensor:
        x = ad.add(
            ad.embedding_lookup(self.tok_emb, ids),
            ad.embedding_lookup(self.enc_pos, pos),
        )
        mask = _self_mask(seg, pos, causal=False)
        for block in self.enc_blocks:
            x = block(x, mask)
        return self.enc_ln(x)

    def _run_decoder(self, ids, seg, pos, memory, memory_seg) -> Tensor:
        x = ad.add(
            ad.embedding_lookup(self.tok_emb, ids),
            ad.embedding_lookup(self.dec_pos, pos),
        )
        self_mask = _self_mask(seg, pos, causal=True)
        cross = None
        if memory is not None:
            cross = _cross_mask(seg, memory_seg)
        for block in self.dec_blocks:
            x = block(x, self_mask, memory=memory, cross_mask=cross)
        return self.dec_ln(x)
