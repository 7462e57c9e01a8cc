"""Backbone + head composition and checkpoint serialization.

Checkpoint layout (little-endian):
  magic b"LSRC" | u32 format version | u32 header length | header JSON
  | raw float64 bytes of every parameter array, in header order.

The JSON header carries the backbone config, head config, the vocabulary
digest the model was trained against, and per-array shape records, so a
round trip is bit-exact and mismatches fail loudly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbones import Backbone, BackboneConfig, Variant
from .errors import ContractError, FormatError
from .heads import (
    HeadKind,
    SparseHead,
    SparseVector,
    mlm_batch_activations,
    mlm_head,
    mlp_batch_activations,
    mlp_head,
)

CHECKPOINT_MAGIC = b"LSRC"
CHECKPOINT_VERSION = 1


class SparseEncoder:
    """A trainable sparse text encoder: backbone plus representation head."""

    def __init__(self, backbone: Backbone, head: SparseHead):
        if head.vocab_size != backbone.config.vocab_size:
            raise ContractError("head and backbone vocabulary sizes differ")
        if (
            head.kind == HeadKind.MLP
            and backbone.config.variant == Variant.ENCDEC_SINGLETOKEN
        ):
            raise ContractError("MLP head requires token-aligned states")
        self.backbone = backbone
        self.head = head

    @classmethod
    def build(
        cls,
        config: BackboneConfig,
        head_kind: HeadKind,
        pooling: str = "max",
    ) -> "SparseEncoder":
        """Construct with all parameters drawn from one seeded PCG64 stream."""
        rng = np.random.default_rng(config.seed)
        backbone = Backbone(config, rng=rng)
        head = SparseHead(
            head_kind, config.d_model, config.vocab_size, rng=rng, pooling=pooling
        )
        return cls(backbone, head)

    def parameters(self) -> list[tuple[str, Tensor]]:
        params = [(f"backbone.{n}", t) for n, t in self.backbone.parameters()]
        params += [(f"head.{n}", t) for n, t in self.head.parameters()]
        return params

    def encode(self, tokens) -> SparseVector:
        """Encode one token sequence into its sparse representation."""
        states = self.backbone.encode(tokens)
        if self.head.kind == HeadKind.MLP:
            return mlp_head(states, tokens, self.head)
        return mlm_head(states, self.backbone.tok_emb, self.head)

    def batch_activations(self, sequences) -> Tensor:
        """Dense [B, |V|] activations for a batch; differentiable under a tape."""
        states, starts = self.backbone.encode_batch(sequences)
        if self.head.kind == HeadKind.MLP:
            token_ids = np.concatenate([np.asarray(s, dtype=np.intp) for s in sequences])
            return mlp_batch_activations(states, starts, token_ids, self.head)
        return mlm_batch_activations(states, starts, self.backbone.tok_emb, self.head)

    def save(self, path, vocab_digest: str = "") -> None:
        arrays = [(name, t.data) for name, t in self.parameters()]
        header = {
            "format_version": CHECKPOINT_VERSION,
            "backbone": {
                "variant": self.backbone.config.variant.value,
                "num_layers": self.backbone.config.num_layers,
                "d_model": self.backbone.config.d_model,
                "num_heads": self.backbone.config.num_heads,
                "vocab_size": self.backbone.config.vocab_size,
                "max_seq_len": self.backbone.config.max_seq_len,
                "seed": self.backbone.config.seed,
            },
            "head": {"kind": self.head.kind.value, "pooling": self.head.pooling},
            "vocab_digest": vocab_digest,
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            for _, a in arrays:
                fh.write(a.astype("<f8", copy=False).tobytes())

    @classmethod
    def load(cls, path) -> tuple["SparseEncoder", str]:
        """Rebuild a model from a checkpoint; returns (model, vocab_digest)."""
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic at offset 0: {raw[:4]!r}")
        version, header_len = struct.unpack_from("<II", raw, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        try:
            header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable checkpoint header: {exc}") from None
        config = BackboneConfig(
            variant=Variant(header["backbone"]["variant"]),
            num_layers=header["backbone"]["num_layers"],
            d_model=header["backbone"]["d_model"],
            num_heads=header["backbone"]["num_heads"],
            vocab_size=header["backbone"]["vocab_size"],
            max_seq_len=header["backbone"]["max_seq_len"],
            seed=header["backbone"]["seed"],
        )
        model = cls.build(
            config, HeadKind(header["head"]["kind"]), header["head"]["pooling"]
        )
        offset = 12 + header_len
        params = dict(model.parameters())
        if [a["name"] for a in header["arrays"]] != [n for n, _ in model.parameters()]:
            raise FormatError("checkpoint parameter list does not match model")
        for rec in header["arrays"]:
            shape = tuple(rec["shape"])
            tensor = params[rec["name"]]
            if tensor.data.shape != shape:
                raise FormatError(
                    f"array {rec['name']}: stored shape {shape}, "
                    f"expected {tensor.data.shape}"
                )
            nbytes = int(np.prod(shape)) * 8
            if offset + nbytes > len(raw):
                raise FormatError(f"checkpoint truncated at offset {offset}")
            tensor.data = np.frombuffer(
                raw, dtype="<f8", count=int(np.prod(shape)), offset=offset
            ).reshape(shape).copy()
            offset += nbytes
        if offset != len(raw):
            raise FormatError(f"trailing bytes after offset {offset}")
        return model, header["vocab_digest"]
