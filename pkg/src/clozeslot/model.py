"""Sentence encoder plus a span-extraction decoder emitting per-step CRF potentials.

The encoder is a pre-norm Transformer with learned positions, shared by the
template and the input sentence. The decoder projects each stream down with
its own two-layer FFN, runs a stack of blocks (self-attention over the input,
attention over the projected template, FFN), and a final linear layer emits
per input token a 4x4 transition matrix and a 4-vector of unary scores.

The beginning-of-sentence vectors of the two projected streams are returned
as whole-sentence summaries for the auxiliary matching loss.

Parameters live in two namespaces, ``encoder.*`` and ``decoder.*``. Only the
latter is trained during fine-tuning.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, checkpoint
from .tags import NUM_TAGS

NUM_EXTRA_FEATURES = 2  # is_requested, token_is_numeric


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_len: int = 64
    encoder_layers: int = 2
    encoder_dim: int = 128
    encoder_heads: int = 4
    encoder_ffn_dim: int = 256
    proj_hidden_dim: int = 128
    proj_dim: int = 32
    decoder_blocks: int = 2
    decoder_heads: int = 2
    decoder_attention_projection_dim: int = 16
    decoder_ffn_dim: int = 64
    residual_hidden_dim: int = 128
    dropout_rate: float = 0.1
    aux_d: int | None = None  # dimension used for the annealing target sqrt(d); defaults to proj_dim

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("dropout_rate", "aux_d"):
                continue
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"{f.name} must be a positive integer, got {value!r}")
        if self.proj_dim > self.encoder_dim:
            raise ValueError("proj_dim must not exceed encoder_dim")
        if self.encoder_dim % self.encoder_heads:
            raise ValueError("encoder_dim must be divisible by encoder_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.aux_d is not None and self.aux_d <= 0:
            raise ValueError("aux_d must be positive")

    @property
    def similarity_dim(self) -> int:
        return self.aux_d if self.aux_d is not None else self.proj_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


# ---------------------------------------------------------------- building blocks


class Module:
    """Minimal parameter container: tensors and sub-modules found by attribute walk."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, item in enumerate(value):
                    yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _param(rng: np.random.Generator, shape, std: float, dtype) -> Tensor:
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype, zero: bool = False):
        std = 0.0 if zero else 1.0 / np.sqrt(n_in)
        self.weight = _param(rng, (n_in, n_out), std, dtype)
        self.bias = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(ag.matmul(x, self.weight), self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, n_in: int, hidden: int, n_out: int, rng, dtype, zero_out: bool = False):
        self.inner = Linear(n_in, hidden, rng, dtype)
        self.outer = Linear(hidden, n_out, rng, dtype, zero=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ag.gelu_fast(self.inner(x)))


def _mask_bias(mask: np.ndarray, dtype) -> np.ndarray:
    """(B, T) validity mask -> additive (B, 1, 1, T) attention bias."""
    return np.where(mask, 0.0, -1e9).astype(dtype)[:, None, None, :]


class Attention(Module):
    """Multi-head scaled dot-product attention; ``head_dim`` is the per-head width."""

    def __init__(self, query_dim: int, key_dim: int, heads: int, head_dim: int, rng, dtype):
        self.heads, self.head_dim = heads, head_dim
        inner = heads * head_dim
        self.query = Linear(query_dim, inner, rng, dtype)
        self.key = Linear(key_dim, inner, rng, dtype)
        self.value = Linear(key_dim, inner, rng, dtype)
        self.out = Linear(inner, query_dim, rng, dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return ag.transpose(ag.reshape(x, (b, t, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, context: Tensor, context_mask: np.ndarray) -> Tensor:
        q = self._split(self.query(x))
        k = self._split(self.key(context))
        v = self._split(self.value(context))
        scores = ag.mul(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.head_dim))
        weights = ag.softmax(ag.add(scores, _mask_bias(context_mask, x.dtype)), axis=-1)
        mixed = ag.transpose(ag.matmul(weights, v), (0, 2, 1, 3))
        b, t = x.shape[:2]
        return self.out(ag.reshape(mixed, (b, t, self.heads * self.head_dim)))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        d = cfg.encoder_dim
        self.norm_attn = LayerNorm(d, dtype)
        self.attn = Attention(d, d, cfg.encoder_heads, d // cfg.encoder_heads, rng, dtype)
        self.norm_ffn = LayerNorm(d, dtype)
        self.ffn = FeedForward(d, cfg.encoder_ffn_dim, d, rng, dtype)

    def __call__(self, x, mask, rate, training, rng):
        h = self.norm_attn(x)
        x = ag.add(x, ag.dropout(self.attn(h, h, mask), rate, training, rng))
        return ag.add(x, ag.dropout(self.ffn(self.norm_ffn(x)), rate, training, rng))


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.token_embedding = _param(rng, (cfg.vocab_size, cfg.encoder_dim), 0.1, dtype)
        self.position_embedding = _param(rng, (cfg.max_len, cfg.encoder_dim), 0.1, dtype)
        self.layers = [EncoderLayer(cfg, rng, dtype) for _ in range(cfg.encoder_layers)]
        self.final_norm = LayerNorm(cfg.encoder_dim, dtype)

    def __call__(self, ids: np.ndarray, mask: np.ndarray, rate: float, training: bool, rng) -> Tensor:
        x = ag.add(ag.embedding_lookup(self.token_embedding, ids), self.position_embedding[: ids.shape[1]])
        for layer in self.layers:
            x = layer(x, mask, rate, training, rng)
        return self.final_norm(x)


class DecoderBlock(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        p = cfg.proj_dim
        heads, hd = cfg.decoder_heads, cfg.decoder_attention_projection_dim
        self.norm_self = LayerNorm(p, dtype)
        self.self_attn = Attention(p, p, heads, hd, rng, dtype)
        self.norm_cross = LayerNorm(p, dtype)
        self.cross_attn = Attention(p, p, heads, hd, rng, dtype)
        self.norm_ffn = LayerNorm(p, dtype)
        self.ffn = FeedForward(p, cfg.decoder_ffn_dim, p, rng, dtype)

    def __call__(self, x, x_mask, template, t_mask):
        h = self.norm_self(x)
        x = ag.add(x, self.self_attn(h, h, x_mask))
        x = ag.add(x, self.cross_attn(self.norm_cross(x), template, t_mask))
        return ag.add(x, self.ffn(self.norm_ffn(x)))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        d, p = cfg.encoder_dim, cfg.proj_dim
        # Output layer starts at zero so injecting side features leaves a pretrained decoder unchanged.
        self.residual = FeedForward(d + NUM_EXTRA_FEATURES, cfg.residual_hidden_dim, d, rng, dtype, zero_out=True)
        self.template_proj = FeedForward(d, cfg.proj_hidden_dim, p, rng, dtype)
        self.input_proj = FeedForward(d, cfg.proj_hidden_dim, p, rng, dtype)
        self.blocks = [DecoderBlock(cfg, rng, dtype) for _ in range(cfg.decoder_blocks)]
        self.final_norm = LayerNorm(p, dtype)
        self.head = Linear(p, NUM_TAGS * NUM_TAGS + NUM_TAGS, rng, dtype)


# ---------------------------------------------------------------- inputs / outputs


@dataclass
class ExtraFeatures:
    """Side information for fine-tuning: one ``is_requested`` flag per example and
    per-token ``token_is_numeric`` flags, padded to the batch's time axis."""

    requested: np.ndarray  # (B,) bool
    numeric: np.ndarray  # (B, T) bool

    def as_array(self, steps: int, dtype) -> np.ndarray:
        numeric = np.zeros((len(self.requested), steps), dtype=bool)
        width = min(steps, self.numeric.shape[1])
        numeric[:, :width] = self.numeric[:, :width]
        req = np.broadcast_to(np.asarray(self.requested, dtype=bool)[:, None], numeric.shape)
        return np.stack([req, numeric], axis=-1).astype(dtype)


@dataclass
class DecoderFeatures:
    """Per-step CRF potentials for the input sentence and both BOS summaries."""

    transitions: Tensor  # (B, T, 4, 4); transitions[b, t, j, i] scores tag i at t -> tag j at t+1
    unaries: Tensor  # (B, T, 4)
    template_summary: Tensor  # (B, proj_dim)
    input_summary: Tensor  # (B, proj_dim)


def pad_ids(sequences: Sequence[Sequence[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists to one array; returns ``(ids, lengths)``."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    ids = np.full((len(sequences), int(lengths.max(initial=1))), pad_id, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
    return ids, lengths


def length_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return np.arange(steps)[None, :] < np.asarray(lengths)[:, None]


# ---------------------------------------------------------------- the model


class SpanExtractor(Module):
    """Shared encoder + span-extraction decoder."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng([seed, 0])
        self.encoder = Encoder(config, rng, self.dtype)
        self.decoder = Decoder(config, np.random.default_rng([seed, 1]), self.dtype)

    # -- parameters -------------------------------------------------------

    def trainable_parameters(self, phase: str) -> dict[str, Tensor]:
        if phase == "pretrain":
            return dict(self.named_parameters())
        if phase == "finetune":
            return dict(self.decoder.named_parameters("decoder."))
        raise ValueError(f"unknown phase {phase!r}; expected 'pretrain' or 'finetune'")

    def encoder_state(self) -> dict[str, Tensor]:
        return dict(self.encoder.named_parameters("encoder."))

    def decoder_state(self) -> dict[str, Tensor]:
        return dict(self.decoder.named_parameters("decoder."))

    # -- forward ----------------------------------------------------------

    def encode_batch(
        self, ids: np.ndarray, lengths: np.ndarray, training: bool = False, rng: np.random.Generator | None = None
    ) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence of {ids.shape[1]} tokens exceeds max_len={self.config.max_len}")
        mask = length_mask(lengths, ids.shape[1])
        return self.encoder(ids, mask, self.config.dropout_rate, training, rng)

    def encode(self, token_ids: Sequence[int]) -> np.ndarray:
        """Contextual vectors for one tokenized sequence, shape ``(tokens, encoder_dim)``."""
        ids, lengths = pad_ids([list(token_ids)])
        with ag.no_grad():
            return self.encode_batch(ids, lengths).data[0]

    def decode(
        self,
        template_repr: Tensor,
        template_lengths: np.ndarray,
        input_repr: Tensor,
        input_lengths: np.ndarray,
        extra: ExtraFeatures | None = None,
        template_extra: ExtraFeatures | None = None,
        training: bool = False,
        encoder_dropout: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> DecoderFeatures:
        """Potentials for the input sentence given the template.

        ``extra`` (and ``template_extra``, defaulting to ``extra`` when both
        streams have the same length) adds the residual side-feature term to
        the encoder outputs; without it the residual layer is skipped.
        """
        dec = self.decoder
        template_repr, input_repr = ag.as_tensor(template_repr), ag.as_tensor(input_repr)
        if template_repr.shape[1] == 0 or input_repr.shape[1] == 0:
            raise ValueError("decode needs non-empty template and input sequences")
        if extra is not None:
            if template_extra is None and template_repr.shape[1] == input_repr.shape[1]:
                template_extra = extra
            input_repr = self._add_residual(input_repr, extra)
            if template_extra is not None:
                template_repr = self._add_residual(template_repr, template_extra)
        template_repr = ag.dropout(template_repr, encoder_dropout, training, rng)
        input_repr = ag.dropout(input_repr, encoder_dropout, training, rng)

        t_mask = length_mask(template_lengths, template_repr.shape[1])
        x_mask = length_mask(input_lengths, input_repr.shape[1])
        template = dec.template_proj(template_repr)
        x = dec.input_proj(input_repr)
        template_summary = template[:, 0, :]
        input_summary = x[:, 0, :]
        for block in dec.blocks:
            x = block(x, x_mask, template, t_mask)
        out = dec.head(dec.final_norm(x))
        b, t = out.shape[:2]
        square = NUM_TAGS * NUM_TAGS
        transitions = ag.reshape(out[:, :, :square], (b, t, NUM_TAGS, NUM_TAGS))
        unaries = out[:, :, square:]
        return DecoderFeatures(transitions, unaries, template_summary, input_summary)

    def _add_residual(self, repr_: Tensor, extra: ExtraFeatures) -> Tensor:
        feats = extra.as_array(repr_.shape[1], repr_.dtype)
        joined = ag.concat([repr_, Tensor(feats)], axis=-1)
        return ag.add(repr_, self.decoder.residual(joined))

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path, metadata: dict | None = None) -> Path:
        """Write ``path/encoder`` and ``path/decoder`` checkpoints plus the model config."""
        path = Path(path)
        meta = {"model_config": self.config.to_dict(), **(metadata or {})}
        checkpoint.save(path / "encoder", self.encoder_state(), meta)
        checkpoint.save(path / "decoder", self.decoder_state(), meta)
        return path

    def save_decoder(self, path: str | Path, metadata: dict | None = None) -> Path:
        meta = {"model_config": self.config.to_dict(), **(metadata or {})}
        return checkpoint.save(path, self.decoder_state(), meta)

    def load_encoder(self, path: str | Path) -> None:
        arrays, _ = checkpoint.load(path)
        checkpoint.assign(self.encoder_state(), arrays)

    def load_decoder(self, path: str | Path) -> None:
        arrays, _ = checkpoint.load(path)
        checkpoint.assign(self.decoder_state(), arrays)

    @classmethod
    def load(cls, path: str | Path, decoder_path: str | Path | None = None, dtype=np.float32) -> "SpanExtractor":
        path = Path(path)
        _, meta = checkpoint.load(path / "encoder")
        model = cls(ModelConfig.from_dict(meta["model_config"]), dtype=dtype)
        model.load_encoder(path / "encoder")
        model.load_decoder(decoder_path if decoder_path is not None else path / "decoder")
        return model
