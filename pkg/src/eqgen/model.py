"""Dual-direction Transformer over symbol sequences.

One shared encoder feeds two decoder stacks: one reads and emits the target
left to right, the other right to left. The right-to-left pass is literally
a left-to-right pass over the reversed target through its own stack, with
its own begin sentinel and positions indexed in its own reading order. The
two decoders share the target embedding table by default and each has its
own output projection. Blocks are canonical post-norm (residual, dropout,
layer norm), positions are sinusoidal, and the training objective is the
sum of the two decoders' token-level cross entropies.

Sequence conventions:

    L2R   <bos>   y_1 .. y_T <eos>
    R2L   <bos_r> y_T .. y_1 <eos>

Reserved token ids (shared by source and target vocabularies):
pad=0, bos=1, bos_r=2, eos=3, unk=4.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .numerics import (
    Tensor,
    cross_entropy,
    dropout,
    embedding,
    layer_norm,
    matmul,
    relu,
    softmax,
)

PAD_ID, BOS_ID, BOSR_ID, EOS_ID, UNK_ID = 0, 1, 2, 3, 4
NUM_RESERVED = 5

L2R = "l2r"
R2L = "r2l"
DIRECTIONS = (L2R, R2L)

_MASK_VALUE = -1e9  # additive attention mask; finite so the NaN guard stays meaningful


class ConfigError(ValueError):
    """Model configuration or sequence-length contract violated."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_src: int
    vocab_tgt: int
    embed_dim: int = 32
    model_dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_dim: int = 128
    max_positions: int = 128
    dropout: float = 0.1
    share_target_embedding: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError("model_dim must be divisible by heads")
        if self.model_dim % 2 != 0:
            raise ConfigError("model_dim must be even for sinusoidal positions")
        if self.layers < 1:
            raise ConfigError("need at least one layer")
        if self.vocab_src < NUM_RESERVED or self.vocab_tgt < NUM_RESERVED:
            raise ConfigError("vocabularies must cover the reserved ids")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def paper_scale_config(vocab_src: int, vocab_tgt: int) -> ModelConfig:
    """Full-scale configuration: 3 layers, 512 model width, 300-dim source
    embeddings behind a projection, 8 heads."""
    return ModelConfig(
        vocab_src=vocab_src,
        vocab_tgt=vocab_tgt,
        embed_dim=300,
        model_dim=512,
        layers=3,
        heads=8,
        ff_dim=2048,
        max_positions=512,
    )


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _layer_names(prefix: str, cross_attention: bool) -> list[tuple[str, str]]:
    names: list[tuple[str, str]] = []
    for attn in (("attn",) if not cross_attention else ("attn", "xattn")):
        for w in ("wq", "wk", "wv", "wo"):
            names.append((f"{prefix}.{attn}.{w}", "square"))
        for b in ("bq", "bk", "bv", "bo"):
            names.append((f"{prefix}.{attn}.{b}", "bias"))
    names += [
        (f"{prefix}.ff.w1", "ff_in"),
        (f"{prefix}.ff.b1", "ff_bias1"),
        (f"{prefix}.ff.w2", "ff_out"),
        (f"{prefix}.ff.b2", "bias"),
    ]
    n_ln = 3 if cross_attention else 2
    for i in range(1, n_ln + 1):
        names.append((f"{prefix}.ln{i}.g", "ln_gain"))
        names.append((f"{prefix}.ln{i}.b", "ln_bias"))
    return names


def param_specs(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """name -> (shape, init kind) for every trainable tensor."""
    d, e, f = config.model_dim, config.embed_dim, config.ff_dim
    kinds = {
        "square": ((d, d), "xavier"),
        "bias": ((d,), "zeros"),
        "ff_in": ((d, f), "xavier"),
        "ff_bias1": ((f,), "zeros"),
        "ff_out": ((f, d), "xavier"),
        "ln_gain": ((d,), "ones"),
        "ln_bias": ((d,), "zeros"),
    }
    specs: dict[str, tuple[tuple[int, ...], str]] = {
        "src_embed": ((config.vocab_src, e), "embed"),
        "src_proj.w": ((e, d), "xavier"),
        "src_proj.b": ((d,), "zeros"),
    }
    if config.share_target_embedding:
        specs["tgt_embed"] = ((config.vocab_tgt, d), "embed")
    else:
        specs["tgt_embed_l2r"] = ((config.vocab_tgt, d), "embed")
        specs["tgt_embed_r2l"] = ((config.vocab_tgt, d), "embed")
    for i in range(config.layers):
        for name, kind in _layer_names(f"enc.{i}", cross_attention=False):
            specs[name] = kinds[kind]
        for stack in ("dec_l2r", "dec_r2l"):
            for name, kind in _layer_names(f"{stack}.{i}", cross_attention=True):
                specs[name] = kinds[kind]
    for stack in ("out_l2r", "out_r2l"):
        specs[f"{stack}.w"] = ((d, config.vocab_tgt), "xavier")
        specs[f"{stack}.b"] = ((config.vocab_tgt,), "zeros")
    return specs


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self):
        return self.tensors.items()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()},
        )

    @property
    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def init_params(config: ModelConfig, seed_or_rng=0) -> ModelParams:
    """Xavier-uniform matrices, zero biases, unit layer-norm gains and
    uniform +-0.05 embedding tables."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    dt = config.np_dtype
    tensors: dict[str, Tensor] = {}
    for name, (shape, kind) in param_specs(config).items():
        if kind == "zeros":
            data = np.zeros(shape, dtype=dt)
        elif kind == "ones":
            data = np.ones(shape, dtype=dt)
        elif kind == "embed":
            data = rng.uniform(-0.05, 0.05, size=shape).astype(dt)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape).astype(dt)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(config, tensors)


def load_pretrained_embeddings(params: ModelParams, vectors: np.ndarray) -> None:
    """Optional hook: overwrite the source embedding table with external
    vectors (rows beyond the table are ignored, missing rows keep their
    random init)."""
    table = params["src_embed"].data
    n = min(table.shape[0], vectors.shape[0])
    if vectors.shape[1] != table.shape[1]:
        raise ConfigError(
            f"pretrained vectors have width {vectors.shape[1]}, expected {table.shape[1]}"
        )
    table[:n] = vectors[:n]


# ---------------------------------------------------------------------------
# positions
# ---------------------------------------------------------------------------


def sinusoidal_pe(position: int, dim: int) -> np.ndarray:
    """Single position vector: entry 2i = sin(pos / 10000^(2i/dim)),
    entry 2i+1 = cos of the same angle."""
    if dim % 2 != 0:
        raise ConfigError("position encoding dimension must be even")
    if position < 0:
        raise ConfigError("position must be non-negative")
    i = np.arange(dim // 2, dtype=np.float64)
    angles = position / np.power(10000.0, 2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


@functools.lru_cache(maxsize=32)
def _pe_table(n: int, dim: int, dtype: str) -> np.ndarray:
    i = np.arange(dim // 2, dtype=np.float64)
    pos = np.arange(n, dtype=np.float64)[:, None]
    angles = pos / np.power(10000.0, 2.0 * i / dim)[None, :]
    table = np.empty((n, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    table = table.astype(np.dtype(dtype))
    table.setflags(write=False)
    return table


@functools.lru_cache(maxsize=64)
def _causal_mask(t: int) -> np.ndarray:
    mask = np.triu(np.full((t, t), _MASK_VALUE), k=1)[None, None]
    mask.setflags(write=False)
    return mask


def _key_mask(pad: np.ndarray) -> Optional[np.ndarray]:
    if not pad.any():
        return None
    return np.where(pad[:, None, None, :], _MASK_VALUE, 0.0)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return matmul(x, w) + b


def _maybe_dropout(x: Tensor, config: ModelConfig, train: bool, rng) -> Tensor:
    if not train or config.dropout <= 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    return dropout(x, config.dropout, rng)


def _attention(
    params: ModelParams,
    prefix: str,
    x_q: Tensor,
    x_kv: Tensor,
    mask: Optional[np.ndarray],
) -> Tensor:
    p = params.tensors
    heads = params.config.heads
    bsz, t_q, d = x_q.shape
    t_k = x_kv.shape[1]
    hd = d // heads
    q = _linear(x_q, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k = _linear(x_kv, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v = _linear(x_kv, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    q = q.reshape((bsz, t_q, heads, hd)).swapaxes(1, 2)
    k = k.reshape((bsz, t_k, heads, hd)).swapaxes(1, 2)
    v = v.reshape((bsz, t_k, heads, hd)).swapaxes(1, 2)
    scores = matmul(q, k.swapaxes(2, 3)) * (1.0 / math.sqrt(hd))
    if mask is not None:
        scores = scores + Tensor(np.asarray(mask, dtype=scores.dtype))
    ctx = matmul(softmax(scores, axis=-1), v)
    ctx = ctx.swapaxes(1, 2).reshape((bsz, t_q, d))
    return _linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def _sublayer(params, prefix_ln: str, x: Tensor, out: Tensor, train: bool, rng) -> Tensor:
    p = params.tensors
    out = _maybe_dropout(out, params.config, train, rng)
    return layer_norm(x + out, p[f"{prefix_ln}.g"], p[f"{prefix_ln}.b"])


def _ffn(params, prefix: str, x: Tensor) -> Tensor:
    p = params.tensors
    return _linear(relu(_linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"])), p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def _as_batch(ids) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ConfigError(f"token ids must be 1-d or 2-d, got shape {arr.shape}")
    return arr


def encode(params: ModelParams, src_ids, train: bool = False, rng=None) -> Tensor:
    """Run the shared encoder; padded positions are masked out of attention."""
    cfg = params.config
    src = _as_batch(src_ids)
    if src.shape[1] == 0:
        raise ConfigError("source sequence must be non-empty")
    if src.shape[1] > cfg.max_positions:
        raise ConfigError(f"source length {src.shape[1]} exceeds max_positions {cfg.max_positions}")
    s = src.shape[1]
    x = embedding(params["src_embed"], src)
    x = _linear(x, params["src_proj.w"], params["src_proj.b"]) * math.sqrt(cfg.model_dim)
    x = x + Tensor(_pe_table(cfg.max_positions, cfg.model_dim, cfg.dtype)[:s])
    x = _maybe_dropout(x, cfg, train, rng)
    mask = _key_mask(src == PAD_ID)
    for i in range(cfg.layers):
        attn = _attention(params, f"enc.{i}.attn", x, x, mask)
        x = _sublayer(params, f"enc.{i}.ln1", x, attn, train, rng)
        x = _sublayer(params, f"enc.{i}.ln2", x, _ffn(params, f"enc.{i}.ff", x), train, rng)
    return x


def _target_table(params: ModelParams, direction: str) -> Tensor:
    if params.config.share_target_embedding:
        return params["tgt_embed"]
    return params[f"tgt_embed_{direction}"]


def decoder_forward(
    params: ModelParams,
    direction: str,
    tgt_ids,
    memory: Tensor,
    src_pad: Optional[np.ndarray] = None,
    train: bool = False,
    rng=None,
) -> Tensor:
    """Causal decoder pass in the stack's own reading order.

    ``tgt_ids`` must already be in that reading order (the R2L caller passes
    the reversed target behind its own begin sentinel); output position t
    depends only on earlier prefix positions and on the encoder memory.
    """
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown direction {direction!r}")
    cfg = params.config
    tgt = _as_batch(tgt_ids)
    t = tgt.shape[1]
    if t == 0:
        raise ConfigError("target prefix must be non-empty")
    if t > cfg.max_positions:
        raise ConfigError(f"target length {t} exceeds max_positions {cfg.max_positions}")
    if memory.ndim != 3 or memory.shape[1] == 0:
        raise ConfigError("encoder memory must be (batch, len >= 1, model_dim)")
    x = embedding(_target_table(params, direction), tgt) * math.sqrt(cfg.model_dim)
    x = x + Tensor(_pe_table(cfg.max_positions, cfg.model_dim, cfg.dtype)[:t])
    x = _maybe_dropout(x, cfg, train, rng)
    causal = _causal_mask(t)
    mem_mask = _key_mask(src_pad) if src_pad is not None else None
    stack = f"dec_{direction}"
    for i in range(cfg.layers):
        attn = _attention(params, f"{stack}.{i}.attn", x, x, causal)
        x = _sublayer(params, f"{stack}.{i}.ln1", x, attn, train, rng)
        cross = _attention(params, f"{stack}.{i}.xattn", x, memory, mem_mask)
        x = _sublayer(params, f"{stack}.{i}.ln2", x, cross, train, rng)
        x = _sublayer(params, f"{stack}.{i}.ln3", x, _ffn(params, f"{stack}.{i}.ff", x), train, rng)
    return _linear(x, params[f"out_{direction}.w"], params[f"out_{direction}.b"])


# ---------------------------------------------------------------------------
# batches and the joint objective
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded source ids plus the target in both reading orders, sentinels
    included. Padding is PAD_ID and only at the tail."""

    src: np.ndarray  # (B, S)
    tgt_l2r: np.ndarray  # (B, T) <bos>   y ... <eos> <pad>*
    tgt_r2l: np.ndarray  # (B, T) <bos_r> reversed(y) ... <eos> <pad>*

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(src_seqs: list[list[int]], tgt_seqs: list[list[int]]) -> Batch:
    """Assemble a batch from source ids and canonical target content ids
    (no sentinels); the reversed view is built here."""
    if len(src_seqs) != len(tgt_seqs) or not src_seqs:
        raise ValueError("need equally many non-empty source and target lists")
    s_max = max(len(s) for s in src_seqs)
    t_max = max(len(t) for t in tgt_seqs) + 2
    n = len(src_seqs)
    src = np.full((n, s_max), PAD_ID, dtype=np.int64)
    l2r = np.full((n, t_max), PAD_ID, dtype=np.int64)
    r2l = np.full((n, t_max), PAD_ID, dtype=np.int64)
    for i, (s, t) in enumerate(zip(src_seqs, tgt_seqs)):
        src[i, : len(s)] = s
        l2r[i, : len(t) + 2] = [BOS_ID, *t, EOS_ID]
        r2l[i, : len(t) + 2] = [BOSR_ID, *reversed(t), EOS_ID]
    return Batch(src, l2r, r2l)


@dataclass
class LossParts:
    total: Tensor
    l2r: Tensor
    r2l: Tensor
    tokens_l2r: int
    tokens_r2l: int


def _direction_loss(params, direction, tgt, memory, src_pad, train, rng):
    dec_in = tgt[:, :-1]
    targets = tgt[:, 1:]
    logits = decoder_forward(params, direction, dec_in, memory, src_pad, train, rng)
    return cross_entropy(logits, targets, ignore_index=PAD_ID), int((targets != PAD_ID).sum())


def joint_loss(params: ModelParams, batch: Batch, train: bool = False, rng=None) -> LossParts:
    """Summed token negative log-likelihood of both decoders; the total is
    exactly the sum of the two per-direction terms."""
    memory = encode(params, batch.src, train, rng)
    src_pad = batch.src == PAD_ID
    ce_l2r, n_l2r = _direction_loss(params, L2R, batch.tgt_l2r, memory, src_pad, train, rng)
    ce_r2l, n_r2l = _direction_loss(params, R2L, batch.tgt_r2l, memory, src_pad, train, rng)
    return LossParts(ce_l2r + ce_r2l, ce_l2r, ce_r2l, n_l2r, n_r2l)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, src_tokens: list[str], tgt_tokens: list[str]) -> None:
    """Self-describing container: config + vocab token lists + named tensors."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "src_vocab": list(src_tokens),
        "tgt_vocab": list(tgt_tokens),
    }
    arrays = {f"param:{name}": t.data for name, t in params.named()}
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[ModelParams, list[str], list[str]]:
    """Load and validate every tensor shape against the stored config."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        config = ModelConfig(**meta["config"])
        tensors: dict[str, Tensor] = {}
        for name, (shape, _) in param_specs(config).items():
            key = f"param:{name}"
            if key not in z:
                raise ConfigError(f"checkpoint is missing tensor {name}")
            arr = z[key]
            if arr.shape != shape:
                raise ConfigError(f"tensor {name} has shape {arr.shape}, expected {shape}")
            tensors[name] = Tensor(arr.astype(config.np_dtype), requires_grad=True)
    return ModelParams(config, tensors), meta["src_vocab"], meta["tgt_vocab"]
