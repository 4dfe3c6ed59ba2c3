"""Character encoder: four concatenated embeddings plus an adapted
transformer whose self-attention is relative-position aware, direction
aware (signed distances), and deliberately unscaled.

Per layer the pre-softmax score is

    A_rel[i,j] = Q_i . K_j + Q_i . (R_ij W_kR) + u . K_j + v . R_ij

with R the fixed sinusoidal embedding of the signed offset i - j. The
softmax omits the usual 1/sqrt(d_k): with only a few entity characters
per sentence, sharper attention rows help. Padding columns are masked
to weight exactly zero. Blocks are post-LN residual with a square
feed-forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CrenerError


@dataclass
class EncoderConfig:
    d_context: int = 32
    d_pos: int = 16
    d_region: int = 8
    d_attn: int = 8
    layers: int = 1
    heads: int = 4
    dropout: float = 0.1
    max_len: int = 256

    @property
    def d_h(self) -> int:
        return self.d_context + self.d_pos + self.d_region + self.d_attn

    @property
    def d_model(self) -> int:
        return self.d_h

    def validate(self) -> None:
        for name in ("d_context", "d_pos", "d_region", "d_attn", "heads", "max_len"):
            if getattr(self, name) < 1:
                raise CrenerError(f"encoder.{name} must be >= 1")
        if self.layers < 0:
            raise CrenerError("encoder.layers must be >= 0")
        if self.d_model % self.heads != 0:
            raise CrenerError(
                f"encoder width {self.d_model} not divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise CrenerError("encoder.dropout must be in [0, 1)")


@dataclass
class AttentionLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wkr: Tensor
    u: Tensor
    v: Tensor
    wo: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class EncoderParams:
    config: EncoderConfig
    context_table: Tensor
    position_table: Tensor
    region_table: Tensor
    attn_wq: Tensor
    attn_wk: Tensor
    attn_wv: Tensor
    layers: list[AttentionLayerParams] = field(default_factory=list)


@dataclass
class CharRepr:
    """Per-character representations with a validity mask; masked rows are zero."""

    values: Tensor
    mask: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class EncoderOutput:
    h: CharRepr
    attn: np.ndarray  # (n, n) final-layer attention, averaged over heads


def load_sidecar_vectors(path, d_context: int) -> dict[str, np.ndarray]:
    """Load precomputed contextual vectors keyed by sentence id.

    The file is jsonl: {"id": str, "vectors": [[...], ...]} with one row
    per character, each of width d_context; widths are validated here.
    """
    import json

    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                sid = str(obj["id"])
                vectors = np.asarray(obj["vectors"], dtype=np.float32)
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CrenerError(f"{path}:{lineno}: bad sidecar record: {exc}") from None
            if vectors.ndim != 2 or vectors.shape[1] != d_context:
                raise CrenerError(
                    f"{path}:{lineno}: vectors for {sid!r} have shape "
                    f"{vectors.shape}, expected (N, {d_context})"
                )
            out[sid] = vectors
    return out


def relative_position_embedding(n: int, d_model: int) -> np.ndarray:
    """Sinusoidal embedding of the signed offset i - j; no parameters.

    R[i, j, 2k]   = sin((i - j) / 10000^(2k / d_model))
    R[i, j, 2k+1] = cos((i - j) / 10000^(2k / d_model))
    """
    if n < 1 or d_model < 2 or d_model % 2 != 0:
        raise CrenerError("relative embedding needs n >= 1 and even d_model >= 2")
    dist = np.arange(n)[:, None] - np.arange(n)[None, :]
    ks = np.arange(d_model // 2)
    inv_freq = 10000.0 ** (-2.0 * ks / d_model)
    ang = dist[:, :, None].astype(np.float64) * inv_freq[None, None, :]
    out = np.empty((n, n, d_model), dtype=np.float64)
    out[:, :, 0::2] = np.sin(ang)
    out[:, :, 1::2] = np.cos(ang)
    return out


def _zero_masked_rows(values: Tensor, mask: np.ndarray) -> Tensor:
    return values * mask.astype(values.dtype)[:, None]


def _embed_with_attention(
    char_ids: np.ndarray,
    mask: np.ndarray,
    params: EncoderParams,
    context_vectors: np.ndarray | None = None,
) -> tuple[CharRepr, np.ndarray]:
    """Concatenated embedding plus the raw-attention weights used for H^A."""
    cfg = params.config
    n = len(char_ids)
    if n > cfg.max_len:
        raise CrenerError(f"sentence length {n} exceeds max_len {cfg.max_len}")

    if context_vectors is not None:
        ctx_arr = np.asarray(context_vectors, dtype=params.context_table.dtype)
        if ctx_arr.shape != (n, cfg.d_context):
            raise CrenerError(
                f"context vectors shape {ctx_arr.shape} != ({n}, {cfg.d_context})"
            )
        h_ctx = Tensor(ctx_arr)
    else:
        h_ctx = ad.embedding(params.context_table, char_ids)
    h_pos = ad.embedding(params.position_table, np.arange(n))
    h_reg = ad.embedding(params.region_table, np.arange(n) % 2)

    # H^A: one scaled self-attention pass over the raw context embeddings.
    q = h_ctx @ params.attn_wq
    k = h_ctx @ params.attn_wk
    v = h_ctx @ params.attn_wv
    scores = (q @ k.transpose(1, 0)) * (1.0 / np.sqrt(cfg.d_attn))
    attn = ad.softmax(scores, mask=mask[None, :])
    h_att = attn @ v

    h = ad.concat([h_ctx, h_pos, h_reg, h_att], axis=-1)
    return CharRepr(_zero_masked_rows(h, mask), mask), attn.data.copy()


def embed_characters(
    char_ids: np.ndarray,
    mask: np.ndarray,
    params: EncoderParams,
    context_vectors: np.ndarray | None = None,
) -> CharRepr:
    """Concatenation of contextual, positional, region, and attention
    embeddings, one row per character; padded rows zeroed."""
    repr_, _ = _embed_with_attention(char_ids, mask, params, context_vectors)
    return repr_


def adapted_attention(
    h: CharRepr,
    layer: AttentionLayerParams,
    config: EncoderConfig,
    rel: np.ndarray | None = None,
    use_scaling: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[CharRepr, np.ndarray]:
    """One residual block of relative-position self-attention plus FFN.

    Returns the new representation and the (heads, n, n) attention
    weights. `use_scaling` restores the conventional 1/sqrt(d_k) factor
    (off by default). Dropout runs only when a generator is supplied.
    """
    n = h.n
    d_model = config.d_model
    heads = config.heads
    d_head = d_model // heads
    mask = h.mask
    if rel is None:
        rel = relative_position_embedding(n, d_model)
    rel = rel.astype(h.values.dtype)

    def split_heads(x: Tensor) -> Tensor:
        return x.reshape(n, heads, d_head).transpose(1, 0, 2)

    q = split_heads(h.values @ layer.wq)  # (heads, n, d_head)
    k = split_heads(h.values @ layer.wk)
    v = split_heads(h.values @ layer.wv)

    rel_t = Tensor(rel)
    rel_proj = (rel_t @ layer.wkr).reshape(n, n, heads, d_head).transpose(2, 0, 1, 3)
    rel_heads = rel.reshape(n, n, heads, d_head).transpose(2, 0, 1, 3)

    u_h = layer.u.reshape(heads, 1, d_head)
    v_h = layer.v.reshape(heads, 1, 1, d_head)

    content = q @ k.transpose(0, 2, 1)  # Q_i . K_j
    position = (q.reshape(heads, n, 1, d_head) * rel_proj).sum(axis=-1)  # Q_i . R_ij W_kR
    content_bias = (u_h * k).sum(axis=-1).reshape(heads, 1, n)  # u . K_j
    position_bias = (v_h * Tensor(rel_heads)).sum(axis=-1)  # v . R_ij

    scores = content + position + content_bias + position_bias
    if use_scaling:
        scores = scores * (1.0 / np.sqrt(d_head))
    attn = ad.softmax(scores, mask=mask[None, None, :])

    out = (attn @ v).transpose(1, 0, 2).reshape(n, d_model) @ layer.wo
    if dropout_rng is not None and config.dropout > 0.0:
        out = ad.dropout(out, config.dropout, dropout_rng)
    h1 = ad.layer_norm(h.values + out, layer.ln1_g, layer.ln1_b)

    f = ad.gelu(h1 @ layer.ffn_w1 + layer.ffn_b1) @ layer.ffn_w2 + layer.ffn_b2
    if dropout_rng is not None and config.dropout > 0.0:
        f = ad.dropout(f, config.dropout, dropout_rng)
    h2 = ad.layer_norm(h1 + f, layer.ln2_g, layer.ln2_b)

    return CharRepr(_zero_masked_rows(h2, mask), mask), attn.data.copy()


def encode(
    char_ids: np.ndarray,
    mask: np.ndarray,
    params: EncoderParams,
    context_vectors: np.ndarray | None = None,
    skip_adapted: bool = False,
    use_scaling: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """Full encoder pass: embeddings then the adapted-transformer stack.

    The returned attention matrix (head mean of the final layer, or the
    raw H^A attention when no layer runs) feeds the pairwise attention
    buckets downstream.
    """
    h, raw_attn = _embed_with_attention(char_ids, mask, params, context_vectors)
    attn_2d = raw_attn
    if not skip_adapted and params.layers:
        rel = relative_position_embedding(len(char_ids), params.config.d_model)
        for layer in params.layers:
            h, attn_heads = adapted_attention(
                h,
                layer,
                params.config,
                rel=rel,
                use_scaling=use_scaling,
                dropout_rng=dropout_rng,
            )
        attn_2d = attn_heads.mean(axis=0)
    return EncoderOutput(h=h, attn=attn_2d)
