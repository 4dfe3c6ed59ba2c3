"""Iterative relation enhancement.

Each round maps the convolved grid into four tag-group feature planes
(NNC, PNC, HTC, THC), max-pools them back into per-character subject
and object vectors, refines those with shared multi-head self-attention
followed by cross-attention against the round-0 projections, and fuses
through a GELU linear layer with a residual layer norm. The refined
subject/object vectors condition the next round's grid. Parameters are
shared across rounds; the final round's tag features feed the MLP
predictor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import grid as grid_mod
from .autodiff import Tensor
from .errors import CrenerError

_MASK_FILL = -1e9


@dataclass
class EnhanceConfig:
    d_r: int = 32
    rounds: int = 2
    heads: int = 4

    def validate(self) -> None:
        if self.d_r < 1:
            raise CrenerError("enhance.d_r must be >= 1")
        if self.rounds < 1:
            raise CrenerError("enhance.rounds must be >= 1")
        if self.heads < 1:
            raise CrenerError("enhance.heads must be >= 1")


@dataclass
class EnhanceParams:
    tag_nnc_w: Tensor
    tag_nnc_b: Tensor
    tag_pnc_w: Tensor
    tag_pnc_b: Tensor
    tag_htc_w: Tensor
    tag_htc_b: Tensor
    tag_thc_w: Tensor
    tag_thc_b: Tensor
    pool_s_w: Tensor
    pool_s_b: Tensor
    pool_o_w: Tensor
    pool_o_b: Tensor
    self_wq: Tensor
    self_wk: Tensor
    self_wv: Tensor
    self_wo: Tensor
    cross_wq: Tensor
    cross_wk: Tensor
    cross_wv: Tensor
    cross_wo: Tensor
    out_s_w: Tensor
    out_s_b: Tensor
    out_o_w: Tensor
    out_o_b: Tensor
    ln_s_g: Tensor
    ln_s_b: Tensor
    ln_o_g: Tensor
    ln_o_b: Tensor


def tag_features(q: Tensor, params: EnhanceParams) -> Tensor:
    """Concatenated per-tag-group affine maps of the grid, (n, n, 4*d_r)."""
    return ad.concat(
        [
            q @ params.tag_nnc_w + params.tag_nnc_b,
            q @ params.tag_pnc_w + params.tag_pnc_b,
            q @ params.tag_htc_w + params.tag_htc_b,
            q @ params.tag_thc_w + params.tag_thc_b,
        ],
        axis=-1,
    )


def pool_recover(
    tf: Tensor, mask: np.ndarray, params: EnhanceParams
) -> tuple[Tensor, Tensor]:
    """Max over columns -> subject vectors, max over rows -> object vectors.

    Masked cells are filled with a large negative constant so they never
    win the max; each pooled map passes through its own affine + GELU to
    character width, and padded positions are re-zeroed.
    """
    mask2d = np.logical_and(mask[:, None], mask[None, :])
    m3 = mask2d.astype(tf.dtype)[:, :, None]
    filled = tf * m3 + (1.0 - m3) * _MASK_FILL
    pooled_s = filled.max(axis=1)  # per row i, over columns j
    pooled_o = filled.max(axis=0)  # per column j, over rows i
    h_s = ad.gelu(pooled_s @ params.pool_s_w + params.pool_s_b)
    h_o = ad.gelu(pooled_o @ params.pool_o_w + params.pool_o_b)
    mcol = mask.astype(tf.dtype)[:, None]
    return h_s * mcol, h_o * mcol


def _multi_head_attention(
    q_in: Tensor,
    kv_in: Tensor,
    mask: np.ndarray,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
) -> Tensor:
    """Standard scaled dot-product attention; key columns follow `mask`."""
    n, d = q_in.shape
    d_head = d // heads

    def split(x: Tensor) -> Tensor:
        return x.reshape(n, heads, d_head).transpose(1, 0, 2)

    q = split(q_in @ wq)
    k = split(kv_in @ wk)
    v = split(kv_in @ wv)
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(d_head))
    attn = ad.softmax(scores, mask=mask[None, None, :])
    out = (attn @ v).transpose(1, 0, 2).reshape(n, d)
    return out @ wo


def enhance_round(
    h_s_r: Tensor,
    h_o_r: Tensor,
    h_s0: Tensor,
    h_o0: Tensor,
    mask: np.ndarray,
    params: EnhanceParams,
    config: EnhanceConfig,
) -> tuple[Tensor, Tensor]:
    """Self-attention over the recovered vectors, cross-attention against
    the round-0 projections, GELU linear, then LayerNorm(recovered + out)."""
    s_tt = _multi_head_attention(
        h_s_r, h_s_r, mask, params.self_wq, params.self_wk, params.self_wv,
        params.self_wo, config.heads,
    )
    o_tt = _multi_head_attention(
        h_o_r, h_o_r, mask, params.self_wq, params.self_wk, params.self_wv,
        params.self_wo, config.heads,
    )
    s_ct = _multi_head_attention(
        s_tt, h_s0, mask, params.cross_wq, params.cross_wk, params.cross_wv,
        params.cross_wo, config.heads,
    )
    o_ct = _multi_head_attention(
        o_tt, h_o0, mask, params.cross_wq, params.cross_wk, params.cross_wv,
        params.cross_wo, config.heads,
    )
    s_out = ad.gelu(s_ct @ params.out_s_w + params.out_s_b)
    o_out = ad.gelu(o_ct @ params.out_o_w + params.out_o_b)
    h_s_next = ad.layer_norm(h_s_r + s_out, params.ln_s_g, params.ln_s_b)
    h_o_next = ad.layer_norm(h_o_r + o_out, params.ln_o_g, params.ln_o_b)
    mcol = mask.astype(h_s_next.dtype)[:, None]
    return h_s_next * mcol, h_o_next * mcol


def run_enhancement(
    h: Tensor,
    mask: np.ndarray,
    attn: np.ndarray,
    grid_params: grid_mod.GridParams,
    enhance_params: EnhanceParams,
    grid_config: grid_mod.GridConfig,
    enhance_config: EnhanceConfig,
    rounds: int | None = None,
    use_distance: bool = True,
    use_region: bool = True,
    use_attn: bool = True,
    use_dilated_conv: bool = True,
    enhancement_enabled: bool = True,
) -> tuple[Tensor, Tensor, Tensor]:
    """Run the grid + enhancement loop; returns (TF_final, H_s, H_o).

    Round 0 projects the encoder output into subject/object views. Every
    round rebuilds the grid from the current views (CLN, pair features,
    convolutions, tag features); unless enhancement is disabled, it then
    pools, attends, and fuses, feeding the refined views forward. With
    enhancement disabled a single grid pass produces TF directly.
    """
    if rounds is None:
        rounds = enhance_config.rounds
    if rounds < 1:
        raise CrenerError("enhancement rounds must be >= 1")
    mask2d = np.logical_and(mask[:, None], mask[None, :])

    h_s0, h_o0 = grid_mod.project_subject_object(h, grid_params)
    h_s, h_o = h_s0, h_o0
    if not enhancement_enabled:
        rounds = 1

    tf = None
    for _ in range(rounds):
        v = grid_mod.conditional_layer_norm(h_s, h_o, grid_params)
        v = v * mask2d.astype(v.dtype)[:, :, None]
        c = grid_mod.pair_features(
            v, attn, mask2d, grid_params, grid_config,
            use_distance=use_distance, use_region=use_region, use_attn=use_attn,
        )
        q = (
            grid_mod.dilated_convolutions(c, mask2d, grid_params, grid_config)
            if use_dilated_conv
            else c
        )
        tf = tag_features(q, enhance_params)
        if enhancement_enabled:
            h_s_r, h_o_r = pool_recover(tf, mask, enhance_params)
            h_s, h_o = enhance_round(
                h_s_r, h_o_r, h_s0, h_o0, mask, enhance_params, enhance_config
            )
    return tf, h_s, h_o
