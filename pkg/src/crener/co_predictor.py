"""Co-predictor: biaffine scores over character representations plus MLP
scores over the final tag features, summed per cell.

Prediction runs in one of two regimes:

* threshold (default): a cell's predicted tag set is every tag scoring
  above a fixed threshold s0; the empty set is the implicit NONE. The
  matching loss drives every gold-tag score above s0 and every other
  score below it.
* softmax: an explicit NONE class joins the tag set and each cell
  predicts its argmax singleton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import TagGrid, TagVocabulary
from .errors import CrenerError


@dataclass
class PredictorConfig:
    d_biaffine: int = 32
    d_hidden: int = 64
    mode: str = "threshold"
    threshold: float = 0.0

    def validate(self) -> None:
        if self.d_biaffine < 1 or self.d_hidden < 1:
            raise CrenerError("predictor widths must be >= 1")
        if self.mode not in ("threshold", "softmax"):
            raise CrenerError(f"predictor.mode must be threshold or softmax, got {self.mode!r}")


@dataclass
class PredictorParams:
    subj_w: Tensor
    subj_b: Tensor
    obj_w: Tensor
    obj_b: Tensor
    biaffine_u: Tensor  # (d_b, |R|, d_b)
    biaffine_w: Tensor  # (2*d_b, |R|)
    biaffine_b: Tensor  # (|R|,)
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor


def biaffine_scores(h: Tensor, params: PredictorParams) -> Tensor:
    """y'[i, j] = s_i^T U o_j + W [s_i ; o_j] + b over all cells."""
    n = h.shape[0]
    d_b, n_tags, _ = params.biaffine_u.shape
    s = ad.gelu(h @ params.subj_w + params.subj_b)
    o = ad.gelu(h @ params.obj_w + params.obj_b)

    u2 = params.biaffine_u.reshape(d_b, n_tags * d_b)
    left = (s @ u2).reshape(n, 1, n_tags, d_b)
    bilinear = (left * o.reshape(1, n, 1, d_b)).sum(axis=-1)

    w_s = params.biaffine_w[:d_b]
    w_o = params.biaffine_w[d_b:]
    linear = (s @ w_s).reshape(n, 1, n_tags) + (o @ w_o).reshape(1, n, n_tags)
    return bilinear + linear + params.biaffine_b


def mlp_scores(tf: Tensor, params: PredictorParams) -> Tensor:
    """y''[i, j] = affine(GELU(affine(TF[i, j]))), width |R|."""
    return ad.gelu(tf @ params.mlp_w1 + params.mlp_b1) @ params.mlp_w2 + params.mlp_b2


def fuse_scores(y_biaffine: Tensor | None, y_mlp: Tensor | None) -> Tensor:
    """Sum of whichever predictor heads are enabled."""
    if y_biaffine is None and y_mlp is None:
        raise CrenerError("both predictor heads disabled")
    if y_biaffine is None:
        return y_mlp
    if y_mlp is None:
        return y_biaffine
    return y_biaffine + y_mlp


def predict_cells(
    fused: Tensor,
    vocab: TagVocabulary,
    mask2d: np.ndarray,
    mode: str = "threshold",
    s0: float = 0.0,
) -> TagGrid:
    """Per-cell predicted tag sets from fused scores.

    Threshold mode keeps every tag with score > s0; softmax mode keeps
    the argmax unless it is the explicit NONE class.
    """
    n = fused.shape[0]
    scores = fused.data
    grid = TagGrid(n)
    if mode == "threshold":
        hits = scores > s0
        for i, j in zip(*np.nonzero(mask2d)):
            for t in np.nonzero(hits[i, j])[0]:
                grid.add(int(i), int(j), int(t))
    elif mode == "softmax":
        if vocab.none_id is None:
            raise CrenerError("softmax mode requires a vocabulary with an explicit NONE")
        best = scores.argmax(axis=-1)
        for i, j in zip(*np.nonzero(mask2d)):
            t = int(best[i, j])
            if t != vocab.none_id:
                grid.add(int(i), int(j), t)
    else:
        raise CrenerError(f"unknown prediction mode {mode!r}")
    return grid


def cell_probabilities(fused: Tensor) -> np.ndarray:
    """Softmax-mode per-cell class probabilities (plain array)."""
    x = fused.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def gold_tag_mask(gold: TagGrid, vocab: TagVocabulary, mask2d: np.ndarray) -> np.ndarray:
    """Boolean (n, n, |R|) positive-tag indicator from a gold grid.

    With an explicit NONE class, empty unmasked cells mark NONE positive
    so the loss pushes it above the threshold there.
    """
    n = gold.n
    pos = np.zeros((n, n, len(vocab)), dtype=bool)
    for (i, j), tags in gold.cells.items():
        for t in tags:
            pos[i, j, t] = True
    if vocab.none_id is not None:
        empty = ~pos.any(axis=-1)
        pos[:, :, vocab.none_id] = empty
    pos &= mask2d[:, :, None]
    return pos


def multi_tag_loss(
    fused: Tensor,
    gold: TagGrid,
    vocab: TagVocabulary,
    mask2d: np.ndarray,
    s0: float = 0.0,
    reduction: str = "mean",
) -> Tensor:
    """Per cell: log(e^{-s0} + sum_pos e^{-s}) + log(e^{s0} + sum_neg e^{s}).

    Every gold tag is pushed above s0 and every other tag below it.
    Implemented as two masked log-sum-exps with the threshold prepended
    as a constant column. Reduction is the mean (default) or sum over
    unmasked cells.
    """
    n, _, n_tags = fused.shape
    pos = gold_tag_mask(gold, vocab, mask2d)
    neg = ~pos & mask2d[:, :, None]

    ones = np.ones((n, n, 1), dtype=bool)
    thr = Tensor(np.full((n, n, 1), s0, dtype=fused.dtype))

    pos_term = ad.logsumexp(
        ad.concat([-thr, -fused], axis=-1), mask=np.concatenate([ones, pos], axis=-1)
    )
    neg_term = ad.logsumexp(
        ad.concat([thr, fused], axis=-1), mask=np.concatenate([ones, neg], axis=-1)
    )
    per_cell = (pos_term + neg_term) * mask2d.astype(fused.dtype)
    total = per_cell.sum()
    if reduction == "sum":
        return total
    if reduction == "mean":
        count = max(int(mask2d.sum()), 1)
        return total * (1.0 / count)
    raise CrenerError(f"unknown reduction {reduction!r}")
