"""Full model assembly: parameter construction, forward pass, loss, and
per-sentence prediction.

Sentences run through the model one at a time with an explicit validity
mask, so padded and unpadded runs agree on the unmasked positions; batch
losses are formed by summing per-cell losses across sentences and
dividing by the total cell count, which equals the mean over unmasked
cells of a padded batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import co_predictor as pred_mod
from . import decode as decode_mod
from . import encoder as enc_mod
from . import grid as grid_mod
from . import relation_enhance as enh_mod
from .autodiff import ParamStore, Tensor
from .config import ModelConfig
from .corpus import CharVocabulary, EntityMention, Sentence, TagGrid, TagVocabulary, encode_grid
from .errors import ConfigError, CorpusError


@dataclass
class ForwardResult:
    fused: Tensor
    h: enc_mod.CharRepr
    tf: Tensor
    attn: np.ndarray
    mask2d: np.ndarray


class CrenerModel:
    """Owns the parameter store and glues the component modules together."""

    def __init__(
        self,
        config: ModelConfig,
        char_vocab: CharVocabulary,
        tag_vocab: TagVocabulary,
        context_provider: dict[str, np.ndarray] | None = None,
    ):
        config.validate()
        if (config.predictor.mode == "softmax") == tag_vocab.none_is_implicit:
            raise ConfigError(
                "softmax mode requires an explicit-NONE tag vocabulary and "
                "threshold mode an implicit one"
            )
        self.config = config
        self.char_vocab = char_vocab
        self.tag_vocab = tag_vocab
        self.context_provider = context_provider
        dtype = np.float64 if config.optimizer.double_precision else np.float32
        self.store = ParamStore(dtype)
        self._rng_init = np.random.default_rng(config.optimizer.seed)
        self._build_params()

    # ------------------------------------------------------------------
    # parameter construction

    def _linear(self, name: str, fan_in: int, shape) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.store.add(name, self._rng_init.uniform(-bound, bound, size=shape))

    def _zeros(self, name: str, shape) -> Tensor:
        return self.store.add(name, np.zeros(shape))

    def _ones(self, name: str, shape) -> Tensor:
        return self.store.add(name, np.ones(shape))

    def _table(self, name: str, shape) -> Tensor:
        return self.store.add(name, self._rng_init.normal(0.0, 0.02, size=shape))

    def _build_params(self) -> None:
        cfg = self.config
        ec, gc, nc, pc = cfg.encoder, cfg.grid, cfg.enhance, cfg.predictor
        d_h = ec.d_h
        n_tags = len(self.tag_vocab)

        layers = []
        for i in range(ec.layers):
            p = f"enc{i}."
            layers.append(enc_mod.AttentionLayerParams(
                wq=self._linear(p + "wq", d_h, (d_h, d_h)),
                wk=self._linear(p + "wk", d_h, (d_h, d_h)),
                wv=self._linear(p + "wv", d_h, (d_h, d_h)),
                wkr=self._linear(p + "wkr", d_h, (d_h, d_h)),
                u=self._table(p + "u", (d_h,)),
                v=self._table(p + "v", (d_h,)),
                wo=self._linear(p + "wo", d_h, (d_h, d_h)),
                ffn_w1=self._linear(p + "ffn.w1", d_h, (d_h, d_h)),
                ffn_b1=self._zeros(p + "ffn.b1", (d_h,)),
                ffn_w2=self._linear(p + "ffn.w2", d_h, (d_h, d_h)),
                ffn_b2=self._zeros(p + "ffn.b2", (d_h,)),
                ln1_g=self._ones(p + "ln1.g", (d_h,)),
                ln1_b=self._zeros(p + "ln1.b", (d_h,)),
                ln2_g=self._ones(p + "ln2.g", (d_h,)),
                ln2_b=self._zeros(p + "ln2.b", (d_h,)),
            ))
        self.encoder_params = enc_mod.EncoderParams(
            config=ec,
            context_table=self._table("embed.context", (len(self.char_vocab), ec.d_context)),
            position_table=self._table("embed.position", (ec.max_len, ec.d_pos)),
            region_table=self._table("embed.region", (2, ec.d_region)),
            attn_wq=self._linear("embed.attn.wq", ec.d_context, (ec.d_context, ec.d_attn)),
            attn_wk=self._linear("embed.attn.wk", ec.d_context, (ec.d_context, ec.d_attn)),
            attn_wv=self._linear("embed.attn.wv", ec.d_context, (ec.d_context, ec.d_attn)),
            layers=layers,
        )

        abl = cfg.ablations
        pair_in = d_h
        if not abl.no_distance_matrix:
            pair_in += gc.d_dist
        if not abl.no_region_matrix:
            pair_in += gc.d_region
        if not abl.no_attn_matrix:
            pair_in += gc.d_attn
        self.grid_params = grid_mod.GridParams(
            subj_w=self._linear("grid.subj.w", d_h, (d_h, d_h)),
            subj_b=self._zeros("grid.subj.b", (d_h,)),
            obj_w=self._linear("grid.obj.w", d_h, (d_h, d_h)),
            obj_b=self._zeros("grid.obj.b", (d_h,)),
            cln_gain_w=self._linear("grid.cln.gain_w", d_h, (d_h, d_h)),
            cln_gain_b=self._ones("grid.cln.gain_b", (d_h,)),
            cln_bias_w=self._linear("grid.cln.bias_w", d_h, (d_h, d_h)),
            cln_bias_b=self._zeros("grid.cln.bias_b", (d_h,)),
            dist_table=self._table("grid.dist_emb", (gc.distance_buckets, gc.d_dist)),
            region_table=self._table("grid.region_emb", (3, gc.d_region)),
            attn_table=self._table("grid.attn_emb", (gc.attn_buckets, gc.d_attn)),
            mlp1_w=self._linear("grid.mlp1.w", pair_in, (pair_in, gc.d_reduced)),
            mlp1_b=self._zeros("grid.mlp1.b", (gc.d_reduced,)),
            conv_w=[
                self._linear(
                    f"grid.conv{dil}.w",
                    gc.kernel * gc.kernel * gc.d_reduced,
                    (gc.kernel, gc.kernel, gc.d_reduced, gc.d_conv),
                )
                for dil in gc.dilations
            ],
            conv_b=[self._zeros(f"grid.conv{dil}.b", (gc.d_conv,)) for dil in gc.dilations],
        )

        q_channels = gc.d_reduced if abl.no_dilated_conv else len(gc.dilations) * gc.d_conv
        d4 = 4 * nc.d_r

        def tag_proj(group: str):
            return (
                self._linear(f"enh.tag_{group}.w", q_channels, (q_channels, nc.d_r)),
                self._zeros(f"enh.tag_{group}.b", (nc.d_r,)),
            )

        nnc_w, nnc_b = tag_proj("nnc")
        pnc_w, pnc_b = tag_proj("pnc")
        htc_w, htc_b = tag_proj("htc")
        thc_w, thc_b = tag_proj("thc")
        self.enhance_params = enh_mod.EnhanceParams(
            tag_nnc_w=nnc_w, tag_nnc_b=nnc_b,
            tag_pnc_w=pnc_w, tag_pnc_b=pnc_b,
            tag_htc_w=htc_w, tag_htc_b=htc_b,
            tag_thc_w=thc_w, tag_thc_b=thc_b,
            pool_s_w=self._linear("enh.pool_s.w", d4, (d4, d_h)),
            pool_s_b=self._zeros("enh.pool_s.b", (d_h,)),
            pool_o_w=self._linear("enh.pool_o.w", d4, (d4, d_h)),
            pool_o_b=self._zeros("enh.pool_o.b", (d_h,)),
            self_wq=self._linear("enh.self.wq", d_h, (d_h, d_h)),
            self_wk=self._linear("enh.self.wk", d_h, (d_h, d_h)),
            self_wv=self._linear("enh.self.wv", d_h, (d_h, d_h)),
            self_wo=self._linear("enh.self.wo", d_h, (d_h, d_h)),
            cross_wq=self._linear("enh.cross.wq", d_h, (d_h, d_h)),
            cross_wk=self._linear("enh.cross.wk", d_h, (d_h, d_h)),
            cross_wv=self._linear("enh.cross.wv", d_h, (d_h, d_h)),
            cross_wo=self._linear("enh.cross.wo", d_h, (d_h, d_h)),
            out_s_w=self._linear("enh.out_s.w", d_h, (d_h, d_h)),
            out_s_b=self._zeros("enh.out_s.b", (d_h,)),
            out_o_w=self._linear("enh.out_o.w", d_h, (d_h, d_h)),
            out_o_b=self._zeros("enh.out_o.b", (d_h,)),
            ln_s_g=self._ones("enh.ln_s.g", (d_h,)),
            ln_s_b=self._zeros("enh.ln_s.b", (d_h,)),
            ln_o_g=self._ones("enh.ln_o.g", (d_h,)),
            ln_o_b=self._zeros("enh.ln_o.b", (d_h,)),
        )

        d_b = pc.d_biaffine
        self.predictor_params = pred_mod.PredictorParams(
            subj_w=self._linear("pred.subj.w", d_h, (d_h, d_b)),
            subj_b=self._zeros("pred.subj.b", (d_b,)),
            obj_w=self._linear("pred.obj.w", d_h, (d_h, d_b)),
            obj_b=self._zeros("pred.obj.b", (d_b,)),
            biaffine_u=self._linear("pred.biaffine.u", d_b, (d_b, n_tags, d_b)),
            biaffine_w=self._linear("pred.biaffine.w", 2 * d_b, (2 * d_b, n_tags)),
            biaffine_b=self._zeros("pred.biaffine.b", (n_tags,)),
            mlp_w1=self._linear("pred.mlp.w1", d4, (d4, pc.d_hidden)),
            mlp_b1=self._zeros("pred.mlp.b1", (pc.d_hidden,)),
            mlp_w2=self._linear("pred.mlp.w2", pc.d_hidden, (pc.d_hidden, n_tags)),
            mlp_b2=self._zeros("pred.mlp.b2", (n_tags,)),
        )

    # ------------------------------------------------------------------
    # forward paths

    def sentence_inputs(self, sentence: Sentence, pad_to: int | None = None):
        """(char_ids, mask, context_vectors) for one sentence, optionally padded."""
        ids = self.char_vocab.encode(sentence.chars)
        n = len(ids)
        total = max(pad_to or n, n)
        mask = np.zeros(total, dtype=bool)
        mask[:n] = True
        if total > n:
            ids = np.concatenate([ids, np.full(total - n, self.char_vocab.pad_id, dtype=np.int64)])
        vectors = None
        if self.context_provider is not None:
            vectors = self.context_provider.get(sentence.id)
            if vectors is None:
                raise CorpusError(f"no sidecar vectors for sentence {sentence.id!r}")
            if total > n:
                vectors = np.concatenate(
                    [vectors, np.zeros((total - n, vectors.shape[1]), dtype=vectors.dtype)]
                )
        return ids, mask, vectors

    def forward(
        self,
        char_ids: np.ndarray,
        mask: np.ndarray,
        context_vectors: np.ndarray | None = None,
        training: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> ForwardResult:
        abl = self.config.ablations
        rng = dropout_rng if training else None
        enc_out = enc_mod.encode(
            char_ids,
            mask,
            self.encoder_params,
            context_vectors=context_vectors,
            skip_adapted=abl.no_adapted_transformer,
            use_scaling=abl.use_scaling_factor,
            dropout_rng=rng,
        )
        h = enc_out.h
        tf, _, _ = enh_mod.run_enhancement(
            h.values,
            mask,
            enc_out.attn,
            self.grid_params,
            self.enhance_params,
            self.config.grid,
            self.config.enhance,
            rounds=abl.rounds_override,
            use_distance=not abl.no_distance_matrix,
            use_region=not abl.no_region_matrix,
            use_attn=not abl.no_attn_matrix,
            use_dilated_conv=not abl.no_dilated_conv,
            enhancement_enabled=not abl.no_enhancement,
        )
        y_bi = None if abl.no_biaffine_predictor else pred_mod.biaffine_scores(
            h.values, self.predictor_params
        )
        y_mlp = None if abl.no_mlp_predictor else pred_mod.mlp_scores(
            tf, self.predictor_params
        )
        fused = pred_mod.fuse_scores(y_bi, y_mlp)
        mask2d = np.logical_and(mask[:, None], mask[None, :])
        if not np.isfinite(fused.data).all():
            raise FloatingPointError("non-finite scores in forward pass")
        return ForwardResult(fused=fused, h=h, tf=tf, attn=enc_out.attn, mask2d=mask2d)

    def sentence_loss(
        self,
        sentence: Sentence,
        training: bool = False,
        dropout_rng: np.random.Generator | None = None,
        reduction: str = "mean",
    ) -> tuple[Tensor, int]:
        """Loss over one sentence's grid plus the unmasked cell count."""
        ids, mask, vectors = self.sentence_inputs(sentence)
        out = self.forward(ids, mask, vectors, training=training, dropout_rng=dropout_rng)
        gold = encode_grid(sentence, self.tag_vocab)
        loss = pred_mod.multi_tag_loss(
            out.fused,
            gold,
            self.tag_vocab,
            out.mask2d,
            s0=self.config.predictor.threshold,
            reduction=reduction,
        )
        return loss, int(out.mask2d.sum())

    def predict_grid(self, sentence: Sentence) -> TagGrid:
        ids, mask, vectors = self.sentence_inputs(sentence)
        out = self.forward(ids, mask, vectors, training=False)
        return pred_mod.predict_cells(
            out.fused,
            self.tag_vocab,
            out.mask2d,
            mode=self.config.predictor.mode,
            s0=self.config.predictor.threshold,
        )

    def predict_sentence(self, sentence: Sentence) -> set[EntityMention]:
        grid = self.predict_grid(sentence)
        return decode_mod.decode_grid(
            grid, self.tag_vocab, contiguous=self.config.decode.contiguous
        )
