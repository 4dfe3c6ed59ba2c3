"""Shared fixtures: small model configs and corpora sized for fast tests."""

import numpy as np
import pytest

from crener import config as cfg_mod
from crener.corpus import CharVocabulary, build_tag_vocabulary, generate_synthetic_corpus
from crener.model import CrenerModel


def small_config(double: bool = False, seed: int = 42) -> cfg_mod.ModelConfig:
    cfg = cfg_mod.default_config()
    cfg.encoder.d_context = 8
    cfg.encoder.d_pos = 4
    cfg.encoder.d_region = 2
    cfg.encoder.d_attn = 2
    cfg.encoder.layers = 1
    cfg.encoder.heads = 2
    cfg.encoder.dropout = 0.0
    cfg.encoder.max_len = 32
    cfg.grid.d_dist = 4
    cfg.grid.d_region = 3
    cfg.grid.d_attn = 3
    cfg.grid.d_reduced = 8
    cfg.grid.d_conv = 4
    cfg.enhance.d_r = 4
    cfg.enhance.rounds = 2
    cfg.predictor.d_biaffine = 6
    cfg.predictor.d_hidden = 8
    cfg.optimizer.seed = seed
    cfg.optimizer.double_precision = double
    return cfg


def small_model(double: bool = False, seed: int = 42, config=None):
    cfg = config if config is not None else small_config(double=double, seed=seed)
    sents = generate_synthetic_corpus(seed=9, count=8, max_len=8, types=["A", "B"])
    char_vocab = CharVocabulary.from_sentences(sents)
    tag_vocab = build_tag_vocabulary(
        sents, none_is_implicit=cfg.predictor.mode == "threshold"
    )
    return CrenerModel(cfg, char_vocab, tag_vocab), sents


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
