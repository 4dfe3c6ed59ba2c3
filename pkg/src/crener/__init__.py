"""Character-relation grid tagging for Chinese NER.

Entities become tag sets over an N x N character-pair grid; a
relative-position transformer encodes characters, an iterative
relation-enhancement network refines pair features, a biaffine + MLP
co-predictor scores every cell, and a depth-first search decodes
mentions back out.
"""

from .config import AblationFlags, ModelConfig, default_config, parse_config
from .corpus import (
    CharVocabulary,
    EntityMention,
    Sentence,
    TagGrid,
    TagVocabulary,
    build_tag_vocabulary,
    corpus_stats,
    encode_grid,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
)
from .decode import brute_force_decode, decode_grid
from .errors import ConfigError, CorpusError, CrenerError, DivergenceError
from .model import CrenerModel
from .training import Adam, Checkpoint, EvalReport, evaluate, evaluate_model, predict, train

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "Adam",
    "CharVocabulary",
    "Checkpoint",
    "ConfigError",
    "CorpusError",
    "CrenerError",
    "CrenerModel",
    "DivergenceError",
    "EntityMention",
    "EvalReport",
    "ModelConfig",
    "Sentence",
    "TagGrid",
    "TagVocabulary",
    "brute_force_decode",
    "build_tag_vocabulary",
    "corpus_stats",
    "decode_grid",
    "default_config",
    "encode_grid",
    "evaluate",
    "evaluate_model",
    "generate_synthetic_corpus",
    "load_corpus",
    "parse_config",
    "predict",
    "save_corpus",
    "train",
    "__version__",
]
