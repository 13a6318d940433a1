"""Exact guess-and-verify decoding with n-gram drafts."""

from .core import Vocab, build_vocab, detokenize, tokenize
from .costmodel import AcceleratorProfile, DEFAULT_PROFILE, call_latency, heatmap, simulate_speedup, slowdown
from .drafters import (BigramTable, ExtendedBigramTable, UnigramRanking, derive_bigram, derive_unigram,
                       extend_bigram, extended_speculate, unigram_topk)
from .context import ContextMatch, context_ngram_match
from .engine import RunMetrics, StrategyConfig, run_generation, spec_decode_step, verify
from .model import (KvCache, Predictor, TableModel, ToyTransformer, greedy_decode, table_model_from_corpus,
                    toy_transformer_init)
from .strategy import DraftBatch, DraftTables, make_drafts, mixed_drafts, single_strategy_drafts

__version__ = "0.1.0"

__all__ = [
    "AcceleratorProfile", "BigramTable", "ContextMatch", "DEFAULT_PROFILE", "DraftBatch", "DraftTables",
    "ExtendedBigramTable", "KvCache", "Predictor", "RunMetrics", "StrategyConfig", "TableModel",
    "ToyTransformer", "UnigramRanking", "Vocab", "build_vocab", "call_latency", "context_ngram_match",
    "derive_bigram", "derive_unigram", "detokenize", "extend_bigram", "extended_speculate", "greedy_decode",
    "heatmap", "make_drafts", "mixed_drafts", "run_generation", "simulate_speedup", "single_strategy_drafts",
    "slowdown", "spec_decode_step", "table_model_from_corpus", "tokenize", "toy_transformer_init",
    "unigram_topk", "verify",
]
