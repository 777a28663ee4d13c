"""Desk-scale transformer inference lab for context-length extrapolation."""

from .attention import AttentionSpec, flash_attention, naive_attention, paged_attention, streaming_attention
from .estimator import GreedyCompleter
from .harness import RunConfig, corpus_stats, emit_report, load_corpus, run_eval
from .kv_cache import ContiguousCache, PagedCache, SinkCache
from .metrics import aggregate, edit_similarity, exact_match, levenshtein
from .model import Decoder, ModelConfig, WeightStore, forward, greedy_decode, init_random, load_weights, save_weights
from .positional import ReRopeConfig, RopeConfig, apply_rope, rerope_scores, rope_scores, sinusoidal_encoding

__version__ = "0.1.0"

__all__ = [
    "AttentionSpec", "ContiguousCache", "Decoder", "GreedyCompleter", "ModelConfig", "PagedCache",
    "ReRopeConfig", "RopeConfig", "RunConfig", "SinkCache", "WeightStore", "aggregate", "apply_rope",
    "corpus_stats", "edit_similarity", "emit_report", "exact_match", "flash_attention", "forward",
    "greedy_decode", "init_random", "levenshtein", "load_corpus", "load_weights", "naive_attention",
    "paged_attention", "rerope_scores", "rope_scores", "run_eval", "save_weights", "sinusoidal_encoding",
    "streaming_attention",
]
