"""scikit-learn compatible front end for greedy next-line code completion."""

import math
import time
from dataclasses import dataclass
from os import PathLike

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .attention import AttentionSpec
from .exceptions import ConfigError
from .metrics import exact_match
from .model import Decoder, ModelConfig, WeightStore, init_random, load_weights
from .positional import ReRopeConfig, RopeConfig
from .tokenizer import BYTE_VOCAB, EOS_ID, NEWLINE_ID, detokenize, tokenize

PE_CHOICES = ("sinusoidal", "rope", "rerope")
ATTN_CHOICES = ("naive", "flash", "paged", "streaming")
_LEADING = {NEWLINE_ID, ord("\r")}


def next_line(text):
    """First line of ``text`` after skipping leading line breaks."""
    return text.lstrip("\r\n").split("\n", 1)[0]


def build_attention_spec(cfg, pe, attn, window=512, leak_k=math.inf, block_size=16, tile=16):
    """Translate harness-level strategy names into an :class:`AttentionSpec`.

    Raises :class:`~ctxlab.exceptions.UnsupportedCombinationError` for pairs
    that cannot run (ReRoPE on anything but the naive backend).
    """
    if pe not in PE_CHOICES:
        raise ConfigError(f"pe must be one of {PE_CHOICES}, got {pe!r}")
    if attn not in ATTN_CHOICES:
        raise ConfigError(f"attn must be one of {ATTN_CHOICES}, got {attn!r}")
    rope = RopeConfig(cfg.head_dim, base=cfg.rope_base)
    rerope = ReRopeConfig(rope, window, leak_k) if pe == "rerope" else None
    return AttentionSpec(
        backend=attn, head_dim=cfg.head_dim, tile_size=tile, block_size=block_size,
        pe_mode=pe, rope=rope if pe != "sinusoidal" else None, rerope=rerope,
    )


@dataclass(frozen=True)
class Completion:
    text: str
    tokens: list
    n_context_tokens: int
    peak_cache_slots: int
    wall_ms: float


class GreedyCompleter(BaseEstimator):
    """Greedy next-line completer over the toy decoder.

    ``fit`` does no training: it materialises the weights (loaded from
    ``weights`` or seeded from ``model_config`` and ``seed``) and validates the
    strategy combination. ``predict`` maps source contexts to predicted next
    lines and ``score`` returns the exact-match rate in ``[0, 1]``.

    Parameters
    ----------
    pe : {"sinusoidal", "rope", "rerope"}
    attn : {"naive", "flash", "paged", "streaming"}
    window : int
        ReRoPE window, and the rolling-window size for streaming attention.
    leak_k : float
        LeakyReRoPE factor; ``inf`` clamps.
    n_sink : int
        Attention-sink tokens kept by the streaming cache.
    block_size, tile : int
        Paged block size and flash tile size.
    gen_len : int
        Maximum number of generated tokens.
    stop_at_newline : bool
        Truncate to the first generated line (and stop decoding once it ends).
    weights : path or WeightStore, optional
    seed : int
    model_config : ModelConfig or dict, optional
    max_blocks : int, optional
        Hard cap on the paged block pool.
    """

    def __init__(self, pe="rope", attn="naive", window=512, leak_k=math.inf, n_sink=4,
                 block_size=16, tile=16, gen_len=100, stop_at_newline=True,
                 weights=None, seed=0, model_config=None, max_blocks=None):
        self.pe = pe
        self.attn = attn
        self.window = window
        self.leak_k = leak_k
        self.n_sink = n_sink
        self.block_size = block_size
        self.tile = tile
        self.gen_len = gen_len
        self.stop_at_newline = stop_at_newline
        self.weights = weights
        self.seed = seed
        self.model_config = model_config
        self.max_blocks = max_blocks

    def fit(self, X=None, y=None):
        if self.gen_len < 1:
            raise ConfigError("gen_len must be >= 1")
        if self.window < 1 or self.n_sink < 0:
            raise ConfigError("window must be >= 1 and n_sink >= 0")
        if isinstance(self.weights, WeightStore):
            store = self.weights
        elif isinstance(self.weights, (str, PathLike)):
            store = load_weights(self.weights)
        else:
            cfg = self.model_config
            if cfg is None:
                cfg = ModelConfig()
            elif isinstance(cfg, dict):
                cfg = ModelConfig.from_dict(cfg)
            store = init_random(cfg, self.seed)
        self.spec_ = build_attention_spec(
            store.cfg, self.pe, self.attn, self.window, self.leak_k, self.block_size, self.tile
        )
        self.weights_ = store
        self.config_ = store.cfg
        return self

    def _decoder(self):
        return Decoder(self.weights_, self.spec_, n_sink=self.n_sink, window=self.window,
                       max_blocks=self.max_blocks)

    def complete(self, context, timing=True):
        """Complete one context and report cache and timing telemetry."""
        check_is_fitted(self, "weights_")
        ctx = tokenize(context)
        if not ctx:
            raise ConfigError("context must be non-empty")
        stop_id = EOS_ID if self.config_.vocab_size > EOS_ID else None
        start = time.perf_counter()
        dec = self._decoder()
        out = []
        for token in dec.generate(ctx, self.gen_len, stop_id):
            if token >= BYTE_VOCAB:
                break
            out.append(token)
            if self.stop_at_newline and token == NEWLINE_ID and any(t not in _LEADING for t in out):
                break
        text = detokenize(out)
        if self.stop_at_newline:
            text = next_line(text)
        wall = (time.perf_counter() - start) * 1000.0 if timing else None
        return Completion(text, out, len(ctx), dec.peak_slots, wall)

    def predict(self, X):
        return [self.complete(context, timing=False).text for context in X]

    def score(self, X, y, sample_weight=None):
        preds = self.predict(X)
        y = list(y)
        if sample_weight is None:
            sample_weight = [1.0] * len(y)
        hits = sum(w for p, t, w in zip(preds, y, sample_weight) if exact_match(p, t))
        return hits / sum(sample_weight)
