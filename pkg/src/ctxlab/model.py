"""A tiny LLaMA-shaped decoder with pluggable attention and positional strategies.

Block layout per layer::

    x = x + Wo . attn(rms_norm(x))
    x = x + W_down . (silu(rms_norm(x) W_gate) * rms_norm(x) W_up)

The weight container is an 8-byte little-endian header length, a UTF-8 JSON
header, then the raw little-endian float64 payload (see ``docs/formats.md``).
"""

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .attention import AttentionSpec, flash_attention, naive_attention, paged_attention, streaming_attention
from .exceptions import (
    ConfigError,
    InconsistentWeightsError,
    InputError,
    MalformedHeaderError,
    NumericError,
    TruncatedPayloadError,
)
from .kv_cache import ContiguousCache, PagedCache, SinkCache
from .linalg import argmax, matmul, rms_norm
from .positional import sinusoidal_table

FORMAT_NAME = "ctxlab.weights"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_pretrain_len: int = 128
    rope_base: float = 10000.0
    mlp_hidden: int = 128
    norm_eps: float = 1e-6

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "max_pretrain_len", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.rope_base <= 1:
            raise ConfigError("rope_base must exceed 1")

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def expected_shapes(cfg):
    shapes = {
        "tok_embeddings": (cfg.vocab_size, cfg.d_model),
        "final_norm": (cfg.d_model,),
        "output": (cfg.d_model, cfg.vocab_size),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "attn_norm": (cfg.d_model,),
            p + "wq": (cfg.d_model, cfg.d_model),
            p + "wk": (cfg.d_model, cfg.d_model),
            p + "wv": (cfg.d_model, cfg.d_model),
            p + "wo": (cfg.d_model, cfg.d_model),
            p + "ffn_norm": (cfg.d_model,),
            p + "w_gate": (cfg.d_model, cfg.mlp_hidden),
            p + "w_up": (cfg.d_model, cfg.mlp_hidden),
            p + "w_down": (cfg.mlp_hidden, cfg.d_model),
        })
    return dict(sorted(shapes.items()))


class WeightStore:
    """Immutable mapping of tensor name to float64 array, validated against a config."""

    def __init__(self, cfg, tensors):
        expected = expected_shapes(cfg)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise InconsistentWeightsError(f"tensor names differ: missing={missing} extra={extra}")
        self.cfg = cfg
        self._tensors = {}
        for name, shape in expected.items():
            arr = np.array(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise InconsistentWeightsError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise NumericError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            self._tensors[name] = arr

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        return self.cfg == other.cfg and all(
            np.array_equal(self[n], other[n]) for n in self._tensors
        )

    def __repr__(self):
        return f"WeightStore({self.cfg!r}, {len(self)} tensors)"


def init_random(cfg, seed=0):
    """Uniform init in ``[-1/sqrt(d_model), 1/sqrt(d_model)]``, drawn in sorted name order."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(cfg.d_model)
    tensors = {name: rng.uniform(-bound, bound, size=shape) for name, shape in expected_shapes(cfg).items()}
    return WeightStore(cfg, tensors)


def _silu(x):
    return x / (1.0 + np.exp(-x))


class Decoder:
    """Stateful forward pass owning one KV cache per (layer, head).

    ``prefill`` and ``step`` may be interleaved freely; positions continue from
    the number of tokens already processed. ``peak_slots`` tracks the largest
    number of tokens held by any single cache.
    """

    def __init__(self, weights, spec, cfg=None, n_sink=4, window=512, max_blocks=None):
        self.weights = weights
        self.cfg = cfg or weights.cfg
        if spec.head_dim != self.cfg.head_dim:
            raise ConfigError(f"spec head_dim {spec.head_dim} != model head_dim {self.cfg.head_dim}")
        self.spec = spec
        self.n_sink = n_sink
        self.window = window
        self.max_blocks = max_blocks
        self.caches = [[self._new_cache() for _ in range(self.cfg.n_heads)] for _ in range(self.cfg.n_layers)]
        self.n_tokens = 0
        self.peak_slots = 0

    def _new_cache(self):
        hd = self.cfg.head_dim
        if self.spec.backend == "paged":
            return PagedCache(hd, self.spec.block_size, self.max_blocks)
        if self.spec.backend == "streaming":
            return SinkCache(hd, self.n_sink, self.window)
        return ContiguousCache(hd)

    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens)
        if tokens.ndim != 1 or tokens.size == 0:
            raise InputError("need a non-empty 1-D token sequence")
        if not np.issubdtype(tokens.dtype, np.integer):
            raise InputError("token ids must be integers")
        bad = (tokens < 0) | (tokens >= self.cfg.vocab_size)
        if bad.any():
            raise InputError(f"token id {int(tokens[bad][0])} outside vocabulary of {self.cfg.vocab_size}")
        return tokens

    def _attend(self, cache, q, k, v, first):
        backend = self.spec.backend
        if backend in ("naive", "flash"):
            cache.extend(k, v)
            fn = naive_attention if backend == "naive" else flash_attention
            q_pos = first + np.arange(q.shape[0])
            return fn(q, cache.keys(), cache.values(), self.spec, q_pos, cache.positions())
        out = np.empty_like(q)
        for i in range(q.shape[0]):
            cache.append(k[i], v[i])
            if backend == "paged":
                out[i] = paged_attention(q[i], cache, self.spec, position=first + i)
            else:
                out[i] = streaming_attention(q[i], cache, self.spec)
        return out

    def prefill(self, tokens):
        """Run ``tokens`` through the model; return their logits (n x vocab)."""
        tokens = self._check_tokens(tokens)
        cfg, w, hd = self.cfg, self.weights, self.cfg.head_dim
        first = self.n_tokens
        x = np.array(w["tok_embeddings"][tokens])
        if self.spec.pe_mode == "sinusoidal":
            x = x + sinusoidal_table(first + np.arange(len(tokens)), cfg.d_model)
        for layer in range(cfg.n_layers):
            p = f"layers.{layer}."
            h = rms_norm(x, w[p + "attn_norm"], cfg.norm_eps)
            q, k, v = matmul(h, w[p + "wq"]), matmul(h, w[p + "wk"]), matmul(h, w[p + "wv"])
            heads = []
            for head, cache in enumerate(self.caches[layer]):
                sl = slice(head * hd, (head + 1) * hd)
                heads.append(self._attend(cache, q[:, sl], k[:, sl], v[:, sl], first))
            x = x + matmul(np.concatenate(heads, axis=1), w[p + "wo"])
            h = rms_norm(x, w[p + "ffn_norm"], cfg.norm_eps)
            x = x + matmul(_silu(matmul(h, w[p + "w_gate"])) * matmul(h, w[p + "w_up"]), w[p + "w_down"])
            if not np.isfinite(x).all():
                raise NumericError(f"non-finite activations after layer {layer}", layer=layer)
        self.n_tokens += len(tokens)
        self.peak_slots = max(self.peak_slots, max(c.slot_count for row in self.caches for c in row))
        logits = matmul(rms_norm(x, w["final_norm"], cfg.norm_eps), w["output"])
        if not np.isfinite(logits).all():
            raise NumericError("non-finite logits at the output head", layer=cfg.n_layers)
        return logits

    def step(self, token):
        return self.prefill([token])[0]

    def generate(self, context, n_new, stop_id=None):
        """Yield greedy tokens one at a time; the cache only grows when the next token is requested."""
        if n_new < 1:
            raise InputError("n_new must be >= 1")
        logits = self.prefill(context)[-1]
        for i in range(n_new):
            token = argmax(logits)
            yield token
            if token == stop_id or i == n_new - 1:
                return
            logits = self.step(token)


def forward(tokens, weights, cfg=None, spec=None, **cache_kw):
    """Stateless forward pass; returns logits of shape (n, vocab)."""
    cfg = cfg or weights.cfg
    spec = spec or AttentionSpec(head_dim=cfg.head_dim)
    return Decoder(weights, spec, cfg, **cache_kw).prefill(tokens)


def greedy_decode(context, n_new, stop_id=None, weights=None, cfg=None, spec=None, **cache_kw):
    cfg = cfg or weights.cfg
    spec = spec or AttentionSpec(head_dim=cfg.head_dim)
    return list(Decoder(weights, spec, cfg, **cache_kw).generate(context, n_new, stop_id))


def save_weights(store, path):
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "config": store.cfg.to_dict(), "tensors": {}}
    offset = 0
    chunks = []
    for name, arr in store.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        header["tensors"][name] = {"shape": list(arr.shape), "offsets": [offset, offset + len(raw)]}
        offset += len(raw)
        chunks.append(raw)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)


def load_weights(path):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise TruncatedPayloadError(f"{path}: file too short for the header length prefix")
    (n,) = struct.unpack("<Q", data[:8])
    if len(data) < 8 + n:
        raise TruncatedPayloadError(f"{path}: header claims {n} bytes, file has {len(data) - 8}")
    try:
        header = json.loads(data[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise MalformedHeaderError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {header.get('version')!r}")
    try:
        cfg = ModelConfig.from_dict(header["config"])
        entries = {name: (tuple(e["shape"]), tuple(e["offsets"])) for name, e in header["tensors"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise MalformedHeaderError(f"{path}: bad header field: {exc}") from None

    payload = data[8 + n:]
    expected = expected_shapes(cfg)
    if set(entries) != set(expected):
        raise InconsistentWeightsError(f"{path}: tensor names do not match the config")
    cursor = 0
    for name, (shape, (begin, end)) in sorted(entries.items(), key=lambda kv: kv[1][1]):
        if shape != expected[name]:
            raise InconsistentWeightsError(f"{path}: {name} has shape {shape}, config implies {expected[name]}")
        if begin != cursor or end - begin != 8 * int(np.prod(shape, dtype=np.int64)):
            raise InconsistentWeightsError(f"{path}: {name} offsets {[begin, end]} inconsistent with layout")
        cursor = end
    if len(payload) < cursor:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, header needs {cursor}")
    if len(payload) > cursor:
        raise InconsistentWeightsError(f"{path}: {len(payload) - cursor} trailing bytes after the last tensor")
    tensors = {
        name: np.frombuffer(payload, dtype="<f8", count=int(np.prod(shape, dtype=np.int64)), offset=begin).reshape(shape)
        for name, (shape, (begin, _)) in entries.items()
    }
    return WeightStore(cfg, tensors)
