import json
import struct

import numpy as np
import pytest

from ctxlab.estimator import build_attention_spec
from ctxlab.exceptions import (
    ConfigError,
    InconsistentWeightsError,
    InputError,
    MalformedHeaderError,
    NumericError,
    TruncatedPayloadError,
)
from ctxlab.model import (
    Decoder,
    ModelConfig,
    WeightStore,
    expected_shapes,
    forward,
    greedy_decode,
    init_random,
    load_weights,
    save_weights,
)

BACKENDS = ["naive", "flash", "paged", "streaming"]


def spec_for(cfg, attn="naive", pe="rope", **kw):
    return build_attention_spec(cfg, pe, attn, block_size=kw.get("block_size", 4), tile=kw.get("tile", 5),
                                window=kw.get("window", 512))


def refeed_decode(context, n_new, weights, spec):
    """Oracle: recompute the whole prefix every step, no cache reuse."""
    seq, out = list(context), []
    for _ in range(n_new):
        token = int(np.argmax(forward(seq, weights, spec=spec)[-1]))
        out.append(token)
        seq.append(token)
    return out


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(n_layers=0)
    assert ModelConfig(d_model=64, n_heads=4).head_dim == 16


def test_init_deterministic(small_config):
    a, b = init_random(small_config, 3), init_random(small_config, 3)
    assert all(a[n].tobytes() == b[n].tobytes() for n in a)
    assert a == b
    assert a != init_random(small_config, 4)


def test_init_bounds(small_config):
    w = init_random(small_config, 11)
    bound = 1 / np.sqrt(small_config.d_model)
    assert set(w) == set(expected_shapes(small_config))
    for name, arr in w.items():
        assert np.all(np.abs(arr) <= bound), name


def test_weights_are_read_only(small_config):
    w = init_random(small_config, 0)
    with pytest.raises(ValueError):
        w["output"][0, 0] = 1.0


def test_weight_store_rejects_bad_shapes(small_config):
    tensors = dict(init_random(small_config, 0).items())
    tensors["output"] = np.zeros((3, 3))
    with pytest.raises(InconsistentWeightsError):
        WeightStore(small_config, tensors)
    del tensors["output"]
    with pytest.raises(InconsistentWeightsError):
        WeightStore(small_config, tensors)


def test_forward_single_token(toy_weights, toy_config):
    logits = forward([65], toy_weights, toy_config, spec_for(toy_config))
    assert logits.shape == (1, 256) and np.isfinite(logits).all()


@pytest.mark.parametrize("pe", ["sinusoidal", "rope", "rerope"])
def test_forward_causal_prefix(toy_weights, toy_config, pe):
    spec = build_attention_spec(toy_config, pe, "naive", window=4)
    a = forward([1, 2, 3, 4, 5, 6, 7, 8], toy_weights, spec=spec)
    b = forward([1, 2, 3, 4, 5, 200, 100, 0], toy_weights, spec=spec)
    assert np.array_equal(a[:5], b[:5])
    assert not np.array_equal(a[5:], b[5:])


def test_forward_deterministic(toy_weights, toy_config):
    spec = spec_for(toy_config, "flash")
    toks = list(range(30, 60))
    assert np.array_equal(forward(toks, toy_weights, spec=spec), forward(toks, toy_weights, spec=spec))


def test_forward_input_errors(toy_weights):
    with pytest.raises(InputError):
        forward([256], toy_weights)
    with pytest.raises(InputError):
        forward([], toy_weights)
    with pytest.raises(InputError):
        forward([1.5], toy_weights)


def test_forward_numeric_error_names_layer(small_config):
    tensors = dict(init_random(small_config, 0).items())
    for name in ("layers.1.ffn_norm", "layers.1.w_up", "layers.1.w_down"):
        tensors[name] = np.full(tensors[name].shape, 1e300)
    w = WeightStore(small_config, tensors)
    with pytest.raises(NumericError) as info:
        with np.errstate(all="ignore"):
            forward([1, 2, 3], w, spec=spec_for(small_config))
    assert info.value.layer == 1


@pytest.mark.parametrize("pe", ["sinusoidal", "rope"])
def test_backends_agree_on_argmax(toy_weights, toy_config, pe, rng):
    toks = rng.integers(0, 256, size=toy_config.max_pretrain_len).tolist()
    ref = forward(toks, toy_weights, spec=spec_for(toy_config, "naive", pe)).argmax(axis=1)
    for attn in ("flash", "paged", "streaming"):
        got = forward(toks, toy_weights, spec=spec_for(toy_config, attn, pe)).argmax(axis=1)
        assert np.array_equal(got, ref), attn


def test_greedy_one_token(toy_weights, toy_config):
    spec = spec_for(toy_config)
    ctx = [10, 20, 30]
    assert greedy_decode(ctx, 1, None, toy_weights, spec=spec) == [int(np.argmax(forward(ctx, toy_weights, spec=spec)[-1]))]


def test_greedy_stop_id(toy_weights, toy_config):
    spec = spec_for(toy_config)
    first = greedy_decode([10, 20, 30], 1, None, toy_weights, spec=spec)[0]
    assert greedy_decode([10, 20, 30], 50, first, toy_weights, spec=spec) == [first]


def test_greedy_rejects_zero_tokens(toy_weights):
    with pytest.raises(InputError):
        greedy_decode([1], 0, None, toy_weights)


@pytest.mark.parametrize("attn", ["naive", "flash", "paged"])
def test_incremental_equals_refeed(toy_weights, toy_config, attn, rng):
    spec = spec_for(toy_config, attn)
    ctx = rng.integers(0, 256, size=12).tolist()
    assert greedy_decode(ctx, 20, None, toy_weights, spec=spec) == refeed_decode(ctx, 20, toy_weights, spec)


def test_incremental_equals_refeed_rerope(toy_weights, toy_config, rng):
    spec = spec_for(toy_config, "naive", "rerope", window=6)
    ctx = rng.integers(0, 256, size=10).tolist()
    assert greedy_decode(ctx, 15, None, toy_weights, spec=spec) == refeed_decode(ctx, 15, toy_weights, spec)


def test_step_logits_match_prefill_exactly(toy_weights, toy_config):
    spec = spec_for(toy_config, "naive")
    toks = list(range(40, 56))
    full = forward(toks, toy_weights, spec=spec)
    dec = Decoder(toy_weights, spec)
    dec.prefill(toks[:8])
    for i in range(8, 16):
        assert np.array_equal(dec.step(toks[i]), full[i])


def test_streaming_peak_slots_bounded(small_config):
    w = init_random(small_config, 1)
    spec = spec_for(small_config, "streaming")
    dec = Decoder(w, spec, n_sink=2, window=6)
    dec.prefill(list(range(50)))
    assert dec.peak_slots == 8
    dec = Decoder(w, spec_for(small_config, "naive"))
    dec.prefill(list(range(50)))
    assert dec.peak_slots == 50


class TestWeightFile:
    def test_round_trip(self, small_config, tmp_path):
        w = init_random(small_config, 5)
        save_weights(w, tmp_path / "w.bin")
        assert load_weights(tmp_path / "w.bin") == w

    def test_header_layout(self, small_config, tmp_path):
        w = init_random(small_config, 5)
        save_weights(w, tmp_path / "w.bin")
        raw = (tmp_path / "w.bin").read_bytes()
        (n,) = struct.unpack("<Q", raw[:8])
        header = json.loads(raw[8:8 + n])
        assert header["format"] == "ctxlab.weights" and header["version"] == 1
        assert header["config"] == small_config.to_dict()
        begin, end = header["tensors"]["output"]["offsets"]
        payload = raw[8 + n:]
        got = np.frombuffer(payload[begin:end], dtype="<f8").reshape(header["tensors"]["output"]["shape"])
        assert np.array_equal(got, w["output"])

    def test_truncated(self, small_config, tmp_path):
        p = tmp_path / "w.bin"
        save_weights(init_random(small_config, 5), p)
        raw = p.read_bytes()
        for cut in (4, 20, len(raw) - 1):
            p.write_bytes(raw[:cut])
            with pytest.raises(TruncatedPayloadError):
                load_weights(p)

    def _rewrite_header(self, path, mutate):
        raw = path.read_bytes()
        (n,) = struct.unpack("<Q", raw[:8])
        header = json.loads(raw[8:8 + n])
        mutate(header)
        blob = json.dumps(header).encode()
        path.write_bytes(struct.pack("<Q", len(blob)) + blob + raw[8 + n:])

    def test_offset_mismatch(self, small_config, tmp_path):
        p = tmp_path / "w.bin"
        save_weights(init_random(small_config, 5), p)

        def shift(header):
            header["tensors"]["output"]["offsets"][0] += 8

        self._rewrite_header(p, shift)
        with pytest.raises(InconsistentWeightsError):
            load_weights(p)

    def test_shape_mismatch(self, small_config, tmp_path):
        p = tmp_path / "w.bin"
        save_weights(init_random(small_config, 5), p)

        def reshape(header):
            header["tensors"]["final_norm"]["shape"] = [small_config.d_model // 2, 2]

        self._rewrite_header(p, reshape)
        with pytest.raises(InconsistentWeightsError):
            load_weights(p)

    def test_trailing_bytes(self, small_config, tmp_path):
        p = tmp_path / "w.bin"
        save_weights(init_random(small_config, 5), p)
        p.write_bytes(p.read_bytes() + b"\0" * 8)
        with pytest.raises(InconsistentWeightsError):
            load_weights(p)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "w.bin"
        p.write_bytes(struct.pack("<Q", 5) + b"{oops")
        with pytest.raises(MalformedHeaderError):
            load_weights(p)
        blob = json.dumps({"format": "something-else"}).encode()
        p.write_bytes(struct.pack("<Q", len(blob)) + blob)
        with pytest.raises(MalformedHeaderError):
            load_weights(p)
