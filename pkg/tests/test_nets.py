"""MLP and attention-stack building blocks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knf import autodiff as ad
from knf.nets import (
    AttentionStackSpec,
    MlpSpec,
    attention_weights,
    glorot,
    gradient,
    init_attention,
    init_mlp,
    mlp_forward,
    wrap,
)


def test_glorot_bounds():
    rng = np.random.default_rng(0)
    w = glorot(rng, 20, 30)
    limit = np.sqrt(6.0 / 50.0)
    assert w.shape == (20, 30)
    assert np.all(np.abs(w) <= limit)


def test_mlp_hand_oracle():
    # one hidden relu layer with hand-set weights
    spec = MlpSpec(widths=(2, 2, 1))
    params = {
        "f.w0": np.array([[1.0, -1.0], [0.0, 2.0]]),
        "f.b0": np.array([0.5, 0.0]),
        "f.w1": np.array([[1.0], [1.0]]),
        "f.b1": np.array([-1.0]),
    }
    x = np.array([1.0, 1.0])
    # hidden = relu([1.5, 1.0]) = [1.5, 1.0]; out = 2.5 - 1 = 1.5
    out = mlp_forward(spec, wrap(params), "f", ad.constant(x))
    assert np.allclose(out.data, [1.5])


def test_mlp_last_layer_linear():
    spec = MlpSpec(widths=(1, 1))
    params = wrap({"g.w0": np.array([[2.0]]), "g.b0": np.array([-5.0])})
    out = mlp_forward(spec, params, "g", ad.constant(np.array([1.0])))
    assert np.allclose(out.data, [-3.0])  # no relu on the output


def test_mlp_batched_matches_loop():
    rng = np.random.default_rng(3)
    spec = MlpSpec(widths=(4, 8, 3))
    params = wrap(init_mlp("f", spec, rng))
    xs = rng.normal(size=(6, 4))
    batched = mlp_forward(spec, params, "f", ad.constant(xs)).data
    for i in range(6):
        row = mlp_forward(spec, params, "f", ad.constant(xs[i])).data
        assert np.allclose(batched[i], row, atol=1e-14)


def test_init_mlp_zero_final():
    rng = np.random.default_rng(1)
    spec = MlpSpec(widths=(3, 5, 2))
    params = init_mlp("f", spec, rng, zero_final=True)
    assert np.all(params["f.w1"] == 0.0)
    assert np.all(params["f.b1"] == 0.0)
    assert np.any(params["f.w0"] != 0.0)


def test_attention_rows_stochastic():
    rng = np.random.default_rng(5)
    spec = AttentionStackSpec(model_width=8, layers=2)
    params = wrap(init_attention("a", spec, token_width=6, rng=rng))
    tokens = rng.normal(size=(7, 6))  # 7 tokens of width 6
    attn = attention_weights(spec, params, "a", ad.constant(tokens))
    assert attn.shape == (7, 7)
    assert np.allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(attn.data >= 0.0)


def test_attention_batched_matches_single():
    rng = np.random.default_rng(6)
    spec = AttentionStackSpec(model_width=4, layers=1)
    params = wrap(init_attention("a", spec, token_width=5, rng=rng))
    tokens = rng.normal(size=(3, 6, 5))
    batched = attention_weights(spec, params, "a", ad.constant(tokens)).data
    for i in range(3):
        single = attention_weights(spec, params, "a", ad.constant(tokens[i])).data
        assert np.allclose(batched[i], single, atol=1e-13)


def test_attention_gradient_fd():
    rng = np.random.default_rng(7)
    spec = AttentionStackSpec(model_width=4, layers=1)
    raw = init_attention("a", spec, token_width=3, rng=rng)
    tokens = rng.normal(size=(4, 3))
    weights = rng.normal(size=(4, 4))

    def loss_fn(params):
        attn = attention_weights(spec, params, "a", ad.constant(tokens))
        return (attn * ad.constant(weights)).sum()

    value, grads = gradient(loss_fn, raw)
    eps = 1e-6
    for name in ("a.0.wq", "a.in.w", "a.0.ff.w0"):
        flat = raw[name].ravel()
        for idx in range(0, flat.size, max(1, flat.size // 5)):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = float(loss_fn(wrap(raw)).data)
            flat[idx] = orig - eps
            lo = float(loss_fn(wrap(raw)).data)
            flat[idx] = orig
            fd = (hi - lo) / (2 * eps)
            assert np.isclose(grads[name].ravel()[idx], fd, rtol=1e-5, atol=1e-7)


def test_gradient_fills_untouched_params():
    rng = np.random.default_rng(8)
    spec = MlpSpec(widths=(2, 2))
    raw = init_mlp("f", spec, rng)
    raw["unused"] = np.ones(4)

    def loss_fn(params):
        return mlp_forward(spec, params, "f", ad.constant(np.ones(2))).sum()

    _, grads = gradient(loss_fn, raw)
    assert np.all(grads["unused"] == 0.0)
    assert grads["unused"].shape == (4,)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3))
def test_attention_rows_property(tokens_n, layers):
    rng = np.random.default_rng(tokens_n * 10 + layers)
    spec = AttentionStackSpec(model_width=4, layers=layers)
    params = wrap(init_attention("a", spec, token_width=4, rng=rng))
    tokens = rng.normal(size=(tokens_n, 4)) * 3
    attn = attention_weights(spec, params, "a", ad.constant(tokens))
    assert np.allclose(attn.data.sum(axis=-1), 1.0, atol=1e-9)


def test_multi_head_rejected():
    with pytest.raises(ValueError):
        AttentionStackSpec(model_width=8, layers=1, heads=2)


def test_bad_mlp_widths():
    with pytest.raises(ValueError):
        MlpSpec(widths=(3,))
    with pytest.raises(ValueError):
        MlpSpec(widths=(3, 0, 1))
