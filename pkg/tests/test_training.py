"""Objective, optimizer, training loop, checkpoints, ensembling."""

import numpy as np
import pytest

from knf.data import WindowSample
from knf.errors import FormatError
from knf.measurements import dictionary_from_counts
from knf.model import KnfConfig, forecast, forward_call, init_params
from knf.nets import AttentionStackSpec, MlpSpec, wrap
from knf.training import (
    AdamState,
    TrainConfig,
    batch_loss,
    clip_gradients,
    ensemble_forecast,
    load_checkpoint,
    loss,
    optimizer_step,
    save_checkpoint,
    train,
)

RNG = np.random.default_rng(21)


def tiny_config(spc=1, h=2):
    d, k, q = 2, 2, 6
    spec = dictionary_from_counts(d=d, k=k, poly_order=2, exp_count=0, sin_count=1)
    return KnfConfig(
        d=d,
        k=k,
        q=q,
        h=h,
        spec=spec,
        encoder=MlpSpec(widths=(d * k, 6, spec.n * d * k)),
        decoder=MlpSpec(widths=(spec.m, 6, d * k)),
        attention=AttentionStackSpec(model_width=4, layers=1),
        feedback=MlpSpec(widths=(d * q, 6, spec.m)),
        segments_per_call=spc,
        revin=False,
    )


def random_windows(config, count, seed=0):
    rng = np.random.default_rng(seed)
    return [
        WindowSample(
            lookback=rng.normal(size=(config.d, config.q)) * 0.5,
            target=rng.normal(size=(config.d, config.h)) * 0.5,
            source_id=f"s{i}",
            start=0,
        )
        for i in range(count)
    ]


# --------------------------------------------------------------------- loss


def test_loss_composition_oracle():
    config = tiny_config(spc=2, h=4)
    params = init_params(config, np.random.default_rng(1))
    lookback = RNG.normal(size=(config.d, config.q))
    target = RNG.normal(size=(config.d, config.h))
    breakdown = loss(config, params, lookback, target)
    out = forward_call(config, wrap(params), lookback)
    k = config.k
    rec = np.mean((out["recon"].data[0] - lookback) ** 2)
    back = np.mean((out["back"].data[0, :, k:] - lookback[:, k:]) ** 2)
    forw = np.mean((out["forw"].data[0] - target) ** 2)
    assert np.isclose(breakdown.rec, rec, atol=1e-12)
    assert np.isclose(breakdown.back, back, atol=1e-12)
    assert np.isclose(breakdown.forw, forw, atol=1e-12)
    assert np.isclose(breakdown.total, rec + back + forw, atol=1e-12)


def test_forecast_term_stops_at_horizon():
    # segments_per_call * k overshoots h: only the first h steps are scored
    config = tiny_config(spc=3, h=2)
    params = init_params(config, np.random.default_rng(2))
    lookback = RNG.normal(size=(config.d, config.q))
    target = RNG.normal(size=(config.d, config.h))
    breakdown = loss(config, params, lookback, target)
    out = forward_call(config, wrap(params), lookback)
    forw = np.mean((out["forw"].data[0, :, :2] - target) ** 2)
    assert np.isclose(breakdown.forw, forw, atol=1e-12)


def test_batch_loss_total_is_sum_of_terms():
    config = tiny_config()
    params = wrap(init_params(config, np.random.default_rng(3)))
    samples = random_windows(config, 5, seed=4)
    total, breakdown = batch_loss(config, params, samples)
    assert np.isclose(float(total.data), breakdown.total, atol=1e-12)


# -------------------------------------------------------------------- optim


def test_adam_first_step_is_signed_lr():
    state = AdamState()
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.3, -0.7, 0.0])}
    ok = optimizer_step(state, params, grads, lr=0.01)
    assert ok
    # bias-corrected first step moves each coordinate by lr * sign(g)
    assert np.allclose(params["w"], [1.0 - 0.01, -2.0 + 0.01, 3.0], atol=1e-6)
    assert state.t == 1


def test_clip_gradients_exact_scale():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}  # norm 5
    clipped = clip_gradients(grads, 2.5)
    assert np.allclose(clipped["a"], 1.5)
    assert np.allclose(clipped["b"], 2.0)
    untouched = clip_gradients(grads, 10.0)
    assert untouched is grads


def test_nonfinite_gradients_skip_step():
    state = AdamState()
    params = {"w": np.array([1.0])}
    ok = optimizer_step(state, params, {"w": np.array([np.nan])}, lr=0.1)
    assert not ok
    assert params["w"][0] == 1.0
    assert state.t == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=1.0)
    with pytest.raises(ValueError):
        TrainConfig(val_metric="mase")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


# -------------------------------------------------------------------- train


def test_train_deterministic_per_seed():
    config = tiny_config()
    tc = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=2, seed=7, patience=None)
    windows = random_windows(config, 8, seed=5)
    val = random_windows(config, 3, seed=6)
    p1, h1 = train(config, tc, windows, val)
    p2, h2 = train(config, tc, windows, val)
    assert len(h1) == len(h2) == 2
    for key in p1:
        assert np.array_equal(p1[key], p2[key]), key
    # a different seed must change the outcome
    p3, _ = train(config, TrainConfig(batch_size=4, epochs=2, seed=8, patience=None),
                  windows, val)
    assert any(not np.array_equal(p1[k], p3[k]) for k in p1)


def test_train_improves_loss():
    config = tiny_config()
    tc = TrainConfig(learning_rate=3e-3, batch_size=8, epochs=8, seed=0, patience=None)
    windows = random_windows(config, 16, seed=9)
    _, history = train(config, tc, windows)
    assert history[-1]["total"] < history[0]["total"]


def test_train_keeps_best_validation_params():
    config = tiny_config()
    tc = TrainConfig(learning_rate=1e-3, batch_size=4, epochs=3, seed=1, patience=None)
    windows = random_windows(config, 8, seed=10)
    val = random_windows(config, 4, seed=11)
    best, history = train(config, tc, windows, val)
    best_epoch = int(np.argmin([row["val"] for row in history]))
    # retrain for exactly best_epoch+1 epochs: same shuffles, same params
    tc2 = TrainConfig(
        learning_rate=1e-3, batch_size=4, epochs=best_epoch + 1, seed=1, patience=None
    )
    replay, _ = train(config, tc2, windows, val)
    for key in best:
        assert np.array_equal(best[key], replay[key]), key


def test_train_empty_windows():
    config = tiny_config()
    with pytest.raises(ValueError):
        train(config, TrainConfig(epochs=1), [])


# -------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    config = tiny_config()
    params = init_params(config, np.random.default_rng(12))
    path = tmp_path / "model.knf"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for key in params:
        assert loaded[key].shape == params[key].shape
        assert np.array_equal(loaded[key], params[key]), key


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.knf"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    params = {"w": np.arange(6.0).reshape(2, 3)}
    path = tmp_path / "model.knf"
    save_checkpoint(params, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="truncated at offset"):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path):
    params = {"w": np.arange(3.0)}
    path = tmp_path / "model.knf"
    save_checkpoint(params, path)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)


# ---------------------------------------------------------------- ensemble


def test_ensemble_mean_median_oracle():
    config = tiny_config()
    members = [init_params(config, np.random.default_rng(s)) for s in (1, 2, 3)]
    lookback = RNG.normal(size=(config.d, config.q)) * 0.3
    singles = np.stack([forecast(config, m, lookback)[0] for m in members])
    mean = ensemble_forecast(members, config, lookback, aggregate="mean")
    med = ensemble_forecast(members, config, lookback, aggregate="median")
    assert np.allclose(mean, singles.mean(axis=0), atol=1e-12)
    assert np.allclose(med, np.median(singles, axis=0), atol=1e-12)


def test_ensemble_rejects_mismatched_members():
    config = tiny_config()
    a = init_params(config, np.random.default_rng(1))
    b = init_params(config, np.random.default_rng(2))
    del b["global_op"]
    with pytest.raises(ValueError, match="mismatched"):
        ensemble_forecast([a, b], config, np.zeros((config.d, config.q)))
    with pytest.raises(ValueError):
        ensemble_forecast([], config, np.zeros((config.d, config.q)))
    with pytest.raises(ValueError):
        ensemble_forecast([a], config, np.zeros((config.d, config.q)), aggregate="max")
