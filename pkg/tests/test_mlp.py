import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from teinfluence.data import InputEncoding, MaskSpec, Trajectory, WindowConfig, extract_windows
from teinfluence.errors import CheckpointError, InvalidArgumentError, InvalidStateError, TrainingDivergedError
from teinfluence.mlp import (
    Adam,
    GaussianMLP,
    GaussianPrediction,
    TrainConfig,
    backward,
    checkpoint_text,
    fit_arrays,
    forward,
    load_checkpoint,
    model_encoding,
    nll_loss,
    save_checkpoint,
    softplus,
    split_train_validation,
    train,
)


def rel_err(a, b, floor=1e-6):
    # components that are zero up to rounding are compared on an absolute scale
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_model(rng, n_in=6, hidden=(32, 16)):
    model = GaussianMLP.initialize((n_in, *hidden, 2), rng)
    # random biases too: zero biases behind a dead layer sit exactly on a ReLU kink
    for _, b in model.layers:
        b[...] = rng.uniform(-0.5, 0.5, size=b.shape)
    return model


def constant_target_samples(T, c, tau, seed):
    rng = np.random.default_rng(seed)
    obs = np.clip(c + rng.normal(0, tau, size=(T, 1)), 0, 1)
    act = rng.random((T, 2))
    return extract_windows(Trajectory(10.0, obs, act), WindowConfig())


# --- forward and loss -----------------------------------------------------------


@pytest.mark.parametrize(
    "mu, sigma, target, expected",
    [(0.0, 1.0, 0.0, 0.9189385), (0.0, 1.0, 1.0, 1.4189385), (2.0, 0.5, 2.0, 0.2257913)],
)
def test_nll_closed_form(mu, sigma, target, expected):
    assert nll_loss(GaussianPrediction(mu, sigma), target) == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_nll_rejects_nonpositive_std(sigma):
    with pytest.raises(InvalidStateError):
        nll_loss(GaussianPrediction(0.0, sigma), 0.0)


def test_zero_final_layer_gives_softplus0():
    model = random_model(np.random.default_rng(0))
    W, b = model.layers[-1]
    W[...] = 0
    b[...] = 0
    pred = forward(model, np.random.default_rng(1).random(6))
    assert pred.mean == 0.0
    assert pred.std == math.log(2.0) + model.sigma_min


def test_forward_deterministic_and_dimension_checked():
    model = random_model(np.random.default_rng(0))
    x = np.random.default_rng(2).random(6)
    assert forward(model, x) == forward(model, x.copy())
    with pytest.raises(InvalidArgumentError):
        forward(model, np.zeros(5))


@given(st.floats(-800, 800))
def test_std_never_below_floor(raw):
    model = GaussianMLP((1, 2), sigma_min=1e-4)
    W, b = model.layers[0]
    b[1] = raw
    _, std = model.predict(np.zeros((1, 1)))
    assert std[0] >= 1e-4 and np.isfinite(std[0])


def test_softplus_stable():
    assert softplus(np.array([-1000.0]))[0] == 0.0
    assert softplus(np.array([1000.0]))[0] == 1000.0


# --- gradients -----------------------------------------------------------------


def finite_difference(model, x, y, h=1e-5):
    g = np.empty_like(model.params)
    X, Y = x[None, :], np.array([y])
    for k in range(model.params.size):
        old = model.params[k]
        model.params[k] = old + h
        up, _ = model.loss_and_grad(X, Y)
        model.params[k] = old - h
        down, _ = model.loss_and_grad(X, Y)
        model.params[k] = old
        g[k] = (up - down) / (2 * h)
    return g


def test_gradient_matches_finite_differences_on_100_triples():
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(100):
        n_in = int(rng.integers(2, 7))
        model = random_model(rng, n_in, (8, 4))
        x = rng.random(n_in)
        y = float(rng.normal())
        analytic = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in backward(model, x, y)])
        numeric = finite_difference(model, x, y)
        worst = max(worst, float(rel_err(analytic, numeric).max()))
    assert worst < 1e-4


def test_gradient_default_architecture():
    rng = np.random.default_rng(5)
    model = random_model(rng, 12)
    x, y = rng.random(12), 0.3
    _, analytic = model.loss_and_grad(x[None, :], np.array([y]))
    assert rel_err(analytic, finite_difference(model, x, y)).max() < 1e-4


def test_mean_head_gradient_zero_at_target():
    rng = np.random.default_rng(7)
    model = random_model(rng)
    x = rng.random(6)
    mu = forward(model, x).mean
    grads = backward(model, x, mu)
    gW, gb = grads[-1]
    assert np.all(gW[0] == 0.0) and gb[0] == 0.0


def test_batch_gradient_is_mean_of_per_sample():
    rng = np.random.default_rng(8)
    model = random_model(rng)
    X = rng.random((9, 6))
    y = rng.normal(size=9)
    _, g = model.loss_and_grad(X, y)
    per = np.mean([model.loss_and_grad(X[i : i + 1], y[i : i + 1])[1] for i in range(9)], axis=0)
    assert np.abs(g - per).max() <= 1e-12


# --- training -------------------------------------------------------------------


def test_train_constant_target_reaches_noise_entropy():
    c, tau = 0.5, 0.05
    samples = constant_target_samples(1500, c, tau, 0)
    model = train(samples, MaskSpec.from_window(WindowConfig()), TrainConfig(epochs=50, rng_seed=0))
    noise_entropy = 0.5 * (1 + math.log(2 * math.pi)) + math.log(tau)
    best = model.metadata["training"]["best_validation_nll"]
    assert abs(best - noise_entropy) <= 0.1 * abs(noise_entropy)
    enc = model_encoding(model, 20, 1, 2)
    mean, std = model.predict(enc.encode(samples[-100:]))
    assert abs(mean.mean() - c) < 0.1 * c
    assert abs(std.mean() - tau) < 0.1 * tau


def test_training_loss_decreases_and_is_deterministic():
    samples = constant_target_samples(600, 0.3, 0.05, 1)
    mask = MaskSpec.from_window(WindowConfig())
    cfg = TrainConfig(epochs=12, rng_seed=4, patience=0)
    a = train(samples, mask, cfg)
    b = train(samples, mask, cfg)
    hist = a.metadata["training"]["train_nll"]
    assert hist[10] < hist[0]
    assert np.array_equal(a.params, b.params)
    assert checkpoint_text(a) == checkpoint_text(b)


def test_train_without_mask_exposure():
    samples = constant_target_samples(300, 0.3, 0.05, 2)
    model = train(samples, MaskSpec.from_window(WindowConfig()), TrainConfig(epochs=3, mask_probability=0.0))
    assert model.input_size == 80


def test_train_empty():
    with pytest.raises(InvalidArgumentError):
        train([], MaskSpec(()), TrainConfig())


def test_divergence_names_epoch():
    enc = InputEncoding(1, 1, 1, False)
    X = np.array([[0.0, 0.0], [1.0, 1.0]] * 10)
    y = np.array([0.0, np.nan] * 10)
    with pytest.raises(TrainingDivergedError) as info:
        fit_arrays(X, y, X[:0], y[:0], enc, MaskSpec((0,)), TrainConfig(epochs=3))
    assert info.value.epoch == 0
    assert "epoch 0" in str(info.value)


@pytest.mark.parametrize(
    "kwargs",
    [dict(epochs=0), dict(learning_rate=0), dict(mask_probability=1.5), dict(validation_fraction=1.0), dict(ema_decay=1.0)],
)
def test_train_config_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        TrainConfig(**kwargs)


@given(st.integers(1, 10_000), st.floats(0, 0.99))
def test_split_keeps_tail(n, fraction):
    cut = split_train_validation(n, fraction)
    assert 0 < cut <= n
    assert n - cut == math.floor(n * fraction)


def test_adam_first_step_moves_by_lr():
    p = np.zeros(3)
    Adam(3, 0.01).step(p, np.array([1.0, -2.0, 0.5]))
    assert np.allclose(p, [-0.01, 0.01, -0.01], atol=1e-9)


# --- checkpoints ----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = random_model(np.random.default_rng(3))
    model.metadata["note"] = "x"
    path = tmp_path / "m.json"
    save_checkpoint(path, model)
    back = load_checkpoint(path, expected_input_size=6)
    assert np.array_equal(back.params, model.params)
    assert back.metadata == {"note": "x"}


def test_checkpoint_input_size_mismatch(tmp_path):
    path = tmp_path / "m.json"
    save_checkpoint(path, random_model(np.random.default_rng(3)))
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_input_size=60)


@pytest.mark.parametrize("text", ["not json", "[1, 2]", '{"format": "other"}', '{"format": "teinfluence-gaussian-mlp", "version": 1}'])
def test_corrupted_checkpoint(tmp_path, text):
    path = tmp_path / "m.json"
    path.write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_encoding_inferred_from_width():
    model = GaussianMLP((60, 4, 2))
    assert model_encoding(model, 20, 1, 2).mask_indicator is False
    with pytest.raises(CheckpointError):
        model_encoding(GaussianMLP((61, 4, 2)), 20, 1, 2)
