import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hncnav.errors import ConfigurationError, TrainingDiverged
from hncnav.regressor import (
    HIDDEN,
    THREE_MISSING,
    TWO_MISSING,
    AverageEstimator,
    BeamDataset,
    MissingPattern,
    NetworkEstimator,
    RegressorInput,
    RegressorModel,
    TrainConfig,
    average_batch,
    average_estimate,
    backward,
    build_dataset,
    complete_beams,
    expected_shapes,
    forward,
    load_model,
    model_from_dict,
    model_to_dict,
    mse,
    predict_batch,
    save_model,
    train,
)

PATTERNS = [TWO_MISSING, THREE_MISSING]


def random_input(rng, pattern, scale=1.0):
    return RegressorInput(
        rng.normal(scale=scale, size=(pattern.history, 4)), rng.normal(scale=scale, size=4 - pattern.k)
    )


# ----------------------------------------------------------------- patterns and simple estimators


def test_pattern_properties():
    assert TWO_MISSING.k == 2 and TWO_MISSING.history == 3 and TWO_MISSING.measured == (2, 4)
    assert THREE_MISSING.k == 3 and THREE_MISSING.history == 5 and THREE_MISSING.measured == (2,)
    assert MissingPattern((3, 1)) == TWO_MISSING
    assert TWO_MISSING.label == "missing_13"
    np.testing.assert_array_equal(THREE_MISSING.valid_mask, [False, True, False, False])


@pytest.mark.parametrize("missing", [(1,), (1, 2, 3, 4), (1, 1), (0, 2), (5, 1)])
def test_pattern_rejects(missing):
    with pytest.raises(ValueError):
        MissingPattern(missing)


def test_average_of_constant_history():
    past = np.tile([3.0, 1.0, 5.0, 2.0], (3, 1))
    est = average_estimate(RegressorInput(past, [1.0, 2.0]), TWO_MISSING)
    np.testing.assert_array_equal(est, [3.0, 5.0])


def test_average_lags_a_ramp():
    # beam 1 ramps by 1 per epoch; the three-epoch mean trails the current value by 2
    past = np.column_stack([np.arange(3.0), np.zeros(3), np.zeros(3), np.zeros(3)])
    est = average_estimate(RegressorInput(past, [0.0, 0.0]), TWO_MISSING)
    assert est[0] == pytest.approx(1.0)
    assert 3.0 - est[0] == pytest.approx(2.0)


def test_average_rejects_mismatched_partial():
    with pytest.raises(ValueError):
        average_estimate(RegressorInput(np.zeros((3, 4)), [1.0]), TWO_MISSING)


def test_complete_beams():
    np.testing.assert_array_equal(complete_beams(TWO_MISSING, [2.0, 4.0], [1.0, 3.0]), [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(complete_beams(THREE_MISSING, [2.0], [1.0, 3.0, 4.0]), [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        complete_beams(TWO_MISSING, [2.0], [1.0, 3.0])


def test_regressor_input_validation():
    with pytest.raises(ValueError):
        RegressorInput(np.zeros((3, 3)), [1.0, 2.0])
    with pytest.raises(ValueError):
        RegressorInput(np.zeros((3, 4)), [1.0, 2.0, 3.0])


# ----------------------------------------------------------------- network shapes and forward pass


@pytest.mark.parametrize("pattern, N", [(TWO_MISSING, 3), (THREE_MISSING, 5)])
def test_model_shapes(pattern, N):
    model = RegressorModel.initialize(pattern, seed=1)
    assert model.N == N and model.k == pattern.k
    shapes = {n: p.shape for n, p in model.params().items()}
    assert shapes == expected_shapes(pattern)
    assert shapes["W1"] == (HIDDEN, 4 * N)
    assert shapes["W3"] == (pattern.k, 8)
    assert forward(model, random_input(np.random.default_rng(0), pattern)).shape == (pattern.k,)


def test_model_rejects_wrong_shape():
    params = RegressorModel.initialize(TWO_MISSING).params()
    params["W1"] = np.zeros((HIDDEN, 5))
    with pytest.raises(ConfigurationError):
        RegressorModel(**params, pattern=TWO_MISSING)


def test_forward_rejects_wrong_history():
    model = RegressorModel.initialize(TWO_MISSING)
    with pytest.raises(ValueError):
        forward(model, RegressorInput(np.zeros((5, 4)), [0.0, 0.0]))


def naive_forward(model, past, partial):
    """Loop-by-loop reference of the network (independent of the vectorised code)."""
    N = past.shape[0]
    n_out = (N - 2) // 2 + 1
    channels = model.conv_w.shape[0]
    Z = np.zeros((channels, n_out))
    for o in range(channels):
        for pos in range(n_out):
            acc = model.conv_b[o]
            for c in range(4):
                for j in range(2):
                    acc += model.conv_w[o, c, j] * past[2 * pos + j, c]
            Z[o, pos] = np.tanh(acc)
    flat = [Z[o, pos] for o in range(channels) for pos in range(n_out)]
    Y = [past[i // 4, i % 4] for i in range(4 * N)]
    for i, z in enumerate(flat):
        Y[i] += z
    h1 = [max(0.0, model.b1[r] + sum(model.W1[r, i] * Y[i] for i in range(4 * N))) for r in range(HIDDEN)]
    L = [max(0.0, model.b2[r] + sum(model.W2[r, i] * h1[i] for i in range(HIDDEN))) for r in range(model.k)]
    U = L + list(partial) + [past[:, c].mean() for c in range(4)]
    out = [model.b3[r] + sum(model.W3[r, i] * U[i] for i in range(8)) for r in range(model.k)]
    if model.output_activation == "relu":
        out = [max(0.0, o) for o in out]
    return np.array(out)


@pytest.mark.parametrize("pattern", PATTERNS)
@pytest.mark.parametrize("activation", ["linear", "relu"])
def test_forward_matches_naive_loops(pattern, activation):
    rng = np.random.default_rng(2)
    for seed in range(5):
        model = RegressorModel.initialize(pattern, seed=seed, output_activation=activation)
        inp = random_input(rng, pattern)
        np.testing.assert_allclose(forward(model, inp), naive_forward(model, inp.past, inp.partial), atol=1e-12)


def test_batch_forward_matches_single():
    rng = np.random.default_rng(3)
    model = RegressorModel.initialize(THREE_MISSING, seed=3)
    inputs = [random_input(rng, THREE_MISSING) for _ in range(6)]
    data = BeamDataset.from_pairs([(inp, np.zeros(3)) for inp in inputs])
    batch = predict_batch(model, data)
    for i, inp in enumerate(inputs):
        np.testing.assert_allclose(batch[i], forward(model, inp), atol=1e-14)


# ----------------------------------------------------------------- gradients


def loss_at(model, inp, target):
    return mse(target, forward(model, inp))


def fd_gradient(model, inp, target, name, h=1e-6):
    param = getattr(model, name)
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        keep = param[idx]
        param[idx] = keep + h
        up = loss_at(model, inp, target)
        param[idx] = keep - h
        down = loss_at(model, inp, target)
        param[idx] = keep
        grad[idx] = (up - down) / (2 * h)
    return grad


def test_zero_loss_gives_zero_gradient():
    rng = np.random.default_rng(4)
    model = RegressorModel.initialize(TWO_MISSING, seed=4)
    inp = random_input(rng, TWO_MISSING)
    grads = backward(model, inp, forward(model, inp))
    assert all(np.all(g == 0.0) for g in grads.values())


@pytest.mark.parametrize("pattern", PATTERNS)
def test_gradients_match_finite_differences(pattern):
    rng = np.random.default_rng(5)
    model = RegressorModel.initialize(pattern, seed=5)
    inp = random_input(rng, pattern)
    target = rng.normal(size=pattern.k)
    grads = backward(model, inp, target)
    for name in model.params():
        np.testing.assert_allclose(grads[name], fd_gradient(model, inp, target, name), rtol=1e-5, atol=1e-8)


def test_relu_output_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    model = RegressorModel.initialize(TWO_MISSING, seed=6, output_activation="relu")
    model.b3[:] = 5.0  # keep the output unit active
    inp = random_input(rng, TWO_MISSING)
    target = rng.normal(size=2)
    grads = backward(model, inp, target)
    for name in model.params():
        np.testing.assert_allclose(grads[name], fd_gradient(model, inp, target, name), rtol=1e-5, atol=1e-8)


def test_conv_output_fills_only_leading_slots():
    # k=2: 6 channels x 1 position = 6 of the 12 slots, the rest is residual only
    rng = np.random.default_rng(7)
    model = RegressorModel.initialize(TWO_MISSING, seed=7)
    model.W1[:, :6] = 0.0
    inp = random_input(rng, TWO_MISSING)
    grads = backward(model, inp, forward(model, inp) + 1.0)
    assert np.all(grads["conv_w"] == 0.0) and np.all(grads["conv_b"] == 0.0)
    assert np.any(grads["W1"][:, 6:] != 0.0)


# ----------------------------------------------------------------- datasets


def test_build_dataset_windows():
    beams = np.arange(40.0).reshape(10, 4)
    data = build_dataset(beams, TWO_MISSING)
    assert len(data) == 7
    np.testing.assert_array_equal(data.past[0], beams[0:3])
    np.testing.assert_array_equal(data.partial[0], beams[3, [1, 3]])
    np.testing.assert_array_equal(data.target[0], beams[3, [0, 2]])
    np.testing.assert_array_equal(data.past[-1], beams[6:9])
    data3 = build_dataset(beams, THREE_MISSING)
    assert len(data3) == 5
    np.testing.assert_array_equal(data3.target[-1], beams[9, [0, 2, 3]])


def test_build_dataset_short_and_invalid():
    assert len(build_dataset(np.zeros((3, 4)), TWO_MISSING)) == 0
    with pytest.raises(ValueError):
        build_dataset(np.full((10, 4), np.nan), TWO_MISSING)
    with pytest.raises(ValueError):
        build_dataset(np.zeros((10, 3)), TWO_MISSING)


def test_dataset_concat():
    a = build_dataset(np.arange(40.0).reshape(10, 4), TWO_MISSING)
    b = a.concat(a)
    assert len(b) == 14
    np.testing.assert_array_equal(b.target[7:], a.target)


@settings(max_examples=30, deadline=None)
@given(st.integers(8, 40), st.sampled_from(PATTERNS))
def test_dataset_size_property(S, pattern):
    beams = np.random.default_rng(S).normal(size=(S, 4))
    data = build_dataset(beams, pattern)
    assert len(data) == S - pattern.history
    np.testing.assert_allclose(average_batch(pattern, data)[0], beams[: pattern.history, pattern.missing_idx].mean(0))


# ----------------------------------------------------------------- training


def small_dataset(pattern, n=200, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n + pattern.history) * 0.1
    beams = np.column_stack([np.sin(t + p) for p in range(4)]) + 0.01 * rng.normal(size=(t.size, 4))
    return build_dataset(beams, pattern)


def test_training_is_deterministic():
    data = small_dataset(TWO_MISSING)
    cfg = TrainConfig(epochs=5, seed=3)
    model = RegressorModel.initialize(TWO_MISSING, seed=3)
    a, b = train(model, data, cfg), train(model, data, cfg)
    assert a.losses == b.losses
    for name in model.params():
        np.testing.assert_array_equal(a.model.params()[name], b.model.params()[name])


def test_training_reduces_loss_and_leaves_input_model():
    data = small_dataset(THREE_MISSING)
    model = RegressorModel.initialize(THREE_MISSING, seed=0)
    before = model.W1.copy()
    result = train(model, data, TrainConfig(epochs=20))
    assert result.losses[-1] < result.losses[0]
    assert len(result.losses) == 20
    np.testing.assert_array_equal(model.W1, before)


def test_training_rejects_empty_dataset():
    with pytest.raises(ValueError):
        train(RegressorModel.initialize(TWO_MISSING), build_dataset(np.zeros((2, 4)), TWO_MISSING))


def test_training_rejects_mismatched_dataset():
    with pytest.raises(ValueError):
        train(RegressorModel.initialize(THREE_MISSING), small_dataset(TWO_MISSING))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_is_reported():
    data = small_dataset(TWO_MISSING, n=20)
    data.target[0] = 1e300
    with pytest.raises(TrainingDiverged):
        train(RegressorModel.initialize(TWO_MISSING), data, TrainConfig(epochs=2))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_constant_velocity_network_close_to_average():
    # with constant beams plus noise the best predictor is the history mean
    rng = np.random.default_rng(8)
    beams = np.array([0.5, -0.3, -0.5, 0.3]) + 0.042 * rng.normal(size=(1500, 4))
    data = build_dataset(beams, TWO_MISSING)
    model = train(RegressorModel.initialize(TWO_MISSING, seed=8), data, TrainConfig(epochs=15)).model
    test = build_dataset(np.array([0.5, -0.3, -0.5, 0.3]) + 0.042 * rng.normal(size=(500, 4)), TWO_MISSING)
    net = mse(test.target, predict_batch(model, test))
    avg = mse(test.target, average_batch(TWO_MISSING, test))
    assert net <= 1.10 * avg


# ----------------------------------------------------------------- estimators and serialization


def test_estimators():
    past = np.tile([1.0, 2.0, 3.0, 4.0], (3, 1))
    np.testing.assert_array_equal(AverageEstimator(TWO_MISSING).predict(past, [2.0, 4.0]), [1.0, 3.0])
    model = RegressorModel.initialize(TWO_MISSING, seed=1)
    est = NetworkEstimator(model)
    assert est.history == 3
    np.testing.assert_array_equal(est.predict(past, [2.0, 4.0]), forward(model, RegressorInput(past, [2.0, 4.0])))


@pytest.mark.parametrize("pattern", PATTERNS)
def test_model_json_round_trip(pattern, tmp_path):
    model = RegressorModel.initialize(pattern, seed=9, output_activation="relu")
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert back.pattern == pattern and back.output_activation == "relu"
    for name, p in model.params().items():
        np.testing.assert_array_equal(back.params()[name], p)
    doc = json.loads(path.read_text())
    assert doc["k"] == pattern.k and doc["N"] == pattern.history


def test_model_document_validation(tmp_path):
    doc = model_to_dict(RegressorModel.initialize(TWO_MISSING))
    bad_n = dict(doc, N=5)
    with pytest.raises(ConfigurationError):
        model_from_dict(bad_n)
    bad_shape = json.loads(json.dumps(doc))
    bad_shape["shapes"]["W1"] = [16, 20]
    with pytest.raises(ConfigurationError):
        model_from_dict(bad_shape)
    missing = {k: v for k, v in doc.items() if k != "layers"}
    with pytest.raises(ConfigurationError):
        model_from_dict(missing)
    with pytest.raises(ConfigurationError):
        load_model(tmp_path / "nope.json")
