import numpy as np
import pytest

from app.errors import CheckpointError, ConfigError, DatasetError, NonFiniteLossError, ShapeError
from app.nn import training
from app.nn.attention import AttentionParams, multi_head_attention
from app.nn.checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from app.nn.model import (ModelConfig, ModelState, attdicnn_forward, evaluate_loss, forward, g2a_head,
                          init_bound, init_state, loss_and_grad, parameter_specs, parameter_summary, predict_proba)
from app.nn.optim import adam_step
from app.nn.training import EarlyStopping, TrainConfig, train, write_history_csv
from app.sampling.sampling import ImageDataset
from conftest import relative_error, tiny_model_config


def _pattern_dataset(n_per_class, side=12, n_classes=3, seed=0):
    """Class c lights up horizontal band c on a noisy background."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    band = side // n_classes
    for c in range(n_classes):
        for _ in range(n_per_class):
            image = rng.uniform(0.0, 0.2, size=(side, side))
            image[c * band:(c + 1) * band] += 0.8
            images.append(image)
            labels.append(c)
    return ImageDataset(np.array(images), np.array(labels), [f"c{c}" for c in range(n_classes)])


def test_default_network_size():
    summary = parameter_summary(ModelConfig())
    assert summary["total"] == 1_528_361
    assert 1_198_500 <= summary["total"] <= 1_621_500
    assert summary["total"] == summary["LSFE"] + summary["S2TLR"] + summary["G2A"]
    assert ModelConfig().feature_shapes() == ([63, 31, 14, 6], 4608)


def test_default_network_forward_shape():
    state = init_state(ModelConfig())
    logits, _ = forward(state, np.random.default_rng(0).uniform(size=(2, 128, 128)))
    assert logits.shape == (2, 5)
    assert logits.dtype == np.float32
    assert state.parameter_count == parameter_summary(state)["total"]


def test_infeasible_configs_are_rejected():
    with pytest.raises(ConfigError):
        init_state(ModelConfig(input_side=4))
    assert ModelConfig(heads=200, lsfe_fc=(8, 8)).validate()
    assert ModelConfig(dropout=1.0).validate()


def test_init_is_seeded_and_bounded(tiny_config):
    state = init_state(tiny_config)
    for name, _, fans in parameter_specs(tiny_config):
        tensor = state.params[name]
        if fans is None:
            assert not tensor.any(), name
        else:
            assert np.abs(tensor).max() <= init_bound(fans), name
    again = init_state(tiny_config)
    for name in state.params:
        np.testing.assert_array_equal(state.params[name], again.params[name])
    other = init_state(tiny_model_config(seed=14))
    assert not np.array_equal(state.params["lsfe.fc1.weight"], other.params["lsfe.fc1.weight"])


def test_head_averages_local_and_global_attention(tiny_config):
    state = init_state(tiny_config)
    _, caches = forward(state, np.random.default_rng(1).uniform(size=(4, 12, 12)))
    token = caches["mha1"][0]
    local, _, _ = multi_head_attention(token, token, AttentionParams.from_mapping(state.params, "s2tlr.mha1."))
    global_, _, _ = multi_head_attention(local, local, AttentionParams.from_mapping(state.params, "s2tlr.mha2."))
    np.testing.assert_allclose(caches["g2a.fc1"][0], ((local + global_) / 2.0)[:, 0, :], atol=1e-12)


def test_swapping_local_and_global_outputs_keeps_the_prediction(tiny_config):
    state = init_state(tiny_config)
    rng = np.random.default_rng(3)
    w_local, w_global = rng.normal(size=(2, 6, 1, tiny_config.d_model))
    logits, _ = g2a_head(state, w_local, w_global)
    swapped, _ = g2a_head(state, w_global, w_local)
    np.testing.assert_array_equal(logits, swapped)
    np.testing.assert_array_equal(np.argmax(logits, axis=1), np.argmax(swapped, axis=1))
    _, caches = g2a_head(state, w_local, w_local)
    np.testing.assert_array_equal(caches["g2a.fc1"][0], w_local[:, 0, :])


def test_full_gradient_matches_central_differences(tiny_config, numeric_gradient):
    state = init_state(tiny_config)
    rng = np.random.default_rng(2)
    # larger biases keep ReLU pre-activations away from the kink
    for name in state.params:
        if name.endswith("bias") or ".b_" in name:
            state.params[name] = rng.uniform(0.05, 0.2, size=state.params[name].shape)
    images = rng.uniform(size=(3, 12, 12))
    labels = np.array([0, 1, 2])
    _, grads, _ = loss_and_grad(state, images, labels, mode="infer")

    analytic, numeric = [], []
    for name, tensor in state.params.items():
        analytic.append(grads[name].ravel())
        numeric.append(numeric_gradient(lambda: loss_and_grad(state, images, labels, mode="infer")[0], tensor).ravel())
    assert relative_error(np.concatenate(analytic), np.concatenate(numeric)) < 1e-4


def test_single_image_forward_modes():
    state = init_state(tiny_model_config(dropout=0.5))
    image = np.random.default_rng(3).uniform(size=(12, 12))
    infer = attdicnn_forward(image, state)
    np.testing.assert_array_equal(infer, attdicnn_forward(image, state, mode="infer"))
    trained = attdicnn_forward(image, state, mode="train", rng=np.random.default_rng(0))
    assert trained.shape == infer.shape == (3,)
    with pytest.raises(ConfigError):
        attdicnn_forward(image, state, mode="eval")


def test_wrong_input_and_labels_are_rejected(tiny_config):
    state = init_state(tiny_config)
    with pytest.raises(ShapeError):
        forward(state, np.zeros((1, 10, 10)))
    with pytest.raises(ShapeError):
        loss_and_grad(state, np.zeros((1, 12, 12)), [3])


def test_non_finite_loss_is_reported(tiny_config):
    state = init_state(tiny_config)
    state.params["g2a.out.weight"][:] = np.nan
    with pytest.raises(NonFiniteLossError) as info:
        loss_and_grad(state, np.zeros((2, 12, 12)), [0, 1], batch_index=7)
    assert info.value.batch_index == 7


def test_predict_proba_rows_sum_to_one(tiny_config):
    state = init_state(tiny_config)
    scores = predict_proba(state, np.random.default_rng(4).uniform(size=(5, 12, 12)), batch_size=2)
    assert scores.shape == (5, 3)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0)
    loss, accuracy, _ = evaluate_loss(state, np.zeros((2, 12, 12)), [0, 0])
    assert loss > 0 and 0.0 <= accuracy <= 1.0


def test_adam_first_step_moves_by_learning_rate(tiny_config):
    state = init_state(tiny_config)
    rng = np.random.default_rng(5)
    grads = {name: rng.normal(size=p.shape) for name, p in state.params.items()}
    grads["g2a.out.bias"] = np.zeros_like(state.params["g2a.out.bias"])
    updated = adam_step(state, grads, lr=0.01)

    assert updated.step == 1 and state.step == 0
    delta = updated.params["lsfe.fc1.weight"] - state.params["lsfe.fc1.weight"]
    np.testing.assert_allclose(delta, -0.01 * np.sign(grads["lsfe.fc1.weight"]), atol=1e-5)
    np.testing.assert_array_equal(updated.params["g2a.out.bias"], state.params["g2a.out.bias"])
    np.testing.assert_array_equal(adam_step(state, grads, lr=0.01).params["lsfe.fc1.weight"],
                                  updated.params["lsfe.fc1.weight"])
    with pytest.raises(ShapeError):
        adam_step(state, {**grads, "g2a.out.bias": np.zeros(7)})


def test_early_stopping_waits_for_patience_epochs():
    stopper = EarlyStopping(patience=15)
    state = ModelState(config=ModelConfig(), params={})
    assert not stopper.update(1, 0.5, state)
    # ties do not count as improvement
    stops = [stopper.update(epoch, 0.5, state) for epoch in range(2, 17)]
    assert stops == [False] * 14 + [True]
    assert stopper.best_epoch == 1


def test_training_keeps_best_epoch_weights(tiny_config, monkeypatch):
    accuracies = iter([0.4, 0.7, 0.6, 0.7, 0.5, 0.9])
    seen = []

    def scripted(state, images, labels, batch_size=256):
        seen.append(state.copy())
        return 1.0, next(accuracies), None

    monkeypatch.setattr(training, "evaluate_loss", scripted)
    data = _pattern_dataset(4)
    result = train(data, data, tiny_config, TrainConfig(epochs=10, patience=3, batch_size=4))

    assert result.stopped_early
    assert result.best_epoch == 2 and result.stopped_epoch == 5
    assert [row["val_acc"] for row in result.history] == [0.4, 0.7, 0.6, 0.7, 0.5]
    for name, tensor in result.state.params.items():
        np.testing.assert_array_equal(tensor, seen[1].params[name])


def test_training_is_reproducible(tiny_config, tmp_path):
    data = _pattern_dataset(4)
    config = TrainConfig(epochs=3, patience=5, batch_size=5, seed=21)
    first = train(data, data, tiny_model_config(dropout=0.3), config)
    second = train(data, data, tiny_model_config(dropout=0.3), config)
    assert first.history == second.history
    assert checkpoint_bytes(first.state) == checkpoint_bytes(second.state)
    frame = write_history_csv(first.history, tmp_path / "history.csv").read_text(encoding="utf-8")
    assert frame.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(frame.splitlines()) == 4


def test_training_rejects_mismatched_datasets(tiny_config):
    with pytest.raises(DatasetError):
        train(_pattern_dataset(2, n_classes=2), _pattern_dataset(2, n_classes=2), tiny_config)
    with pytest.raises(ConfigError):
        train(_pattern_dataset(2), _pattern_dataset(2), tiny_config, TrainConfig(lr=0.0))


def test_checkpoint_round_trip(tiny_config, tmp_path):
    state = adam_step(init_state(tiny_config), {n: np.ones_like(p) for n, p in init_state(tiny_config).params.items()})
    path = save_checkpoint(state, tmp_path / "model.bin", class_names=["a", "b", "c"], epoch=4, metric=0.75)
    loaded, metadata = load_checkpoint(path)
    assert list(loaded.params) == list(state.params)
    for name in state.params:
        np.testing.assert_array_equal(loaded.params[name], state.params[name])
        assert loaded.params[name].dtype == state.params[name].dtype
    assert loaded.config == state.config
    assert loaded.step == 1
    assert metadata["class_names"] == ["a", "b", "c"]
    assert metadata["epoch"] == 4 and metadata["metric"] == 0.75
    assert metadata["parameter_count"] == state.parameter_count
    assert checkpoint_bytes(loaded, ["a", "b", "c"], 4, 0.75) == path.read_bytes()


def test_checkpoint_corruption_is_detected(tiny_config, tmp_path):
    state = init_state(tiny_config)
    data = checkpoint_bytes(state)
    for broken in (data[:4], data[:20], data[:-1], data + b"\x00"):
        with pytest.raises(CheckpointError):
            parse_checkpoint(broken)
    mismatched = ModelState(config=tiny_model_config(n_classes=4), params=state.params)
    with pytest.raises(CheckpointError):
        parse_checkpoint(checkpoint_bytes(mismatched))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.bin")
