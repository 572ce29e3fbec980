import io
import json

import numpy as np
import pytest

from neogat import autodiff as ad
from neogat.autodiff import Tensor
from neogat.gradcheck import numeric_grad
from neogat.metrics import evaluate_predictions
from neogat.model import Model, ModelConfig
from neogat.synth import synthetic_epochs
from neogat.train import Adam, FocalLossConfig, TrainConfig, TrainingDivergedError, TrainingError, focal_bce, train_loop


def focal(p, y, **kw):
    return float(focal_bce(Tensor(np.asarray(p, dtype=np.float64)), y, **kw).data)


def test_focal_closed_forms():
    assert focal([0.99], [1]) == pytest.approx(0.4 * 0.01**2 * -np.log(0.99), rel=1e-9)
    assert focal([0.99], [1]) == pytest.approx(4.02e-7, rel=1e-2)
    assert focal([0.5], [1]) == pytest.approx(0.4 * 0.25 * np.log(2), rel=1e-12)
    assert round(focal([0.5], [1]), 4) == 0.0693


def test_focal_gamma_zero_is_half_bce():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.01, 0.99, 50)
    y = rng.integers(0, 2, 50)
    bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert focal(p, y, gamma=0.0, alpha=0.5) == pytest.approx(0.5 * bce, rel=1e-12)


def test_focal_clips_extremes():
    assert np.isfinite(focal([0.0, 1.0], [1, 0]))


def test_focal_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = rng.uniform(0.02, 0.98, 1)
        y = rng.integers(0, 2, 1)
        t = Tensor(p.copy(), requires_grad=True)
        (g,) = ad.grad(focal_bce(t, y), [t])
        num = numeric_grad(lambda: focal(p, y), p, h=1e-6)
        assert abs(g[0] - num[0]) / max(abs(num[0]), 1e-12) < 1e-6


def test_focal_rejects_bad_labels():
    with pytest.raises(ValueError):
        focal([0.3], [2])
    with pytest.raises(ValueError):
        FocalLossConfig(gamma=-1)
    with pytest.raises(ValueError):
        FocalLossConfig(alpha=1.0)


def test_adam_zero_gradient_keeps_parameters():
    w = {"x": np.array([1.0, -2.0])}
    Adam().step(w, {"x": np.zeros(2)})
    np.testing.assert_array_equal(w["x"], [1.0, -2.0])


def test_adam_first_step():
    w = {"x": np.array([0.0])}
    Adam(lr=0.002).step(w, {"x": np.array([1.0])})
    assert w["x"][0] == pytest.approx(-0.002 / (1 + 1e-8), rel=1e-12)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step({"x": np.zeros(2)}, {"x": np.zeros(3)})


def test_l2_only_moves_decayed_weights():
    w = {"kernel": np.array([1.0, -1.0]), "bias": np.array([1.0, -1.0])}
    opt = Adam(lr=0.01, l2=1e-4, decay={"kernel"})
    for _ in range(10):
        opt.step(w, {"kernel": np.zeros(2), "bias": np.zeros(2)})
    assert np.all(np.abs(w["kernel"]) < 1) and np.all(np.sign(w["kernel"]) == [1, -1])
    np.testing.assert_array_equal(w["bias"], [1.0, -1.0])


def test_decay_set_covers_kernels_only():
    m = Model()
    assert "gat1.W" in m.decay and "head.dense1.weight" in m.decay and "block2.conv_a.weight" in m.decay
    assert not any(n.endswith((".bias", ".gamma", ".beta")) for n in m.decay)


@pytest.fixture(scope="module")
def toy():
    return synthetic_epochs(64, seed=0, white=True)


@pytest.fixture(scope="module")
def toy_run(toy):
    x, y = toy
    idx = np.arange(len(y))
    log = io.StringIO()
    model, manifest = train_loop(x, y, idx, None, cfg=TrainConfig(epochs=20, patience=0, seed=0), log_stream=log)
    return model, manifest, log.getvalue()


def test_toy_overfit(toy, toy_run):
    x, y = toy
    model, _, _ = toy_run
    assert evaluate_predictions(model.predict_proba(x), y)["accuracy"] >= 0.95


def test_toy_loss_trend(toy_run):
    losses = [h["loss"] for h in toy_run[1]["history"]]
    assert len(losses) == 20
    assert np.mean(losses[:5]) > np.mean(losses[-5:])


def test_manifest_and_log(toy_run):
    _, manifest, log = toy_run
    lines = [json.loads(line) for line in log.splitlines()]
    assert [r["epoch"] for r in lines] == list(range(1, 21))
    assert manifest["seed"] == 0 and len(manifest["config_hash"]) == 64
    assert manifest["n_train"] == 64 and manifest["epochs_run"] == 20


def test_zero_learning_rate_freezes_parameters(toy):
    x, y = toy
    init = Model(ModelConfig(seed=2))
    before = {n: t.data.copy() for n, t in init.params.items()}
    model, _ = train_loop(x[:16], y[:16], np.arange(16), cfg=TrainConfig(lr=0.0, epochs=1, seed=2), model=init)
    for n, t in model.params.items():
        np.testing.assert_array_equal(t.data, before[n])


def test_training_is_deterministic(toy):
    x, y = toy
    runs = [train_loop(x[:16], y[:16], np.arange(16), cfg=TrainConfig(epochs=1, batch_size=8, seed=9))[0] for _ in range(2)]
    for n in runs[0].params.names():
        assert runs[0].params[n].data.tobytes() == runs[1].params[n].data.tobytes()


def test_empty_split(toy):
    x, y = toy
    with pytest.raises(TrainingError):
        train_loop(x, y, [], cfg=TrainConfig(epochs=1))


def test_nan_loss_aborts(toy):
    x, y = toy
    bad = x[:8].copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError):
        train_loop(bad, y[:8], np.arange(8), cfg=TrainConfig(epochs=1))
