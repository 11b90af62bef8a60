"""Error regressors: training loop, early stopping, gradient check, IO."""

import numpy as np
import pytest

from conftest import RIDGE_HYPER, synthetic_dataset
from pegservo.errors import (EmptyDataset, InvalidConfig, LeakedInsertion,
                             NotDifferentiableKind, ShapeMismatch)
from pegservo.geometry import denormalize_error
from pegservo.perception import (Dataset, OracleModel, RidgeModel, Sample,
                                 TrainConfig, evaluate, gradient_check,
                                 init_mlp, load_dataset, load_model, predict,
                                 save_dataset, save_model, train)
from pegservo.sim import Observation


def _split(ds, n_train_ins):
    ids = sorted(ds.grouping)
    return ds.subset(ids[:n_train_ins]), ds.subset(ids[n_train_ins:])


# ---------------------------------------------------------------- oracle


def test_oracle_noiseless_returns_truth():
    ds = synthetic_dataset(3, 10, 4, lambda x, rng: rng.normal())
    model = OracleModel()
    for s in ds.samples:
        assert predict(model, s.observation) == s.observation.truth_y
    assert evaluate(model, ds)["mse"] == 0.0


def test_oracle_noise_needs_rng():
    ds = synthetic_dataset(1, 1, 4, lambda x, rng: 0.0)
    with pytest.raises(InvalidConfig):
        predict(OracleModel(noise_sigma=0.1), ds.samples[0].observation)


def test_oracle_noise_mse_matches_sigma_squared():
    sigma = 0.013
    ds = synthetic_dataset(10, 1000, 2, lambda x, rng: rng.normal())
    rng = np.random.default_rng(5)
    res = evaluate(OracleModel(noise_sigma=sigma), ds, rng=rng)
    assert res["mse"] == pytest.approx(sigma ** 2, rel=0.10)


# ---------------------------------------------------------------- ridge


def test_constant_model_prediction_and_mse():
    ds = synthetic_dataset(2, 50, 4, lambda x, rng: rng.normal())
    spec_model, _ = train(*_split(ds, 1), TrainConfig(kind="ridge"))
    zero = RidgeModel(weights=np.zeros_like(spec_model.weights), bias=0.01,
                      lam=1.0, spec=spec_model.spec)
    assert predict(zero, ds.samples[0].observation) == pytest.approx(0.01, abs=1e-12)
    zero0 = RidgeModel(weights=np.zeros_like(spec_model.weights), bias=0.0,
                       lam=1.0, spec=spec_model.spec)
    ys = np.array([s.y for s in ds.samples])
    res = evaluate(zero0, ds)
    assert res["mse"] == pytest.approx(float(np.mean(ys ** 2)), abs=1e-9)


def test_all_zero_labels():
    ds = synthetic_dataset(4, 40, 4, lambda x, rng: 0.0)
    model, report = train(*_split(ds, 3), TrainConfig(kind="ridge"))
    val = _split(ds, 3)[1]
    preds = [predict(model, s.observation) for s in val.samples]
    assert np.max(np.abs(preds)) <= 1e-6
    assert report.best_val_loss <= 1e-10


def test_planted_linear_recovery():
    r = 4
    w_true = np.linspace(-0.02, 0.03, r * r)

    def label(x, rng):
        return float(x @ w_true + 0.005)

    ds = synthetic_dataset(12, 30, r, label, seed=3)
    train_ds, val_ds = _split(ds, 10)
    model, report = train(train_ds, val_ds, TrainConfig(kind="ridge",
                                                        ridge_lambda=1e-8))
    assert report.best_val_loss <= 1e-8
    for s in val_ds.samples[:50]:
        assert predict(model, s.observation) == pytest.approx(s.y, abs=1e-5)


def test_ridge_path_early_stop_semantics():
    ds = synthetic_dataset(6, 40, 4, lambda x, rng: float(x[0] + 0.1 * rng.normal()))
    model, report = train(*_split(ds, 5), TrainConfig(kind="ridge"))
    assert report.best_val_loss == pytest.approx(min(report.val_curve), abs=0.0)
    assert report.epochs_run == len(report.val_curve)
    assert report.epochs_run <= 500


def test_trained_ridge_quarter_pixel_accuracy(led_split, led_ridge):
    # quarter-pixel in normalized units = 0.25 / r
    _, val_ds = led_split
    for j, (model, _) in led_ridge.items():
        sub = val_ds.by_camera(j)
        errs = np.array([abs(predict(model, s.observation) - s.y)
                         for s in sub.samples])
        frac = float(np.mean(errs <= 0.25 / val_ds.r))
        assert frac >= 0.90, (j, frac)


def test_trained_ridge_passes_gate(led_split, led_ridge):
    _, val_ds = led_split
    for j, (model, _) in led_ridge.items():
        res = evaluate(model, val_ds.by_camera(j))
        assert res["mae_mm"] <= 0.05, (j, res)


def test_train_determinism(led_split):
    train_ds, val_ds = led_split
    a, _ = train(train_ds.by_camera(0), val_ds.by_camera(0), RIDGE_HYPER)
    b, _ = train(train_ds.by_camera(0), val_ds.by_camera(0), RIDGE_HYPER)
    assert np.array_equal(a.weights, b.weights)
    assert a.bias == b.bias
    assert a.lam == b.lam


def test_mean_regression_toward_clean_labels():
    # training on noise-corrupted labels must beat the noisy labels
    # themselves when scored against the clean ones
    r = 6
    w_true = np.linspace(-0.01, 0.02, r * r)

    def label(x, rng):
        return float(x @ w_true)

    wins = 0
    for seed in range(10):
        ds = synthetic_dataset(10, 40, r, label, seed=100 + seed)
        rng = np.random.default_rng(seed)
        sigma = 0.3 * float(np.std([s.y for s in ds.samples]))
        noisy = []
        for s in ds.samples:
            noisy.append(Sample(observation=s.observation,
                                y=s.y + sigma * rng.normal(),
                                insertion_id=s.insertion_id,
                                camera_index=s.camera_index,
                                q_mm=s.q_mm, height_mm=s.height_mm))
        nds = Dataset(samples=noisy, cameras=ds.cameras, r=ds.r)
        tr, va = _split(nds, 8)
        model, _ = train(tr, va, TrainConfig(kind="ridge"))
        # clean label for a noisy sample = label recomputed from pixels
        clean_va = np.array([label(s.observation.pixels.ravel().astype(np.float64), None)
                             for s in va.samples])
        preds = np.array([predict(model, s.observation) for s in va.samples])
        noisy_va = np.array([s.y for s in va.samples])
        mse_model = float(np.mean((preds - clean_va) ** 2))
        mse_noise = float(np.mean((noisy_va - clean_va) ** 2))
        wins += mse_model <= mse_noise
    assert wins == 10


# ---------------------------------------------------------------- mlp


def _mlp_hyper(**kw):
    base = dict(kind="mlp", hidden=(16, 16), learning_rate=1e-3,
                max_epochs=30, patience=5, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def test_mlp_trains_and_gradient_check():
    r = 6
    w_true = np.linspace(-0.05, 0.05, r * r)
    ds = synthetic_dataset(8, 40, r, lambda x, rng: float(x @ w_true))
    tr, va = _split(ds, 6)
    hyper = _mlp_hyper()
    fresh = init_mlp(tr, hyper)
    assert gradient_check(fresh, tr, n_checks=100) <= 1e-4
    model, report = train(tr, va, hyper)
    assert report.best_val_loss <= report.val_curve[0]
    assert gradient_check(model, va, n_checks=100) <= 1e-4


def test_mlp_zero_input_batch_stays_finite():
    # constant pixels give zero feature variance; the std floor must keep
    # standardization, prediction and the gradient probe free of nan/inf.
    # (relu units sit exactly on their kink here, so the deviation itself
    # is allowed to be large -- only finiteness is meaningful.)
    ds = synthetic_dataset(2, 20, 4, lambda x, rng: rng.normal(),
                           pixel_fn=lambda rng: np.zeros((4, 4)))
    hyper = _mlp_hyper()
    model = init_mlp(ds, hyper)
    preds = [predict(model, s.observation) for s in ds.samples]
    assert np.all(np.isfinite(preds))
    assert np.isfinite(gradient_check(model, ds, n_checks=100))


def test_mlp_early_stopping_stops():
    ds = synthetic_dataset(6, 30, 4, lambda x, rng: rng.normal())  # pure noise
    model, report = train(*_split(ds, 5),
                          _mlp_hyper(max_epochs=300, patience=3))
    assert report.stopped_early
    assert report.epochs_run < 300
    assert report.best_val_loss == pytest.approx(min(report.val_curve), abs=0.0)


def test_mlp_init_matches_train_start():
    ds = synthetic_dataset(4, 20, 4, lambda x, rng: rng.normal())
    hyper = _mlp_hyper(max_epochs=1)
    a = init_mlp(ds, hyper)
    b = init_mlp(ds, hyper)
    for pa, pb in zip(a.params, b.params):
        assert np.array_equal(pa, pb)


def test_gradient_check_rejects_ridge():
    ds = synthetic_dataset(2, 10, 4, lambda x, rng: 0.0)
    model, _ = train(*_split(ds, 1), TrainConfig(kind="ridge"))
    with pytest.raises(NotDifferentiableKind):
        gradient_check(model, ds)


# ---------------------------------------------------------------- contracts


def test_leaked_insertion_detected():
    ds = synthetic_dataset(4, 10, 4, lambda x, rng: 0.0)
    tr = ds.subset([0, 1, 2])
    va = ds.subset([2, 3])
    with pytest.raises(LeakedInsertion):
        train(tr, va, TrainConfig(kind="ridge"))


def test_empty_dataset_rejected():
    ds = synthetic_dataset(2, 10, 4, lambda x, rng: 0.0)
    empty = Dataset(samples=[], cameras=ds.cameras, r=ds.r)
    with pytest.raises(EmptyDataset):
        train(empty, ds, TrainConfig(kind="ridge"))
    with pytest.raises(EmptyDataset):
        evaluate(OracleModel(), empty)


def test_shape_mismatch_on_predict():
    ds4 = synthetic_dataset(2, 10, 4, lambda x, rng: 0.0)
    ds8 = synthetic_dataset(2, 10, 8, lambda x, rng: 0.0)
    model, _ = train(*_split(ds4, 1), TrainConfig(kind="ridge"))
    with pytest.raises(ShapeMismatch):
        predict(model, ds8.samples[0].observation)


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(kind="forest")
    with pytest.raises(InvalidConfig):
        TrainConfig(max_epochs=0)
    with pytest.raises(InvalidConfig):
        TrainConfig(learning_rate=0.0)


# ---------------------------------------------------------------- io


def test_dataset_roundtrip(tmp_path, led_dataset):
    sub = led_dataset.subset(sorted(led_dataset.grouping)[:2])
    save_dataset(sub, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert len(back) == len(sub)
    assert back.r == sub.r
    for a, b in zip(sub.samples, back.samples):
        assert np.array_equal(a.observation.pixels, b.observation.pixels)
        assert a.observation.truth_y == b.observation.truth_y
        assert (a.y, a.insertion_id, a.camera_index) == (b.y, b.insertion_id, b.camera_index)
        assert (a.q_mm, a.height_mm) == (b.q_mm, b.height_mm)
    for ca, cb in zip(sub.cameras, back.cameras):
        assert np.array_equal(ca.position, cb.position)
        assert ca.r == cb.r


def test_model_roundtrip_ridge(tmp_path, led_dataset, led_ridge):
    model, _ = led_ridge[0]
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.kind == "ridge"
    obs = led_dataset.samples[0].observation
    assert predict(back, obs) == pytest.approx(predict(model, obs), abs=1e-7)


def test_model_roundtrip_mlp(tmp_path):
    ds = synthetic_dataset(4, 20, 4, lambda x, rng: rng.normal())
    model, _ = train(*_split(ds, 3), _mlp_hyper(max_epochs=2))
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.kind == "mlp"
    for s in ds.samples[:10]:
        assert predict(back, s.observation) == pytest.approx(
            predict(model, s.observation), abs=1e-6)


def test_model_roundtrip_oracle(tmp_path):
    save_model(OracleModel(noise_sigma=0.25), tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.kind == "oracle" and back.noise_sigma == 0.25


def test_evaluate_mae_mm_uses_camera_scale(led_split, led_ridge):
    _, val_ds = led_split
    model, _ = led_ridge[0]
    sub = val_ds.by_camera(0)
    res = evaluate(model, sub)
    cam = sub.cameras[0]
    manual = np.mean([abs(denormalize_error(predict(model, s.observation) - s.y, cam))
                      for s in sub.samples])
    assert res["mae_mm"] == pytest.approx(float(manual), rel=1e-9)
