"""Error regressors: datasets, training, evaluation, serialization.

A regressor maps one camera image to the normalized in-plane error y along
that camera's error direction. Three kinds are supported: "oracle" (reads
the renderer ground truth, optionally noised), "ridge" (linear model on
normalized pixels, closed form), and "mlp" (small fully connected net
trained with Adam). Datasets are grouped by insertion so train/val splits
never share a hidden world.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (EmptyDataset, InvalidConfig, IoError, LeakedInsertion,
                     NotDifferentiableKind, ShapeMismatch)
from .geometry import camera_from_dict, camera_to_dict
from .sim import Observation

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Sample:
    """One labeled observation from a collection run.

    y is the training label (normalized error the servo should apply), q_mm
    its millimeter equivalent, height_mm the capture height above the
    reference pose.
    """

    observation: Observation
    y: float
    insertion_id: int
    camera_index: int
    q_mm: float
    height_mm: float


@dataclass
class Dataset:
    samples: list
    cameras: tuple
    r: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def grouping(self) -> dict:
        """insertion_id -> list of sample indices."""
        groups: dict = {}
        for i, s in enumerate(self.samples):
            groups.setdefault(s.insertion_id, []).append(i)
        return groups

    def subset(self, insertion_ids) -> "Dataset":
        ids = set(insertion_ids)
        return Dataset([s for s in self.samples if s.insertion_id in ids],
                       self.cameras, self.r)

    def by_camera(self, camera_index: int) -> "Dataset":
        return Dataset([s for s in self.samples if s.camera_index == camera_index],
                       self.cameras, self.r)


@dataclass(frozen=True)
class InputSpec:
    """Feature pipeline parameters frozen at training time.

    robust=True first normalizes each image by its own median and upper
    percentile spread (cancels per-scene background and contrast), then
    applies the stored per-dataset feature standardization.
    """

    r: int
    robust: bool
    feat_mean: np.ndarray
    feat_std: np.ndarray


_ROBUST_PCTL = 99.0
_ROBUST_FLOOR = -0.5


def _raw_features(pixels: np.ndarray, robust: bool) -> np.ndarray:
    x = np.asarray(pixels, dtype=np.float64).ravel()
    if robust:
        # Zero the background at the median and scale by the bright tail so
        # the foreground amplitude is scene-independent; then floor the dark
        # tail, whose contrast against the background varies oppositely and
        # would otherwise leak a per-scene gain into a linear readout.
        m = np.median(x)
        scale = np.percentile(x, _ROBUST_PCTL) - m
        if scale < 1e-6:
            scale = 1.0
        x = np.maximum((x - m) / scale, _ROBUST_FLOOR)
    return x


def _features(pixels: np.ndarray, spec: InputSpec) -> np.ndarray:
    if np.asarray(pixels).shape != (spec.r, spec.r):
        raise ShapeMismatch(f"expected {(spec.r, spec.r)} image, "
                            f"got {np.asarray(pixels).shape}")
    x = _raw_features(pixels, spec.robust)
    return (x - spec.feat_mean) / spec.feat_std


@dataclass
class OracleModel:
    """Reads the renderer's ground truth; noise_sigma adds prediction noise."""

    noise_sigma: float = 0.0
    kind: str = field(default="oracle", init=False)


@dataclass
class RidgeModel:
    weights: np.ndarray
    bias: float
    lam: float
    spec: InputSpec
    kind: str = field(default="ridge", init=False)


@dataclass
class MlpModel:
    params: list  # [W1, b1, W2, b2, W3, b3]
    spec: InputSpec
    hidden: tuple
    kind: str = field(default="mlp", init=False)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for train().

    For kind="ridge", ridge_lambda=None sweeps a descending regularization
    path and the patience/early-stop machinery runs over that path; a fixed
    ridge_lambda gives a single-step "training run". robust_norm switches the
    per-image normalization of InputSpec on.
    """

    kind: str = "ridge"
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 20
    ridge_lambda: float | None = None
    hidden: tuple = (128, 128)
    robust_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ridge", "mlp"):
            raise InvalidConfig(f"train kind must be ridge or mlp, got {self.kind!r}")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise InvalidConfig("max_epochs, patience and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")


@dataclass
class TrainReport:
    epochs_run: int
    best_val_loss: float
    train_curve: list
    val_curve: list
    stopped_early: bool


def _design(ds: Dataset, robust: bool):
    X = np.stack([_raw_features(s.observation.pixels, robust) for s in ds.samples])
    y = np.array([s.y for s in ds.samples], dtype=np.float64)
    return X, y


def _check_split(train_ds: Dataset, val_ds: Dataset) -> None:
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise EmptyDataset("train and validation sets must be non-empty")
    shared = set(train_ds.grouping) & set(val_ds.grouping)
    if shared:
        raise LeakedInsertion(f"insertions in both splits: {sorted(shared)}")


def train(train_ds: Dataset, val_ds: Dataset, hyper: TrainConfig):
    """Fit a regressor; returns (model, TrainReport).

    The returned model carries the parameters that achieved best_val_loss,
    not the last-step parameters.
    """
    _check_split(train_ds, val_ds)
    Xtr, ytr = _design(train_ds, hyper.robust_norm)
    Xva, yva = _design(val_ds, hyper.robust_norm)
    if Xtr.shape[1] != Xva.shape[1]:
        raise ShapeMismatch("train/val feature dimensions differ")
    feat_mean = Xtr.mean(axis=0)
    feat_std = np.maximum(Xtr.std(axis=0), 1e-8)
    spec = InputSpec(r=train_ds.r, robust=hyper.robust_norm,
                     feat_mean=feat_mean, feat_std=feat_std)
    Xtr = (Xtr - feat_mean) / feat_std
    Xva = (Xva - feat_mean) / feat_std
    if hyper.kind == "ridge":
        return _train_ridge(Xtr, ytr, Xva, yva, spec, hyper)
    return _train_mlp(Xtr, ytr, Xva, yva, spec, hyper)


def _train_ridge(Xtr, ytr, Xva, yva, spec, hyper: TrainConfig):
    # Dual (kernel) form: w = Xc^T (Xc Xc^T + lam I)^-1 yc. One
    # eigendecomposition of the Gram matrix serves the whole lambda path.
    xm = Xtr.mean(axis=0)
    ym = float(ytr.mean())
    Xc = Xtr - xm
    yc = ytr - ym
    K = Xc @ Xc.T
    evals, V = np.linalg.eigh(K)
    evals = np.maximum(evals, 0.0)
    Vty = V.T @ yc
    Kva = (Xva - xm) @ Xc.T
    if hyper.ridge_lambda is not None:
        if not hyper.ridge_lambda > 0:
            raise InvalidConfig("ridge_lambda must be > 0")
        path = [float(hyper.ridge_lambda)]
    else:
        path = list(np.logspace(2.0, -8.0, 26))
    path = path[:hyper.max_epochs]

    train_curve, val_curve = [], []
    best = np.inf
    best_alpha = None
    best_lam = path[0]
    wait = 0
    stopped = False
    for lam in path:
        alpha = V @ (Vty / (evals + lam))
        tr_mse = float(np.mean((K @ alpha - yc) ** 2))
        va_mse = float(np.mean((Kva @ alpha + ym - yva) ** 2))
        train_curve.append(tr_mse)
        val_curve.append(va_mse)
        if va_mse < best:
            best = va_mse
            best_alpha = alpha
            best_lam = lam
            wait = 0
        else:
            wait += 1
            if wait >= hyper.patience:
                stopped = True
                break
    w = Xc.T @ best_alpha
    bias = ym - float(xm @ w)
    model = RidgeModel(weights=w, bias=bias, lam=float(best_lam), spec=spec)
    report = TrainReport(epochs_run=len(val_curve), best_val_loss=best,
                         train_curve=train_curve, val_curve=val_curve,
                         stopped_early=stopped)
    return model, report


def init_mlp(ds: Dataset, hyper: TrainConfig) -> MlpModel:
    """Freshly initialized, untrained MLP with the dataset's input spec.

    Uses the same seed stream as train(), so training with the same hyper
    starts from exactly these parameters.
    """
    if hyper.kind != "mlp":
        raise InvalidConfig(f"init_mlp requires kind='mlp', got {hyper.kind!r}")
    if len(ds) == 0:
        raise EmptyDataset("cannot derive an input spec from an empty dataset")
    X, _ = _design(ds, hyper.robust_norm)
    feat_mean = X.mean(axis=0)
    feat_std = np.maximum(X.std(axis=0), 1e-8)
    spec = InputSpec(r=ds.r, robust=hyper.robust_norm,
                     feat_mean=feat_mean, feat_std=feat_std)
    rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 2]))
    params = _mlp_init(X.shape[1], tuple(hyper.hidden), rng)
    return MlpModel(params=params, spec=spec, hidden=tuple(hyper.hidden))


def _mlp_init(d: int, hidden: tuple, rng: np.random.Generator) -> list:
    sizes = [d, *hidden, 1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        params.append(np.zeros(fan_out))
    return params


def _mlp_forward(params: list, X: np.ndarray) -> np.ndarray:
    h = X
    for W, b in zip(params[0:-2:2], params[1:-2:2]):
        h = np.maximum(h @ W + b, 0.0)
    return (h @ params[-2] + params[-1]).ravel()


def _mlp_loss_grads(params: list, X: np.ndarray, y: np.ndarray):
    acts = [X]
    h = X
    for W, b in zip(params[0:-2:2], params[1:-2:2]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    pred = (h @ params[-2] + params[-1]).ravel()
    resid = pred - y
    loss = float(np.mean(resid ** 2))
    n = len(y)
    grads = [None] * len(params)
    delta = (2.0 / n) * resid[:, None]
    grads[-2] = acts[-1].T @ delta
    grads[-1] = delta.sum(axis=0)
    back = delta @ params[-2].T
    for li in range(len(acts) - 2, -1, -1):
        back = back * (acts[li + 1] > 0.0)
        grads[2 * li] = acts[li].T @ back
        grads[2 * li + 1] = back.sum(axis=0)
        if li > 0:
            back = back @ params[2 * li].T
    return loss, pred, grads


def _train_mlp(Xtr, ytr, Xva, yva, spec, hyper: TrainConfig):
    rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 2]))
    params = _mlp_init(Xtr.shape[1], tuple(hyper.hidden), rng)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    n = len(ytr)
    train_curve, val_curve = [], []
    best = np.inf
    best_params = [p.copy() for p in params]
    wait = 0
    stopped = False
    for _epoch in range(hyper.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            _, _, grads = _mlp_loss_grads(params, Xtr[idx], ytr[idx])
            t += 1
            for k, g in enumerate(grads):
                m[k] = b1 * m[k] + (1 - b1) * g
                v[k] = b2 * v[k] + (1 - b2) * g * g
                mhat = m[k] / (1 - b1 ** t)
                vhat = v[k] / (1 - b2 ** t)
                params[k] = params[k] - hyper.learning_rate * mhat / (np.sqrt(vhat) + eps)
        tr_mse = float(np.mean((_mlp_forward(params, Xtr) - ytr) ** 2))
        va_mse = float(np.mean((_mlp_forward(params, Xva) - yva) ** 2))
        train_curve.append(tr_mse)
        val_curve.append(va_mse)
        if va_mse < best:
            best = va_mse
            best_params = [p.copy() for p in params]
            wait = 0
        else:
            wait += 1
            if wait >= hyper.patience:
                stopped = True
                break
    model = MlpModel(params=best_params, spec=spec, hidden=tuple(hyper.hidden))
    report = TrainReport(epochs_run=len(val_curve), best_val_loss=best,
                         train_curve=train_curve, val_curve=val_curve,
                         stopped_early=stopped)
    return model, report


def predict(model, obs: Observation, rng=None) -> float:
    """Predict the normalized error y for one observation."""
    if model.kind == "oracle":
        y = obs.truth_y
        if model.noise_sigma > 0.0:
            if rng is None:
                raise InvalidConfig("oracle with noise_sigma > 0 needs an rng")
            y += model.noise_sigma * float(rng.standard_normal())
        return float(y)
    x = _features(obs.pixels, model.spec)
    if model.kind == "ridge":
        return float(x @ model.weights + model.bias)
    return float(_mlp_forward(model.params, x[None, :])[0])


def _predict_batch(model, ds: Dataset, rng=None) -> np.ndarray:
    if model.kind == "oracle":
        y = np.array([s.observation.truth_y for s in ds.samples], dtype=np.float64)
        if model.noise_sigma > 0.0:
            if rng is None:
                raise InvalidConfig("oracle with noise_sigma > 0 needs an rng")
            y = y + model.noise_sigma * rng.standard_normal(len(y))
        return y
    X = np.stack([_features(s.observation.pixels, model.spec) for s in ds.samples])
    if model.kind == "ridge":
        return X @ model.weights + model.bias
    return _mlp_forward(model.params, X)


def evaluate(model, ds: Dataset, rng=None) -> dict:
    """Prediction metrics over a dataset: mse/mae in y units, mae_mm in mm."""
    if len(ds) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    preds = _predict_batch(model, ds, rng)
    labels = np.array([s.y for s in ds.samples], dtype=np.float64)
    err = preds - labels
    scale = np.array([ds.cameras[s.camera_index].r * ds.cameras[s.camera_index].z
                      / ds.cameras[s.camera_index].f for s in ds.samples])
    return {"mse": float(np.mean(err ** 2)),
            "mae": float(np.mean(np.abs(err))),
            "mae_mm": float(np.mean(np.abs(err) * scale)),
            "n": len(ds)}


def gradient_check(model, ds: Dataset, n_checks: int = 100, step: float = 1e-5,
                   rng=None) -> float:
    """Compare analytic MLP gradients to central differences.

    Returns the maximum relative deviation over n_checks randomly chosen
    parameter coordinates. Raises NotDifferentiableKind for models without
    gradient-based training.
    """
    if model.kind != "mlp":
        raise NotDifferentiableKind(f"gradient_check needs kind=mlp, got {model.kind}")
    if len(ds) == 0:
        raise EmptyDataset("gradient_check needs samples")
    if rng is None:
        rng = np.random.default_rng(0)
    take = ds.samples[:min(32, len(ds))]
    X = np.stack([_features(s.observation.pixels, model.spec) for s in take])
    y = np.array([s.y for s in take], dtype=np.float64)
    params = model.params
    _, _, grads = _mlp_loss_grads(params, X, y)
    sizes = [p.size for p in params]
    total = int(np.sum(sizes))
    coords = rng.choice(total, size=min(n_checks, total), replace=False)
    bounds = np.cumsum([0] + sizes)
    worst = 0.0
    for c in coords:
        k = int(np.searchsorted(bounds, c, side="right") - 1)
        flat_idx = int(c - bounds[k])
        orig = params[k].flat[flat_idx]
        params[k].flat[flat_idx] = orig + step
        lp, _, _ = _mlp_loss_grads(params, X, y)
        params[k].flat[flat_idx] = orig - step
        lm, _, _ = _mlp_loss_grads(params, X, y)
        params[k].flat[flat_idx] = orig
        gd = (lp - lm) / (2.0 * step)
        ga = grads[k].flat[flat_idx]
        denom = max(abs(ga), abs(gd), 1e-10)
        worst = max(worst, abs(ga - gd) / denom)
    return worst


def save_dataset(ds: Dataset, out_dir) -> None:
    """Write meta.json plus images.bin (float32 little-endian, sample order)."""
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "r": ds.r,
        "n": len(ds),
        "cameras": [camera_to_dict(c) for c in ds.cameras],
        "samples": [{"insertion_id": s.insertion_id,
                     "camera_index": s.camera_index,
                     "y": s.y,
                     "truth_y": s.observation.truth_y,
                     "q_mm": s.q_mm,
                     "height_mm": s.height_mm} for s in ds.samples],
    }
    try:
        with open(os.path.join(out_dir, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
        with open(os.path.join(out_dir, "images.bin"), "wb") as fh:
            for s in ds.samples:
                if s.observation.pixels.shape != (ds.r, ds.r):
                    raise ShapeMismatch("sample image shape does not match dataset r")
                fh.write(s.observation.pixels.astype("<f4").tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_dataset(in_dir) -> Dataset:
    try:
        with open(os.path.join(in_dir, "meta.json")) as fh:
            meta = json.load(fh)
        raw = np.fromfile(os.path.join(in_dir, "images.bin"), dtype="<f4")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    r = int(meta["r"])
    n = int(meta["n"])
    if raw.size != n * r * r:
        raise ShapeMismatch(f"images.bin holds {raw.size} floats, "
                            f"expected {n * r * r}")
    cams = tuple(camera_from_dict(cd) for cd in meta["cameras"])
    images = raw.reshape(n, r, r)
    samples = []
    for i, sm in enumerate(meta["samples"]):
        obs = Observation(pixels=images[i], camera_index=int(sm["camera_index"]),
                          truth_y=float(sm["truth_y"]))
        samples.append(Sample(observation=obs, y=float(sm["y"]),
                              insertion_id=int(sm["insertion_id"]),
                              camera_index=int(sm["camera_index"]),
                              q_mm=float(sm["q_mm"]),
                              height_mm=float(sm["height_mm"])))
    return Dataset(samples=samples, cameras=cams, r=r)


def save_model(model, out_dir) -> None:
    """Write model.json plus weights.bin (float32 LE, order documented here).

    ridge: [feat_mean, feat_std, weights, bias]. mlp: [feat_mean, feat_std,
    W1, b1, W2, b2, W3, b3] with matrices flattened row-major. oracle models
    have no weights.bin.
    """
    os.makedirs(out_dir, exist_ok=True)
    meta = {"schema_version": SCHEMA_VERSION, "kind": model.kind}
    blobs = []
    if model.kind == "oracle":
        meta["noise_sigma"] = model.noise_sigma
    else:
        meta["r"] = model.spec.r
        meta["robust"] = bool(model.spec.robust)
        blobs = [model.spec.feat_mean, model.spec.feat_std]
        if model.kind == "ridge":
            meta["lam"] = model.lam
            blobs += [model.weights, np.array([model.bias])]
        else:
            meta["hidden"] = list(model.hidden)
            blobs += [p.ravel() for p in model.params]
    try:
        with open(os.path.join(out_dir, "model.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
        if blobs:
            with open(os.path.join(out_dir, "weights.bin"), "wb") as fh:
                for b in blobs:
                    fh.write(np.asarray(b, dtype=np.float64).astype("<f4").tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_model(in_dir):
    try:
        with open(os.path.join(in_dir, "model.json")) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    kind = meta["kind"]
    if kind == "oracle":
        return OracleModel(noise_sigma=float(meta["noise_sigma"]))
    try:
        raw = np.fromfile(os.path.join(in_dir, "weights.bin"),
                          dtype="<f4").astype(np.float64)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    r = int(meta["r"])
    d = r * r
    if raw.size < 2 * d:
        raise ShapeMismatch("weights.bin too short for feature statistics")
    feat_mean, feat_std, rest = raw[:d], raw[d:2 * d], raw[2 * d:]
    spec = InputSpec(r=r, robust=bool(meta["robust"]),
                     feat_mean=feat_mean, feat_std=feat_std)
    if kind == "ridge":
        if rest.size != d + 1:
            raise ShapeMismatch("ridge weights.bin has wrong length")
        return RidgeModel(weights=rest[:d], bias=float(rest[d]),
                          lam=float(meta["lam"]), spec=spec)
    if kind == "mlp":
        hidden = tuple(int(h) for h in meta["hidden"])
        sizes = [d, *hidden, 1]
        params = []
        off = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W = rest[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = rest[off:off + fan_out]
            off += fan_out
            params.append(W)
            params.append(b)
        if off != rest.size:
            raise ShapeMismatch("mlp weights.bin has wrong length")
        return MlpModel(params=params, spec=spec, hidden=hidden)
    raise InvalidConfig(f"unknown model kind {kind!r}")
