"""Autonomous configuration lifecycle.

Spiral search bootstraps labeled data with no human annotation: each fresh
world is inserted by search alone, the successful position is taken as the
in-plane zero, and offsets sampled around it become self-labeled training
images. Models are trained per camera, validated on held-out insertions,
and deployed only when every model clears the gate.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (AllInsertionsFailed, InvalidConfig, ModelsNotDeployed,
                     TooFewInsertions)
from .geometry import error_direction, normalize_error, scalar_error
from .perception import Dataset, Sample, TrainConfig, evaluate, train
from .search import SearchPattern, generate_pattern
from .servoing import ServoConfig, visual_servo
from .sim import (InsertionOutcome, TimingModel, WorldState, move_tcp,
                  render, spiral_insert)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CollectionConfig:
    n_insertions: int = 10
    samples_per_insertion: int = 100
    max_offset_mag: float = 1.0
    max_height: float = 1.0
    train_insertions: int = 8

    def __post_init__(self):
        if self.n_insertions < 1 or self.samples_per_insertion < 1:
            raise InvalidConfig("counts must be >= 1")
        if not (0 < self.train_insertions < self.n_insertions):
            raise InvalidConfig(
                f"need 0 < train_insertions < n_insertions, got "
                f"{self.train_insertions}/{self.n_insertions}")
        if not (self.max_offset_mag > 0 and self.max_height >= 0):
            raise InvalidConfig("offset/height ranges must be positive")


@dataclass
class DeploymentGate:
    """Validation-error threshold deciding whether servoing is enabled.

    Default threshold is half the insertion tolerance, so a deployed model
    leaves the corrected error well inside the first spiral attempt.
    """

    max_val_mae_mm: float
    decision: str = "collect_more"

    def __post_init__(self):
        if not self.max_val_mae_mm >= 0:
            raise InvalidConfig("gate threshold must be >= 0")


def collect_dataset(world_factory, cfg: CollectionConfig,
                    pattern: SearchPattern) -> Dataset:
    """Gather self-labeled samples from cfg.n_insertions fresh worlds.

    Per world: spiral-insert, take the successful TCP as the in-plane zero,
    then render samples_per_insertion random offsets (direction uniform on
    the circle, magnitude ~ U(0, max_offset_mag), height ~ U(0, max_height))
    from every camera. Label y is the normalized error the servo must
    cancel: y_j = normalize_error(-offset.u_j, cam_j). Failed insertions are
    logged and skipped.
    """
    samples = []
    cameras = None
    timing = TimingModel()
    successes = 0
    for i in range(cfg.n_insertions):
        world = world_factory(i)
        if cameras is None:
            cameras = world.config.cameras
        outcome = spiral_insert(world, world.tcp, pattern, timing)
        if not outcome.success:
            log.warning("collection insertion %d failed after %d attempts; skipped",
                        i, outcome.attempts)
            continue
        successes += 1
        success_tcp = outcome.final_tcp
        l = world.config.insertion_direction
        for _ in range(cfg.samples_per_insertion):
            theta = world.rng.uniform(0.0, 2.0 * np.pi)
            mag = world.rng.uniform(0.0, cfg.max_offset_mag)
            height = world.rng.uniform(0.0, cfg.max_height)
            offset2 = mag * np.array([np.cos(theta), np.sin(theta)])
            tcp = success_tcp + world.basis @ offset2 - height * l
            move_tcp(world, tcp, stroke=True)
            for j, cam in enumerate(cameras):
                obs = render(world, j, tcp)
                u = error_direction(l, world.nominal_hole - cam.position)
                q = scalar_error(-(world.basis @ offset2), u)
                samples.append(Sample(observation=obs,
                                      y=float(normalize_error(q, cam)),
                                      insertion_id=i, camera_index=j,
                                      q_mm=float(q), height_mm=float(height)))
        move_tcp(world, success_tcp, stroke=True)
    if successes == 0:
        raise AllInsertionsFailed(
            f"all {cfg.n_insertions} collection insertions failed")
    return Dataset(samples=samples, cameras=cameras, r=cameras[0].r)


def split_by_insertion(data: Dataset, train_insertions: int, seed: int):
    """Random insertion-level split; no insertion appears in both halves."""
    ids = sorted(data.grouping)
    if len(ids) <= train_insertions:
        raise TooFewInsertions(f"{len(ids)} insertion groups cannot give a "
                               f"{train_insertions}-insertion training split")
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(ids)]))
    perm = rng.permutation(ids)
    train_ids = sorted(int(v) for v in perm[:train_insertions])
    val_ids = sorted(int(v) for v in perm[train_insertions:])
    return data.subset(train_ids), data.subset(val_ids)


@dataclass
class ConfigureResult:
    """Everything configure produced, for audit."""

    models: dict  # camera_index -> model
    reports: dict  # camera_index -> TrainReport
    metrics: dict  # camera_index -> evaluate() dict on validation
    decision: str
    gate: DeploymentGate
    train_ids: list
    val_ids: list
    dataset_size: int


def configure(world_factory, cfg: CollectionConfig, hyper: TrainConfig,
              gate: DeploymentGate, pattern: SearchPattern = None,
              share_cameras: bool = False) -> ConfigureResult:
    """Collect, split, train one model per camera, and gate deployment.

    decision = "deploy" iff every model's validation mae_mm is within the
    gate threshold; otherwise "collect_more". With share_cameras=True a
    single model is trained on all cameras' samples and deployed to each.
    """
    probe = world_factory(0)
    if pattern is None:
        pattern = generate_pattern(probe.config.tolerance, cfg.max_offset_mag)
    data = collect_dataset(world_factory, cfg, pattern)
    train_ds, val_ds = split_by_insertion(data, cfg.train_insertions, hyper.seed)
    camera_indices = list(range(len(data.cameras)))
    models, reports, metrics = {}, {}, {}
    if share_cameras:
        model, report = train(train_ds, val_ds, hyper)
        ev = evaluate(model, val_ds)
        for j in camera_indices:
            models[j] = model
            reports[j] = report
            metrics[j] = ev
    else:
        for j in camera_indices:
            model, report = train(train_ds.by_camera(j), val_ds.by_camera(j), hyper)
            models[j] = model
            reports[j] = report
            metrics[j] = evaluate(model, val_ds.by_camera(j))
    ok = all(m["mae_mm"] <= gate.max_val_mae_mm for m in metrics.values())
    gate.decision = "deploy" if ok else "collect_more"
    return ConfigureResult(models=models, reports=reports, metrics=metrics,
                           decision=gate.decision, gate=gate,
                           train_ids=sorted(train_ds.grouping),
                           val_ids=sorted(val_ds.grouping),
                           dataset_size=len(data))


MODES = ("spiral_only", "servo_then_spiral")


def insert(world: WorldState, mode: str, servo_cfg, pattern: SearchPattern,
           timing: TimingModel) -> InsertionOutcome:
    """One full insertion episode in the given mode.

    servo_then_spiral runs the servo loop first, then searches from the
    corrected position; simulated_time covers both phases. The
    retrospective error is always measured from the original start
    position; the post-servo retrospective error additionally records the
    remaining offset after servoing.
    """
    if mode not in MODES:
        raise InvalidConfig(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "spiral_only":
        return spiral_insert(world, world.tcp, pattern, timing)
    if servo_cfg is None or any(m is None for m in servo_cfg.models):
        raise ModelsNotDeployed("servo_then_spiral needs one deployed model "
                                "per camera")
    start_tcp = world.tcp.copy()
    t0 = world.elapsed_time
    _, residuals = visual_servo(world, servo_cfg)
    sp = spiral_insert(world, world.tcp, pattern, timing)
    total = world.elapsed_time - t0
    l = world.config.insertion_direction
    if sp.success:
        d = sp.final_tcp - start_tcp
        retro = float(np.linalg.norm(d - np.dot(d, l) * l))
    else:
        retro = float("nan")
    return InsertionOutcome(success=sp.success,
                            attempts=sp.attempts,
                            simulated_time=total,
                            final_tcp=sp.final_tcp,
                            retrospective_error_mm=retro,
                            servo_residuals=residuals,
                            post_servo_retrospective_error_mm=sp.retrospective_error_mm)


class ShiftMonitor:
    """Rolling alert on post-servo spiral attempt counts.

    A drift of the deployed models away from the current cell state shows
    up as the servo no longer centering insertions; persistent extra spiral
    attempts therefore recommend collecting fresh data.
    """

    def __init__(self, window: int = 20, max_mean_attempts: float = 3.0):
        if window < 1 or not max_mean_attempts > 0:
            raise InvalidConfig("window and max_mean_attempts must be positive")
        self.window = window
        self.max_mean_attempts = max_mean_attempts
        self._attempts = []

    def record(self, attempts: int) -> None:
        self._attempts.append(int(attempts))

    @property
    def recommendation(self) -> str:
        if len(self._attempts) < self.window:
            return "ok"
        recent = self._attempts[-self.window:]
        return "collect_more" if np.mean(recent) > self.max_mean_attempts else "ok"
