"""Shared fixtures: one real collected dataset and trained ridge models."""

import numpy as np
import pytest

from pegservo.geometry import CameraModel, vec3
from pegservo.perception import Dataset, Sample, TrainConfig, train
from pegservo.pipeline import CollectionConfig, collect_dataset, split_by_insertion
from pegservo.search import generate_pattern
from pegservo.sim import Observation, WorldConfig, new_world

RIDGE_HYPER = TrainConfig(kind="ridge", robust_norm=True)


def synthetic_dataset(n_insertions, per_insertion, r, label_fn, seed=0,
                      pixel_fn=None):
    """Random-image dataset with labels from label_fn(flat_pixels, rng)."""
    rng = np.random.default_rng(seed)
    cam = CameraModel(position=vec3(0, 0, 500.0),
                      orientation=np.diag([1.0, -1.0, -1.0]),
                      f=1000.0, r=r, z=500.0)
    samples = []
    for ins in range(n_insertions):
        for _ in range(per_insertion):
            if pixel_fn is None:
                img = rng.uniform(0.0, 1.0, size=(r, r)).astype(np.float32)
            else:
                img = pixel_fn(rng).astype(np.float32)
            y = float(label_fn(img.ravel().astype(np.float64), rng))
            obs = Observation(pixels=img, camera_index=0, truth_y=y)
            samples.append(Sample(observation=obs, y=y, insertion_id=ins,
                                  camera_index=0, q_mm=0.0, height_mm=0.0))
    return Dataset(samples=samples, cameras=(cam,), r=r)


def led_factory(i):
    return new_world(WorldConfig(component_style="led", seed=1000 + i))


@pytest.fixture(scope="session")
def led_dataset():
    cfg = CollectionConfig()
    pattern = generate_pattern(0.1, cfg.max_offset_mag)
    return collect_dataset(led_factory, cfg, pattern)


@pytest.fixture(scope="session")
def led_split(led_dataset):
    return split_by_insertion(led_dataset, 8, seed=0)


@pytest.fixture(scope="session")
def led_ridge(led_split):
    train_ds, val_ds = led_split
    out = {}
    for j in (0, 1):
        out[j] = train(train_ds.by_camera(j), val_ds.by_camera(j), RIDGE_HYPER)
    return out
