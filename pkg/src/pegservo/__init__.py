"""Visual-servo peg insertion: simulation, self-supervised training, benchmark."""

__version__ = "0.1.0"

from .errors import PegServoError
from .geometry import (CameraModel, aimed_camera, error_direction,
                       inplane_basis, reconstruct_error, scalar_error)
from .search import SearchPattern, covering_radius, generate_pattern
from .sim import (COMPONENT_STYLES, TimingModel, WorldConfig, WorldState,
                  new_world, render, spiral_insert)
from .perception import (Dataset, MlpModel, OracleModel, RidgeModel, Sample,
                         TrainConfig, evaluate, gradient_check, init_mlp,
                         predict, train)
from .servoing import ServoConfig, servo_config_for, servo_step, visual_servo
from .pipeline import (CollectionConfig, DeploymentGate, ShiftMonitor,
                       collect_dataset, configure, insert, split_by_insertion)
from .bench import (BenchConfig, BenchReport, BenchRow, emit_report,
                    fit_quadratic_law, run_benchmark)

__all__ = [
    "__version__", "PegServoError",
    "CameraModel", "aimed_camera", "error_direction", "inplane_basis",
    "reconstruct_error", "scalar_error",
    "SearchPattern", "covering_radius", "generate_pattern",
    "COMPONENT_STYLES", "TimingModel", "WorldConfig", "WorldState",
    "new_world", "render", "spiral_insert",
    "Dataset", "MlpModel", "OracleModel", "RidgeModel", "Sample",
    "TrainConfig", "evaluate", "gradient_check", "init_mlp", "predict", "train",
    "ServoConfig", "servo_config_for", "servo_step", "visual_servo",
    "CollectionConfig", "DeploymentGate", "ShiftMonitor", "collect_dataset",
    "configure", "insert", "split_by_insertion",
    "BenchConfig", "BenchReport", "BenchRow", "emit_report",
    "fit_quadratic_law", "run_benchmark",
]
