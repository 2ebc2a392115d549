"""Two-stream window cross-attention fusion with anchor/attention reliability balancing."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, parse_config_text  # noqa: E402
from .datagen import (DatasetSpec, RefinementConfig, augment, generate_dataset,  # noqa: E402
                      inject_noise, load_dataset, refine_batch, save_dataset, smooth_labels)
from .encoder import FusionEncoder  # noqa: E402
from .estimator import ReliabilityBalancedClassifier  # noqa: E402
from .harness import RunRecord, ablate, evaluate, train  # noqa: E402
from .metrics import EvalReport  # noqa: E402
from .reliability import ReliabilityBalancer  # noqa: E402
from .validation import pack_streams  # noqa: E402

__all__ = [
    "DatasetSpec", "EvalReport", "ExperimentConfig", "FusionEncoder", "RefinementConfig",
    "ReliabilityBalancedClassifier", "ReliabilityBalancer", "RunRecord", "ablate", "augment",
    "evaluate", "generate_dataset", "inject_noise", "load_config", "load_dataset",
    "pack_streams", "parse_config_text", "refine_batch", "save_dataset", "smooth_labels", "train",
]
