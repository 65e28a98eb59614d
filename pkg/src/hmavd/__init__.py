"""Tri-modal EEG/image/text contrastive alignment with modality balancing."""
from .core import Modality, ParamStore, RngStream, cosine_similarity_rows, l2_normalize
from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset
from .loss import LossConfig, total_loss
from .mcdb import BalanceConfig
from .nn import HMAVDModel, ModelConfig
from .spr import OptimConfig, SprConfig
from .trainer import Experiment, TrainConfig, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "BalanceConfig", "Experiment", "HMAVDEncoder", "HMAVDModel", "LossConfig", "Modality", "ModelConfig",
    "OptimConfig", "ParamStore", "RngStream", "SprConfig", "SyntheticConfig", "TrainConfig",
    "cosine_similarity_rows", "generate_synthetic", "l2_normalize", "load_dataset", "run_ablation",
    "save_dataset", "total_loss", "train",
]


def __getattr__(name):
    # scikit-learn is slow to import; only pay for it when the estimator is used.
    if name == "HMAVDEncoder":
        from .estimator import HMAVDEncoder
        return HMAVDEncoder
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
