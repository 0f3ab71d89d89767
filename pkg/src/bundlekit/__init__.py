"""Multi-strategy multi-modal bundle completion toolkit."""

from .config import TrainConfig, apply_ablation, load_config
from .data import (
    BundleCatalog,
    BundleDataset,
    DatasetStats,
    InteractionMatrix,
    ModalityBank,
    Vocabulary,
    load_canonical,
    load_dataset,
    mask_bundle,
    save_dataset,
    split_bundles,
)
from .errors import BundlekitError, ConfigError, DataFormatError, TrainingDivergedError
from .evaluation import (
    RankingResult,
    ndcg_at_k,
    rank_candidates,
    rank_training_reconstruction,
    recall_at_k,
)
from .graph import ItemGraph, build_item_graph, copurchase_counts, threshold_graph
from .losses import LossReport, infonce, joint_loss, nll_loss, pair_scores
from .model import BundleCompletionModel, EncodedViews, membership_rows, pad_members
from .synthetic import make_planted_dataset
from .training import TrainResult, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BundleCatalog",
    "BundleCompletionModel",
    "BundleDataset",
    "BundlekitError",
    "ConfigError",
    "DataFormatError",
    "DatasetStats",
    "EncodedViews",
    "InteractionMatrix",
    "ItemGraph",
    "LossReport",
    "ModalityBank",
    "RankingResult",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "Vocabulary",
    "apply_ablation",
    "build_item_graph",
    "copurchase_counts",
    "infonce",
    "joint_loss",
    "load_canonical",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "make_planted_dataset",
    "mask_bundle",
    "membership_rows",
    "ndcg_at_k",
    "nll_loss",
    "pad_members",
    "pair_scores",
    "rank_candidates",
    "rank_training_reconstruction",
    "recall_at_k",
    "save_checkpoint",
    "save_dataset",
    "split_bundles",
    "threshold_graph",
    "train",
]
