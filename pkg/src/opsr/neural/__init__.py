"""Toy-scale operator networks: forward operator fitting and backward matrix prediction."""

from .checkpoint import CheckpointError, checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint
from .gradcheck import BLOCKS, GradCheck, check_all, gradient_check, parameter_gradients
from .layers import FULL_SCALE, DenseNet, NetSpec, dense_forward
from .model import (
    ALL_KINDS, FeatureVec, HyperParams, OperatorNet, binarize, deeponet_forward, extract_operator_feature,
    invert_feature, judge_adjacency, numerical_decode, predict_matrix, trunk_feature,
)
from .train import (
    TrainingDiverged, forward_mse, judgment_accuracy, judgment_corpus, random_expression, train_all,
    train_backward, train_forward, train_judgment,
)

__all__ = [
    "CheckpointError", "checkpoint_bytes", "load_checkpoint", "model_from_bytes", "save_checkpoint",
    "BLOCKS", "GradCheck", "check_all", "gradient_check", "parameter_gradients",
    "FULL_SCALE", "DenseNet", "NetSpec", "dense_forward",
    "ALL_KINDS", "FeatureVec", "HyperParams", "OperatorNet", "binarize", "deeponet_forward",
    "extract_operator_feature", "invert_feature", "judge_adjacency", "numerical_decode", "predict_matrix",
    "trunk_feature", "TrainingDiverged", "forward_mse", "judgment_accuracy", "judgment_corpus",
    "random_expression", "train_all", "train_backward", "train_forward", "train_judgment",
]
