"""Neural network QSAR models: datasets, training, evaluation, and search."""

from .data import (
    DescriptorTable,
    LabelSet,
    MultiTaskDataset,
    NormStats,
    SplitAssignment,
    bootstrap_resample,
    build_dataset,
    combine_assays,
    load_descriptor_table,
    load_labels,
    make_folds,
    select_assays,
    split_train_test,
    zscore_normalize,
)
from .estimator import MultiTaskNeuralNetClassifier
from .evaluation import (
    EvalReport,
    SignificanceResult,
    auc,
    bootstrap_variance,
    cross_fold_evaluate,
    significance_test,
)
from .feature_selection import (
    FeatureRanking,
    InformationGainSelector,
    information_gain,
    rank_features,
    subset_features,
)
from .network import (
    ForwardTrace,
    NetworkConfig,
    NetworkParams,
    backward,
    forward,
    init_network,
    load_model,
    loss_cross_entropy,
    loss_mse,
    predict,
    save_model,
)
from .search import (
    SearchSpace,
    TrialRecord,
    default_space,
    gp_suggest,
    run_search,
    sample_uniform,
)
from .training import (
    TrainOutcome,
    TrainSpec,
    compose_minibatch,
    detect_divergence,
    lr_at_epoch,
    momentum_update,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DescriptorTable",
    "LabelSet",
    "MultiTaskDataset",
    "NormStats",
    "SplitAssignment",
    "bootstrap_resample",
    "build_dataset",
    "combine_assays",
    "load_descriptor_table",
    "load_labels",
    "make_folds",
    "select_assays",
    "split_train_test",
    "zscore_normalize",
    "MultiTaskNeuralNetClassifier",
    "EvalReport",
    "SignificanceResult",
    "auc",
    "bootstrap_variance",
    "cross_fold_evaluate",
    "significance_test",
    "FeatureRanking",
    "InformationGainSelector",
    "information_gain",
    "rank_features",
    "subset_features",
    "ForwardTrace",
    "NetworkConfig",
    "NetworkParams",
    "backward",
    "forward",
    "init_network",
    "load_model",
    "loss_cross_entropy",
    "loss_mse",
    "predict",
    "save_model",
    "SearchSpace",
    "TrialRecord",
    "default_space",
    "gp_suggest",
    "run_search",
    "sample_uniform",
    "TrainOutcome",
    "TrainSpec",
    "compose_minibatch",
    "detect_divergence",
    "lr_at_epoch",
    "momentum_update",
    "train",
]
