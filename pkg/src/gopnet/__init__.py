"""Generalized Operational Perceptron networks with progressive learning.

Networks are built from neuron blocks whose functional form is a
(nodal, pool, activation) triple chosen from a fixed 144-element library.
Growth alternates randomized operator search with closed-form ridge solves
and backprop finetuning, adding width and depth only while the relative
improvement clears configurable thresholds.
"""

from .data import Dataset, load_csv, one_hot, split_dataset
from .network import (
    GopLayer,
    GopNetwork,
    NeuronBlock,
    NormMode,
    NormState,
    load_model,
    save_model,
)
from .operators import (
    LIBRARY_SIZE,
    PERCEPTRON_SET,
    ActivationOp,
    NodalOp,
    OperatorSet,
    PoolOp,
    enumerate_operator_sets,
)
from .progression import (
    Metric,
    ProgressionConfig,
    ProgressionReport,
    Variant,
    improvement_rate,
    run_pmlp_baseline,
    run_pop_baseline,
    run_progression,
)
from .ridge import evaluate_candidate, solve_augmented, solve_ridge
from .training import (
    Decay,
    LossKind,
    MaxNorm,
    TrainableSelection,
    TrainSpec,
    backward,
    evaluate_metrics,
    finetune,
    init_batchnorm_from_standardization,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationOp",
    "Dataset",
    "Decay",
    "GopLayer",
    "GopNetwork",
    "LIBRARY_SIZE",
    "LossKind",
    "MaxNorm",
    "Metric",
    "NeuronBlock",
    "NodalOp",
    "NormMode",
    "NormState",
    "OperatorSet",
    "PERCEPTRON_SET",
    "PoolOp",
    "ProgressionConfig",
    "ProgressionReport",
    "TrainSpec",
    "TrainableSelection",
    "Variant",
    "backward",
    "enumerate_operator_sets",
    "evaluate_candidate",
    "evaluate_metrics",
    "finetune",
    "improvement_rate",
    "init_batchnorm_from_standardization",
    "load_csv",
    "load_model",
    "one_hot",
    "run_pmlp_baseline",
    "run_pop_baseline",
    "run_progression",
    "save_model",
    "solve_augmented",
    "solve_ridge",
    "split_dataset",
]
