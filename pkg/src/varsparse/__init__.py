"""Causal disentanglement of linearly mixed variables via variance sparsity.

Pipeline: sample latent variables from a structural causal model under
hard interventions (`scm`, `envs`), mix them linearly into observations
(`data`), learn an unmixing matrix by minimizing a variance-sparsity
objective (`unmixing`), and score the result against the ground truth
(`metrics`), with an independent-component-analysis baseline (`ica`) and a
seeded benchmark harness plus command line on top (`experiments`, `cli`).
"""

from .data import EnvDataset, MixingMatrix, generate, is_zero_variance, sample_mixing
from .envs import (
    CoverageReport,
    EnvironmentSet,
    InterventionRegime,
    check_sufficient_coverage,
    coverage_from_supports,
    leave_one_out_design,
    separating_design,
)
from .experiments import ExperimentConfig, ResultRow, SummaryRow, reproduce, run_experiment
from .ica import IcaConvergenceWarning, IcaModel, fit_fastica, transform
from .metrics import (
    CorrelationMatrix,
    DisentanglementReport,
    MccResult,
    disentanglement_check,
    mcc,
    mcc_between,
    pearson,
)
from .scm import (
    DagAdjacency,
    Scm,
    builtin_nonlinear_scm,
    chain_example_scm,
    sample,
    sample_er_dag,
    sample_linear_scm,
)
from .unmixing import (
    LossBreakdown,
    LossWeights,
    NumericalError,
    TrainConfig,
    TrainReport,
    TrainingAborted,
    UnmixingModel,
    VarianceMatrix,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train,
    variance_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "CorrelationMatrix",
    "CoverageReport",
    "DagAdjacency",
    "DisentanglementReport",
    "EnvDataset",
    "EnvironmentSet",
    "ExperimentConfig",
    "IcaConvergenceWarning",
    "IcaModel",
    "InterventionRegime",
    "LossBreakdown",
    "LossWeights",
    "MccResult",
    "MixingMatrix",
    "NumericalError",
    "ResultRow",
    "Scm",
    "SummaryRow",
    "TrainConfig",
    "TrainReport",
    "TrainingAborted",
    "UnmixingModel",
    "VarianceMatrix",
    "builtin_nonlinear_scm",
    "chain_example_scm",
    "check_sufficient_coverage",
    "coverage_from_supports",
    "disentanglement_check",
    "fit_fastica",
    "generate",
    "is_zero_variance",
    "leave_one_out_design",
    "load_checkpoint",
    "mcc",
    "mcc_between",
    "pearson",
    "reproduce",
    "run_experiment",
    "sample",
    "sample_er_dag",
    "sample_linear_scm",
    "sample_mixing",
    "save_checkpoint",
    "separating_design",
    "total_loss",
    "train",
    "transform",
    "variance_matrix",
    "__version__",
]
