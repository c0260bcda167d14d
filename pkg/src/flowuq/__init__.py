"""flowuq: uncertainty-aware classification for network-flow records.

Deterministic, Bayesian and forest classifiers with a shared uncertainty
vocabulary — entropy decomposition into aleatoric and epistemic parts,
novelty scores for unknown-attack detection, rejection curves, and
uncertainty-driven active learning.
"""

from ._version import __version__
from .active_learning import AlConfig, AlTrace, acquire, run_loop
from .bnn import BayesianMlpClassifier, kl_diag_gaussian
from .data import (
    FlowDataset,
    ScenarioBundle,
    Standardizer,
    SynthClass,
    SynthConfig,
    bundle_from_dir,
    bundle_to_dir,
    load_dataset,
    load_flow_csv,
    make_blob_config,
    partition_scenario,
    save_dataset,
    standardize_bundle,
    synth_generate,
)
from .evaluation import (
    CalibrationReport,
    ClassificationMetrics,
    RejectionCurve,
    RocCurve,
    accuracy_rejection,
    calibration,
    classification_metrics,
    roc,
)
from .exceptions import CapabilityError, ConfigError, DataError, FlowUqError
from .experiment import ExperimentConfig, run_experiment
from .forest import RandomForestFlowClassifier
from .kinds import DduPipeline, ModelKind, make_kind
from .mlp import MlpClassifier
from .numerics import (
    derive_rng,
    derive_seed,
    entropy,
    log_sum_exp,
    softmax,
    spectral_norm,
)
from .ood import UNKNOWN, decide, decide_batch, score
from .uncertainty import (
    GaussianFeatureDensity,
    UncertaintyReport,
    decompose,
    energy_score,
)

__all__ = [
    "__version__",
    "AlConfig",
    "AlTrace",
    "BayesianMlpClassifier",
    "CalibrationReport",
    "CapabilityError",
    "ClassificationMetrics",
    "ConfigError",
    "DataError",
    "DduPipeline",
    "ExperimentConfig",
    "FlowDataset",
    "FlowUqError",
    "GaussianFeatureDensity",
    "MlpClassifier",
    "ModelKind",
    "RandomForestFlowClassifier",
    "RejectionCurve",
    "RocCurve",
    "ScenarioBundle",
    "Standardizer",
    "SynthClass",
    "SynthConfig",
    "UNKNOWN",
    "UncertaintyReport",
    "acquire",
    "accuracy_rejection",
    "bundle_from_dir",
    "bundle_to_dir",
    "calibration",
    "classification_metrics",
    "decide",
    "decide_batch",
    "decompose",
    "derive_rng",
    "derive_seed",
    "energy_score",
    "entropy",
    "kl_diag_gaussian",
    "load_dataset",
    "load_flow_csv",
    "log_sum_exp",
    "make_blob_config",
    "make_kind",
    "partition_scenario",
    "roc",
    "run_experiment",
    "run_loop",
    "save_dataset",
    "score",
    "softmax",
    "spectral_norm",
    "standardize_bundle",
    "synth_generate",
]
