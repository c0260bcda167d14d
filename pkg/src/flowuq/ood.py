"""Novelty scoring and the reject-or-classify decision rule.

Every supported scorer maps inputs to a scalar where *higher means more
likely out-of-distribution*:

==========  ============================================================
kind        definition
==========  ============================================================
entropy     Shannon entropy of the model's predictive distribution
energy      ``-T log sum_k exp(logit_k / T)`` of the model's logits
density     negated feature-space Gaussian-mixture log-density
epistemic   disagreement part of the ensemble entropy decomposition
==========  ============================================================

A model only supports the kinds its outputs allow; asking for anything
else raises :class:`~flowuq.exceptions.CapabilityError`.  The decision
rule flags a sample as unknown exactly when its score exceeds the
threshold; at equality the sample keeps its predicted known class.
"""

from __future__ import annotations

import numpy as np

from .exceptions import CapabilityError
from .numerics import entropy
from .uncertainty import decompose, energy_score

SCORE_KINDS = ("entropy", "energy", "density", "epistemic")

#: sentinel class id returned by decide() for rejected samples
UNKNOWN = -1


def score(model, X, kind: str, seed: int | None = None, n_samples: int | None = None):
    """Novelty scores for ``X`` under the given scoring rule.

    ``seed``/``n_samples`` only matter for sampled ensembles (the Bayesian
    network), where they pin the posterior draws.
    """
    if kind not in SCORE_KINDS:
        raise CapabilityError(f"unknown score kind {kind!r}; expected {SCORE_KINDS}")
    name = type(model).__name__
    if kind == "entropy":
        if not hasattr(model, "predict_proba"):
            raise CapabilityError(f"{name} produces no probabilities")
        return np.asarray(entropy(model.predict_proba(X)), dtype=np.float64).reshape(-1)
    if kind == "energy":
        if not hasattr(model, "predict_logits"):
            raise CapabilityError(f"{name} exposes no logits; energy needs them")
        return np.asarray(
            energy_score(model.predict_logits(X)), dtype=np.float64
        ).reshape(-1)
    if kind == "density":
        if not hasattr(model, "log_density"):
            raise CapabilityError(
                f"{name} has no fitted feature-space density model"
            )
        return -np.asarray(model.log_density(X), dtype=np.float64).reshape(-1)
    # epistemic
    members = ensemble_members(model, X, seed=seed, n_samples=n_samples)
    return np.asarray(decompose(members).epistemic, dtype=np.float64).reshape(-1)


def ensemble_members(model, X, seed: int | None = None, n_samples: int | None = None):
    """Member probability array (n, M, K) from whatever ensemble the model has."""
    if hasattr(model, "sample_proba"):
        return model.sample_proba(X, n_samples=n_samples, seed=seed)
    if hasattr(model, "member_proba"):
        return model.member_proba(X)
    raise CapabilityError(
        f"{type(model).__name__} is not an ensemble; it has no member distributions"
    )


def decide(score_value: float, threshold: float, predicted_class: int) -> int:
    """Classify or reject one sample: :data:`UNKNOWN` iff score > threshold."""
    if not np.isfinite(score_value) or not np.isfinite(threshold):
        raise ValueError("score and threshold must be finite")
    return UNKNOWN if score_value > threshold else int(predicted_class)


def decide_batch(scores, threshold: float, predicted_classes) -> np.ndarray:
    """Vectorized :func:`decide` over aligned score/prediction arrays."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted_classes, dtype=np.int64).reshape(-1)
    if scores.shape != predicted.shape:
        raise ValueError("scores and predictions must align")
    if not np.all(np.isfinite(scores)) or not np.isfinite(threshold):
        raise ValueError("scores and threshold must be finite")
    return np.where(scores > threshold, UNKNOWN, predicted)
