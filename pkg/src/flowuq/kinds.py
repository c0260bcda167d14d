"""The five evaluated model kinds and their capability table.

========  =====================  ===========  ============  ===========
kind      classifier             standardize  novelty rule  bald-capable
========  =====================  ===========  ============  ===========
nn        MlpClassifier          yes          entropy       no
energy    MlpClassifier          yes          energy        no
ddu       DduPipeline            yes          density       yes
bnn       BayesianMlpClassifier  yes          epistemic     yes
rf        RandomForestFlow...    no           epistemic     yes
========  =====================  ===========  ============  ===========

``nn`` and ``energy`` share weights and training; they differ only in the
score they derive from the logits.  A :class:`ModelKind` bundles the
constructor, the wiring flags and the two scoring entry points the
experiment runner and active-learning loop need.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .bnn import BayesianMlpClassifier
from .exceptions import CapabilityError, ConfigError
from .forest import RandomForestFlowClassifier
from .mlp import MlpClassifier
from .numerics import entropy
from .ood import ensemble_members, score as ood_score
from .uncertainty import GaussianFeatureDensity, decompose

MODEL_KIND_NAMES = ("nn", "energy", "ddu", "bnn", "rf")


class DduPipeline(BaseEstimator, ClassifierMixin):
    """Distance-aware deterministic classifier plus feature-space density.

    Trains an :class:`MlpClassifier` in ``ddu_mode`` (residual skips and
    spectral-normalized weights, so the hidden representation roughly
    preserves input distances), then fits a class-conditional Gaussian
    mixture on the training features.  ``log_density`` of a new sample is
    its mixture log-density in that feature space.
    """

    def __init__(
        self,
        hidden_layers: int = 2,
        hidden_width: int = 64,
        weight_decay: float = 0.1,
        learning_rate: float = 1e-2,
        batch_size: int | None = None,
        epochs: int = 10,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.weight_decay = weight_decay
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.n_classes = n_classes
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        self.network_ = MlpClassifier(
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
            weight_decay=self.weight_decay,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            batch_norm=True,
            ddu_mode=True,
            n_classes=self.n_classes,
            seed=self.seed,
        ).fit(X, y, X_val=X_val, y_val=y_val)
        self.density_ = GaussianFeatureDensity().fit(
            self.network_.transform(X), np.asarray(y, dtype=np.int64)
        )
        self.classes_ = self.network_.classes_
        self.n_classes_ = self.network_.n_classes_
        self.n_features_in_ = self.network_.n_features_in_
        self.history_ = self.network_.history_
        return self

    def predict_logits(self, X):
        return self.network_.predict_logits(X)

    def predict_proba(self, X):
        return self.network_.predict_proba(X)

    def predict(self, X):
        return self.network_.predict(X)

    def transform(self, X):
        return self.network_.transform(X)

    def log_density(self, X):
        """Feature-space mixture log-density of each row (higher = familiar)."""
        return self.density_.score_samples(self.network_.transform(X))


class ModelKind:
    """A buildable model family plus its pipeline wiring flags."""

    def __init__(
        self,
        name: str,
        builder,
        standardize: bool,
        ood_kind: str,
        supports_bald: bool,
        params: dict | None = None,
    ):
        self.name = name
        self._builder = builder
        self.standardize = standardize
        self.ood_kind = ood_kind
        self.supports_bald = supports_bald
        self.params = dict(params or {})

    def build(self, seed: int, n_classes: int | None = None):
        return self._builder(seed=seed, n_classes=n_classes, **self.params)

    def ood_scores(self, model, X, seed: int | None = None) -> np.ndarray:
        """This kind's canonical novelty score (see the table above)."""
        return ood_score(model, X, self.ood_kind, seed=seed)

    def pool_scores(self, model, X, strategy: str, seed: int | None = None):
        """Acquisition scores for the active-learning loop.

        ``bald`` is the epistemic score (disagreement for ensembles,
        negated log-density for the density kind); ``total`` is the full
        predictive entropy of whatever the model predicts.
        """
        if strategy == "total":
            if hasattr(model, "sample_proba") or hasattr(model, "member_proba"):
                members = ensemble_members(model, X, seed=seed)
                return np.asarray(decompose(members).total).reshape(-1)
            return np.asarray(entropy(model.predict_proba(X))).reshape(-1)
        if strategy == "bald":
            if not self.supports_bald:
                raise CapabilityError(
                    f"model kind {self.name!r} supports no bald acquisition"
                )
            if self.ood_kind == "density":
                return -np.asarray(model.log_density(X)).reshape(-1)
            members = ensemble_members(model, X, seed=seed)
            return np.asarray(decompose(members).epistemic).reshape(-1)
        raise ConfigError(f"no scores defined for strategy {strategy!r}")


def make_kind(name: str, params: dict | None = None) -> ModelKind:
    """Instantiate one of the five registry entries, with config overrides."""
    if name not in MODEL_KIND_NAMES:
        raise ConfigError(f"unknown model kind {name!r}; expected {MODEL_KIND_NAMES}")
    params = dict(params or {})
    if name in ("nn", "energy"):
        return ModelKind(
            name,
            lambda seed, n_classes, **kw: MlpClassifier(
                n_classes=n_classes, seed=seed, **kw
            ),
            standardize=True,
            ood_kind="entropy" if name == "nn" else "energy",
            supports_bald=False,
            params=params,
        )
    if name == "ddu":
        return ModelKind(
            name,
            lambda seed, n_classes, **kw: DduPipeline(
                n_classes=n_classes, seed=seed, **kw
            ),
            standardize=True,
            ood_kind="density",
            supports_bald=True,
            params=params,
        )
    if name == "bnn":
        return ModelKind(
            name,
            lambda seed, n_classes, **kw: BayesianMlpClassifier(
                n_classes=n_classes, seed=seed, **kw
            ),
            standardize=True,
            ood_kind="epistemic",
            supports_bald=True,
            params=params,
        )
    return ModelKind(
        "rf",
        lambda seed, n_classes, **kw: RandomForestFlowClassifier(
            n_classes=n_classes, seed=seed, **kw
        ),
        standardize=False,
        ood_kind="epistemic",
        supports_bald=True,
        params=params,
    )
