"""Pool-based active learning with uncertainty-driven acquisition.

The loop starts from a small seeded random subset of a labeled pool,
then alternates: train a fresh model on the labeled set, score the
remaining pool with the chosen acquisition strategy, move the top-scoring
batch into the labeled set.  Strategies:

* ``bald`` — epistemic (disagreement) score: mutual information for
  ensembles, negated feature-space log-density for the density model;
* ``total`` — full predictive entropy;
* ``random`` — seeded uniform choice, the control arm.

Macro F1 on a fixed test set is recorded after every round.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import FlowDataset, Standardizer
from .exceptions import CapabilityError, ConfigError
from .numerics import STREAM_AL, derive_rng, derive_seed
from .evaluation import classification_metrics

STRATEGIES = ("bald", "total", "random")

_INIT_STREAM = 0x10
_MODEL_STREAM = 0x20
_SCORE_STREAM = 0x30
_RANDOM_STREAM = 0x40


@dataclass
class AlConfig:
    """Loop settings.

    ``target_f1`` stops the loop early once reached (None disables);
    ``max_rounds`` caps the number of acquisition rounds after the initial
    one.  Retraining from scratch each round is the only supported mode —
    it keeps rounds comparable and models reproducible from (seed, round).
    """

    initial_size: int = 500
    acquisition_size: int = 500
    strategy: str = "bald"
    max_rounds: int = 20
    target_f1: float | None = None
    retrain_from_scratch: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.initial_size < 1 or self.acquisition_size < 1:
            raise ConfigError("initial_size and acquisition_size must be >= 1")
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be >= 0")
        if not self.retrain_from_scratch:
            raise ConfigError(
                "warm-started rounds are not supported; keep retrain_from_scratch on"
            )


@dataclass
class AlTrace:
    """Per-round progress of one loop run."""

    rounds: list = field(default_factory=list)

    def append(self, round_id: int, labeled_size: int, fraction: float, f1: float):
        self.rounds.append(
            {
                "round": round_id,
                "labeled_size": labeled_size,
                "fraction": fraction,
                "f1_macro": f1,
            }
        )

    def labeled_sizes(self) -> list:
        return [r["labeled_size"] for r in self.rounds]

    def f1_scores(self) -> list:
        return [r["f1_macro"] for r in self.rounds]

    def samples_to_reach(self, f1_target: float):
        """Smallest labeled size whose F1 met the target, or None."""
        for r in self.rounds:
            if r["f1_macro"] >= f1_target:
                return r["labeled_size"]
        return None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["round", "labeled_size", "fraction", "f1_macro"])
            for r in self.rounds:
                writer.writerow(
                    [r["round"], r["labeled_size"], r["fraction"], r["f1_macro"]]
                )


def acquire(scores, batch_size: int, strategy: str, rng=None) -> np.ndarray:
    """Pick ``batch_size`` pool indices to label next, sorted ascending.

    For score-driven strategies the highest scores win, ties going to the
    lowest index.  ``random`` ignores the scores entirely and draws
    uniformly without replacement from the given generator.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.size
    if n == 0:
        raise ValueError("cannot acquire from an empty pool")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds pool size {n}")
    if strategy == "random":
        if rng is None:
            raise ValueError("random strategy needs a generator")
        picked = rng.choice(n, size=batch_size, replace=False)
    else:
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        picked = np.argsort(-scores, kind="stable")[:batch_size]
    return np.sort(picked).astype(np.int64)


def run_loop(factory, pool: FlowDataset, test: FlowDataset, config: AlConfig) -> AlTrace:
    """Run the acquisition loop and return its trace.

    ``factory`` describes the model family: it must provide
    ``build(seed, n_classes)``, ``pool_scores(model, X, strategy, seed)``,
    and the flags ``standardize`` and ``supports_bald`` (see
    ``flowuq.kinds``).  Scores are never requested for ``random``.
    """
    if config.strategy == "bald" and not factory.supports_bald:
        raise CapabilityError(
            f"model kind {factory.name!r} has no epistemic score; "
            "bald acquisition needs an ensemble or density model"
        )
    k = pool.n_classes
    if config.initial_size < k:
        raise ConfigError(
            f"initial_size {config.initial_size} is below the class count {k}"
        )
    if config.initial_size > pool.n_samples:
        raise ConfigError("initial_size exceeds the pool")

    init_rng = derive_rng(config.seed, STREAM_AL, _INIT_STREAM)
    random_rng = derive_rng(config.seed, STREAM_AL, _RANDOM_STREAM)
    labeled = np.sort(
        init_rng.choice(pool.n_samples, size=config.initial_size, replace=False)
    )
    unlabeled = np.setdiff1d(np.arange(pool.n_samples), labeled)

    trace = AlTrace()
    for round_id in range(config.max_rounds + 1):
        model_seed = derive_seed(config.seed, STREAM_AL, _MODEL_STREAM, round_id)
        train = pool.select(labeled)
        if factory.standardize:
            scaler = Standardizer().fit(train.features)
            x_train = scaler.transform(train.features)
            x_test = scaler.transform(test.features)
        else:
            x_train = train.features
            x_test = test.features
        model = factory.build(seed=model_seed, n_classes=k)
        model.fit(x_train, train.labels)
        predicted = model.predict(x_test)
        metrics = classification_metrics(predicted, test.labels, n_classes=k)
        trace.append(
            round_id,
            labeled.size,
            labeled.size / pool.n_samples,
            metrics.f1_macro,
        )

        if config.target_f1 is not None and metrics.f1_macro >= config.target_f1:
            break
        if unlabeled.size == 0 or round_id == config.max_rounds:
            break

        batch = min(config.acquisition_size, unlabeled.size)
        if config.strategy == "random":
            picked_local = acquire(
                np.zeros(unlabeled.size), batch, "random", rng=random_rng
            )
        else:
            x_pool = (
                scaler.transform(pool.features[unlabeled])
                if factory.standardize
                else pool.features[unlabeled]
            )
            score_seed = derive_seed(config.seed, STREAM_AL, _SCORE_STREAM, round_id)
            scores = factory.pool_scores(model, x_pool, config.strategy, score_seed)
            picked_local = acquire(scores, batch, config.strategy)
        picked = unlabeled[picked_local]
        labeled = np.sort(np.concatenate([labeled, picked]))
        unlabeled = np.setdiff1d(unlabeled, picked)
    return trace
