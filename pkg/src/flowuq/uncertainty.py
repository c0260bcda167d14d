"""Predictive-uncertainty quantities derived from model outputs.

Three families live here:

* :func:`decompose` splits the entropy of an ensemble prediction into its
  aleatoric (data) and epistemic (model) parts,
* :func:`energy_score` is the logit-based novelty score of energy models,
* :class:`GaussianFeatureDensity` is a class-conditional Gaussian mixture
  fitted in a network's feature space, whose log-density acts as a novelty
  score (low density = unfamiliar input).

All entropies are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator

from .exceptions import DataError
from .numerics import check_prob_vectors, entropy, log_sum_exp
from .validation import check_features, check_is_fitted, check_labels

#: jitter ladder tried in order when factorizing class covariances
JITTER_LADDER = tuple(10.0 ** e for e in range(-9, 0))

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class UncertaintyReport:
    """Entropy split of one (or a batch of) ensemble prediction(s).

    ``total`` is the entropy of the ensemble-averaged distribution,
    ``aleatoric`` the average entropy of the individual members, and
    ``epistemic`` their difference — the members' disagreement.  The
    identity ``total = aleatoric + epistemic`` holds exactly because
    ``epistemic`` is computed as that difference.
    """

    total: float | np.ndarray
    aleatoric: float | np.ndarray
    epistemic: float | np.ndarray


def decompose(members) -> UncertaintyReport:
    """Split ensemble predictions into total/aleatoric/epistemic entropy.

    Parameters
    ----------
    members : array-like of shape (M, K) or (n, M, K)
        Probability vectors of M ensemble members over K classes.  With a
        leading batch axis the report fields are arrays of shape (n,).

    Notes
    -----
    Up to floating-point rounding the epistemic part is the mutual
    information between the prediction and the (random) member, so it is
    non-negative and vanishes when all members agree.
    """
    arr = check_prob_vectors(members, name="members")
    if arr.ndim not in (2, 3):
        raise ValueError("members must have shape (M, K) or (n, M, K)")
    if arr.shape[-2] < 1:
        raise ValueError("need at least one ensemble member")
    mean = arr.mean(axis=-2)
    total = entropy(mean, validate=False)
    aleatoric = entropy(arr, validate=False).mean(axis=-1)
    return UncertaintyReport(
        total=total, aleatoric=aleatoric, epistemic=total - aleatoric
    )


def energy_score(logits, temperature: float = 1.0):
    """Energy of a logit vector: ``-T * log sum_k exp(logit_k / T)``.

    Higher energy means the input excites no class strongly, i.e. looks
    unfamiliar.  Adding a constant to all logits shifts the energy by the
    negative of that constant.
    """
    return -log_sum_exp(logits, temperature=temperature)


class GaussianFeatureDensity(BaseEstimator):
    """Class-conditional Gaussian density over feature vectors.

    Each class gets its empirical mean and full (population) covariance;
    mixture weights are the empirical class frequencies.  A shared jitter
    ``eps * I`` — the smallest rung of a fixed ladder ``1e-9 ... 1e-1``
    letting every class covariance factorize — keeps the Cholesky solves
    well-posed.

    After fitting, :meth:`score_samples` returns the mixture log-density
    ``log sum_i p(c_i) N(z; mu_i, Sigma_i)`` per row.
    """

    def fit(self, Z, y):
        Z = check_features(Z, name="Z")
        y = check_labels(y, Z.shape[0])
        class_ids = np.unique(y)
        counts = np.array([(y == c).sum() for c in class_ids])
        starved = [int(c) for c, n in zip(class_ids, counts) if n < 2]
        if starved:
            raise DataError(
                f"classes with fewer than 2 samples cannot be modelled: {starved}"
            )
        d = Z.shape[1]
        means = np.stack([Z[y == c].mean(axis=0) for c in class_ids])
        covs = np.stack(
            [np.cov(Z[y == c], rowvar=False, bias=True).reshape(d, d) for c in class_ids]
        )
        jitter = None
        for eps in JITTER_LADDER:
            try:
                chols = np.stack(
                    [np.linalg.cholesky(cov + eps * np.eye(d)) for cov in covs]
                )
                jitter = eps
                break
            except np.linalg.LinAlgError:
                continue
        if jitter is None:
            raise DataError("class covariances are not factorizable even at eps=1e-1")

        self.class_ids_ = class_ids
        self.means_ = means
        self.covariances_ = covs
        self.jitter_ = float(jitter)
        self.log_priors_ = np.log(counts / counts.sum())
        self._chols = chols
        self._log_dets = 2.0 * np.log(
            np.stack([np.diag(L) for L in chols])
        ).sum(axis=1)
        self.n_features_in_ = d
        return self

    def _component_log_pdf(self, Z: np.ndarray) -> np.ndarray:
        """Log N(z; mu_i, Sigma_i + eps I) for every row and class, (n, C)."""
        n, d = Z.shape
        out = np.empty((n, len(self.class_ids_)))
        for i, (mu, L, log_det) in enumerate(
            zip(self.means_, self._chols, self._log_dets)
        ):
            diff = (Z - mu).T
            half = solve_triangular(L, diff, lower=True)
            maha = np.sum(half * half, axis=0)
            out[:, i] = -0.5 * (maha + log_det + d * _LOG_2PI)
        return out

    def score_samples(self, Z) -> np.ndarray:
        """Mixture log-density of each row of ``Z``."""
        check_is_fitted(self, "means_")
        Z = check_features(Z, n_features=self.n_features_in_, name="Z")
        joint = self._component_log_pdf(Z) + self.log_priors_
        return np.asarray(log_sum_exp(joint, axis=-1), dtype=np.float64).reshape(-1)

    def save(self, path) -> None:
        """Dump the fitted density to an .npz archive (bit-exact)."""
        check_is_fitted(self, "means_")
        np.savez(
            path,
            format=np.array("flowuq-density-v1"),
            class_ids=self.class_ids_,
            means=self.means_,
            covariances=self.covariances_,
            jitter=np.array(self.jitter_),
            log_priors=self.log_priors_,
        )

    @classmethod
    def load(cls, path) -> "GaussianFeatureDensity":
        with np.load(path) as archive:
            if "format" not in archive or str(archive["format"]) != "flowuq-density-v1":
                raise DataError(f"unrecognized density dump format in {path}")
            model = cls()
            model.class_ids_ = archive["class_ids"]
            model.means_ = archive["means"]
            model.covariances_ = archive["covariances"]
            model.jitter_ = float(archive["jitter"])
            model.log_priors_ = archive["log_priors"]
        d = model.means_.shape[1]
        model._chols = np.stack(
            [
                np.linalg.cholesky(cov + model.jitter_ * np.eye(d))
                for cov in model.covariances_
            ]
        )
        model._log_dets = 2.0 * np.log(
            np.stack([np.diag(L) for L in model._chols])
        ).sum(axis=1)
        model.n_features_in_ = d
        return model
