"""Mean-field Bayesian MLP trained by stochastic variational inference.

Every weight and bias gets an independent Gaussian posterior
``N(mu, softplus(rho)^2)``; the prior is zero-mean isotropic with variance
``alpha^2`` (by default ``1/(2*0.1) = 5``, the value matching an L2
penalty of 0.1 on a deterministic twin of the network).  Each mini-batch
step draws one reparameterized weight sample ``w = mu + sigma * eps`` and
descends the mean negative log-likelihood plus ``kl_scale`` times the
closed-form KL to the prior.

Prediction draws N weight samples and returns the member softmax outputs,
ready for entropy decomposition into aleatoric and epistemic parts.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import DataError
from .mlp import Adam, Arch, backward, cross_entropy, forward_eval, forward_train
from .numerics import STREAM_BNN, derive_rng, softmax
from .validation import check_features, check_is_fitted, check_labels

_MODEL_FORMAT = "flowuq-bnn-v1"

# posterior scales start at 5% of the prior scale
_INIT_SIGMA_FRACTION = 0.05


def softplus(x):
    """Numerically stable ``log(1 + exp(x))``."""
    return np.logaddexp(0.0, x)


def softplus_inverse(s):
    """The ``rho`` with ``softplus(rho) = s`` (s must be positive)."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("softplus_inverse needs positive inputs")
    return np.where(s > 30.0, s, np.log(np.expm1(np.minimum(s, 30.0))))


def kl_diag_gaussian(mu, sigma, prior_variance: float) -> float:
    """KL(N(mu, sigma^2) || N(0, alpha^2)) summed over all entries.

    The closed form per entry is
    ``log(alpha/sigma) + (sigma^2 + mu^2) / (2 alpha^2) - 1/2``,
    which is zero exactly when the posterior equals the prior.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if prior_variance <= 0:
        raise ValueError("prior_variance must be positive")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    alpha2 = float(prior_variance)
    terms = (
        0.5 * np.log(alpha2)
        - np.log(sigma)
        + (sigma * sigma + mu * mu) / (2.0 * alpha2)
        - 0.5
    )
    return float(np.sum(terms))


def elbo_loss_and_grads(
    mu: dict,
    rho: dict,
    eps: dict,
    X: np.ndarray,
    y: np.ndarray,
    arch: Arch,
    prior_variance: float,
    kl_scale: float,
):
    """One-sample variational objective and its gradients w.r.t. mu and rho.

    With the weight draw fixed by ``eps``, the objective is
    ``NLL(w = mu + softplus(rho) * eps) + kl_scale * KL(q || prior)``; both
    terms are differentiated analytically (the NLL through the network by
    backpropagation, the KL in closed form).
    """
    sigma = {k: softplus(rho[k]) for k in rho}
    weights = {k: mu[k] + sigma[k] * eps[k] for k in mu}
    logits, caches = forward_train(weights, X, arch)
    nll, dlogits = cross_entropy(logits, y)
    dw = backward(weights, caches, dlogits, arch)

    alpha2 = float(prior_variance)
    kl = kl_diag_gaussian(
        np.concatenate([mu[k].ravel() for k in mu]),
        np.concatenate([sigma[k].ravel() for k in mu]),
        alpha2,
    )
    loss = nll + kl_scale * kl
    grad_mu, grad_rho = {}, {}
    for k in mu:
        sig_grad = expit(rho[k])  # d softplus / d rho
        grad_mu[k] = dw[k] + kl_scale * mu[k] / alpha2
        grad_rho[k] = (
            dw[k] * eps[k] + kl_scale * (sigma[k] / alpha2 - 1.0 / sigma[k])
        ) * sig_grad
    return loss, grad_mu, grad_rho


class BayesianMlpClassifier(BaseEstimator, ClassifierMixin):
    """Variational Bayesian MLP (no batch norm) with sampled predictions.

    Parameters
    ----------
    hidden_layers, hidden_width : int
        Architecture of the underlying network.
    learning_rate, batch_size, epochs : float, int, int
        Adam settings for the variational parameters.
    prior_variance : float
        Variance ``alpha^2`` of the zero-mean isotropic weight prior.
    n_predict_samples : int
        Default number of posterior weight draws per prediction.
    kl_scale : float or None
        Weight on the KL term per mini-batch step; None uses one over the
        number of mini-batches per epoch.  Note this weighting (applied on
        top of a batch-mean likelihood) regularizes noticeably harder than
        a per-datum evidence bound would; pass an explicit value to change
        the balance.
    seed : int
        Drives initialization, shuffling, training-time weight draws and
        the default prediction stream.
    """

    def __init__(
        self,
        hidden_layers: int = 2,
        hidden_width: int = 64,
        learning_rate: float = 1e-2,
        batch_size: int = 128,
        epochs: int = 10,
        prior_variance: float = 5.0,
        n_predict_samples: int = 16,
        kl_scale: float | None = None,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.prior_variance = prior_variance
        self.n_predict_samples = n_predict_samples
        self.kl_scale = kl_scale
        self.n_classes = n_classes
        self.seed = seed

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_features(X)
        y = check_labels(y, X.shape[0], self.n_classes)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if k < 2:
            raise DataError("need at least two classes")
        if self.prior_variance <= 0:
            raise ValueError("prior_variance must be positive")
        if self.n_predict_samples < 1:
            raise ValueError("n_predict_samples must be >= 1")
        if X_val is not None:
            X_val = check_features(X_val, n_features=X.shape[1], name="X_val")
            y_val = check_labels(y_val, X_val.shape[0], k)

        arch = Arch(
            dims=(X.shape[1], *([self.hidden_width] * self.hidden_layers), k),
            batch_norm=False,
            residual=False,
        )
        rng = derive_rng(self.seed, STREAM_BNN)
        mu, rho = {}, {}
        rho_init = float(
            softplus_inverse(_INIT_SIGMA_FRACTION * np.sqrt(self.prior_variance))
        )
        for layer, (fan_in, fan_out) in enumerate(arch.weight_shapes()):
            bound = 1.0 / np.sqrt(fan_in)
            mu[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            mu[f"b{layer}"] = rng.uniform(-bound, bound, size=fan_out)
            rho[f"W{layer}"] = np.full((fan_in, fan_out), rho_init)
            rho[f"b{layer}"] = np.full(fan_out, rho_init)

        n = X.shape[0]
        batch = int(self.batch_size)
        n_batches = max(1, -(-n // batch))
        kl_scale = 1.0 / n_batches if self.kl_scale is None else float(self.kl_scale)

        flat = {f"mu_{k_}": mu[k_] for k_ in mu}
        flat.update({f"rho_{k_}": rho[k_] for k_ in rho})
        optimizer = Adam(flat.keys(), self.learning_rate)
        history = {"train_loss": [], "val_accuracy": []}
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, batch):
                rows = order[start : start + batch]
                eps = {k_: rng.standard_normal(mu[k_].shape) for k_ in mu}
                loss, grad_mu, grad_rho = elbo_loss_and_grads(
                    mu, rho, eps, X[rows], y[rows], arch, self.prior_variance, kl_scale
                )
                grads = {f"mu_{k_}": grad_mu[k_] for k_ in mu}
                grads.update({f"rho_{k_}": grad_rho[k_] for k_ in rho})
                optimizer.step(flat, grads)
                epoch_losses.append(loss)
            history["train_loss"].append(float(np.mean(epoch_losses)))
            if X_val is not None:
                # validation tracked at the posterior mean (deterministic pass)
                logits, _ = forward_eval(mu, X_val, arch, {})
                history["val_accuracy"].append(
                    float((logits.argmax(axis=1) == y_val).mean())
                )

        self.arch_ = arch
        self.mu_ = mu
        self.rho_ = rho
        self.kl_scale_ = kl_scale
        self.history_ = history
        self.classes_ = np.arange(k)
        self.n_classes_ = k
        self.n_features_in_ = X.shape[1]
        return self

    # -- prediction --------------------------------------------------------

    def sample_proba(self, X, n_samples: int | None = None, seed: int | None = None):
        """Member probabilities from N posterior weight draws, (n, N, K).

        With no explicit ``seed`` the draw stream is derived from the
        model's own seed, so repeated calls return identical members.
        """
        check_is_fitted(self, "mu_")
        X = check_features(X, n_features=self.n_features_in_)
        n_draws = self.n_predict_samples if n_samples is None else int(n_samples)
        if n_draws < 1:
            raise ValueError("n_samples must be >= 1")
        base = self.seed if seed is None else seed
        rng = derive_rng(base, STREAM_BNN, 0x9E)
        sigma = {k: softplus(self.rho_[k]) for k in self.rho_}
        members = np.empty((X.shape[0], n_draws, self.n_classes_))
        for draw in range(n_draws):
            weights = {
                k: self.mu_[k] + sigma[k] * rng.standard_normal(self.mu_[k].shape)
                for k in self.mu_
            }
            logits, _ = forward_eval(weights, X, self.arch_, {})
            members[:, draw, :] = softmax(logits)
        return members

    def predict_proba(self, X, n_samples: int | None = None, seed: int | None = None):
        return self.sample_proba(X, n_samples=n_samples, seed=seed).mean(axis=1)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "mu_")
        payload = {f"mu_{k}": v for k, v in self.mu_.items()}
        payload.update({f"rho_{k}": v for k, v in self.rho_.items()})
        meta = {
            "settings": self.get_params(),
            "dims": list(self.arch_.dims),
            "n_classes": int(self.n_classes_),
            "n_features": int(self.n_features_in_),
            "kl_scale": self.kl_scale_,
            "history": self.history_,
        }
        np.savez(
            path, format=np.array(_MODEL_FORMAT), meta=np.array(json.dumps(meta)), **payload
        )

    @classmethod
    def load(cls, path) -> "BayesianMlpClassifier":
        with np.load(path) as archive:
            if "format" not in archive or str(archive["format"]) != _MODEL_FORMAT:
                raise DataError(f"unrecognized model dump format in {path}")
            meta = json.loads(str(archive["meta"]))
            model = cls(**meta["settings"])
            model.arch_ = Arch(dims=tuple(meta["dims"]), batch_norm=False)
            model.mu_ = {
                k[len("mu_") :]: archive[k]
                for k in archive.files
                if k.startswith("mu_")
            }
            model.rho_ = {
                k[len("rho_") :]: archive[k]
                for k in archive.files
                if k.startswith("rho_")
            }
            model.kl_scale_ = meta["kl_scale"]
            model.history_ = meta["history"]
            model.n_classes_ = meta["n_classes"]
            model.classes_ = np.arange(model.n_classes_)
            model.n_features_in_ = meta["n_features"]
        return model
