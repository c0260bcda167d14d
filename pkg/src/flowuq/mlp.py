"""Feed-forward classifier trained by backpropagation, in plain numpy.

The default network is ``input -> [linear -> batch norm -> relu] x L ->
linear`` with weight decay on every weight matrix, trained with Adam on
shuffled mini-batches.  ``ddu_mode`` turns on the two architectural
ingredients of feature-space density estimation: an identity skip around
every width-preserving hidden block (normalize, activate, then add the
skip) and spectral normalization of the weight matrices, applied after
each update step by dividing any matrix whose power-iteration estimate
exceeds one.

The forward/backward primitives are module functions over a plain dict of
parameter arrays, so gradients can be checked against finite differences
and the Bayesian variant can reuse them with sampled weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import DataError
from .numerics import STREAM_MLP, derive_rng, softmax, spectral_norm
from .validation import check_features, check_is_fitted, check_labels

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.99
_MODEL_FORMAT = "flowuq-mlp-v1"


@dataclass(frozen=True)
class Arch:
    """Static shape of a network: layer sizes and the two mode switches."""

    dims: tuple  # (input, hidden..., n_classes)
    batch_norm: bool = True
    residual: bool = False

    @property
    def n_hidden(self) -> int:
        return len(self.dims) - 2

    def weight_shapes(self):
        return [(self.dims[i], self.dims[i + 1]) for i in range(len(self.dims) - 1)]

    def skips(self):
        """Whether each hidden layer gets an identity skip (widths must match)."""
        return [
            self.residual and self.dims[i] == self.dims[i + 1]
            for i in range(self.n_hidden)
        ]


def init_params(arch: Arch, rng: np.random.Generator) -> dict:
    """Fan-in-uniform weight init; batch-norm scale 1, shift 0."""
    params = {}
    for layer, (fan_in, fan_out) in enumerate(arch.weight_shapes()):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{layer}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{layer}"] = rng.uniform(-bound, bound, size=fan_out)
        if arch.batch_norm and layer < arch.n_hidden:
            params[f"gamma{layer}"] = np.ones(fan_out)
            params[f"beta{layer}"] = np.zeros(fan_out)
    return params


def init_running_stats(arch: Arch) -> dict:
    return {
        "mean": [np.zeros(arch.dims[i + 1]) for i in range(arch.n_hidden)],
        "var": [np.ones(arch.dims[i + 1]) for i in range(arch.n_hidden)],
    }


def forward_train(params: dict, X: np.ndarray, arch: Arch):
    """Training-mode forward pass (batch statistics); returns logits, caches."""
    skips = arch.skips()
    x = X
    caches = []
    for layer in range(arch.n_hidden):
        a = x @ params[f"W{layer}"] + params[f"b{layer}"]
        cache = {"x": x, "a": a}
        if arch.batch_norm:
            mean = a.mean(axis=0)
            var = a.var(axis=0)
            inv = 1.0 / np.sqrt(var + _BN_EPS)
            xhat = (a - mean) * inv
            y = params[f"gamma{layer}"] * xhat + params[f"beta{layer}"]
            cache.update(mean=mean, var=var, inv=inv, xhat=xhat)
        else:
            y = a
        h = np.maximum(y, 0.0)
        cache["relu_mask"] = y > 0.0
        if skips[layer]:
            h = h + x
        caches.append(cache)
        x = h
    last = arch.n_hidden
    logits = x @ params[f"W{last}"] + params[f"b{last}"]
    caches.append({"x": x})
    return logits, caches


def forward_eval(params: dict, X: np.ndarray, arch: Arch, running: dict):
    """Inference-mode forward pass (running statistics); returns logits, features."""
    skips = arch.skips()
    x = X
    for layer in range(arch.n_hidden):
        a = x @ params[f"W{layer}"] + params[f"b{layer}"]
        if arch.batch_norm:
            inv = 1.0 / np.sqrt(running["var"][layer] + _BN_EPS)
            xhat = (a - running["mean"][layer]) * inv
            y = params[f"gamma{layer}"] * xhat + params[f"beta{layer}"]
        else:
            y = a
        h = np.maximum(y, 0.0)
        if skips[layer]:
            h = h + x
        x = h
    last = arch.n_hidden
    logits = x @ params[f"W{last}"] + params[f"b{last}"]
    return logits, x


def backward(params: dict, caches: list, dlogits: np.ndarray, arch: Arch) -> dict:
    """Gradients of whatever produced ``dlogits``, w.r.t. every parameter."""
    skips = arch.skips()
    grads = {}
    last = arch.n_hidden
    features = caches[last]["x"]
    grads[f"W{last}"] = features.T @ dlogits
    grads[f"b{last}"] = dlogits.sum(axis=0)
    dx = dlogits @ params[f"W{last}"].T
    for layer in reversed(range(arch.n_hidden)):
        cache = caches[layer]
        d_out = dx
        dh = d_out
        dy = dh * cache["relu_mask"]
        if arch.batch_norm:
            xhat, inv = cache["xhat"], cache["inv"]
            grads[f"gamma{layer}"] = (dy * xhat).sum(axis=0)
            grads[f"beta{layer}"] = dy.sum(axis=0)
            dxhat = dy * params[f"gamma{layer}"]
            m = dy.shape[0]
            da = (
                inv
                / m
                * (
                    m * dxhat
                    - dxhat.sum(axis=0)
                    - xhat * (dxhat * xhat).sum(axis=0)
                )
            )
        else:
            da = dy
        grads[f"W{layer}"] = cache["x"].T @ da
        grads[f"b{layer}"] = da.sum(axis=0)
        dx = da @ params[f"W{layer}"].T
        if skips[layer]:
            dx = dx + d_out
    return grads


def cross_entropy(logits: np.ndarray, y: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    m = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(m), y].mean()
    dlogits = np.exp(log_probs)
    dlogits[np.arange(m), y] -= 1.0
    return loss, dlogits / m


def loss_and_grads(
    params: dict, X: np.ndarray, y: np.ndarray, arch: Arch, weight_decay: float
):
    """Training loss (cross-entropy + weight decay) and all its gradients.

    The decay term is ``weight_decay * sum_l ||W_l||^2`` over weight
    matrices only (not biases or batch-norm parameters).
    """
    logits, caches = forward_train(params, X, arch)
    loss, dlogits = cross_entropy(logits, y)
    grads = backward(params, caches, dlogits, arch)
    n_layers = arch.n_hidden + 1
    for layer in range(n_layers):
        w = params[f"W{layer}"]
        loss += weight_decay * float(np.sum(w * w))
        grads[f"W{layer}"] = grads[f"W{layer}"] + 2.0 * weight_decay * w
    return loss, grads, caches


class Adam:
    """Standard Adam over a dict of parameter arrays."""

    def __init__(self, keys, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: None for k in keys}
        self.v = {k: None for k in keys}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key in self.m:
            g = grads[key]
            if self.m[key] is None:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
            m_hat = self.m[key] / (1.0 - b1**self.t)
            v_hat = self.v[key] / (1.0 - b2**self.t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class MlpClassifier(BaseEstimator, ClassifierMixin):
    """Multi-layer perceptron with optional density-friendly mode.

    Parameters
    ----------
    hidden_layers : int
        Number of hidden layers.
    hidden_width : int
        Neurons per hidden layer.
    weight_decay : float
        L2 penalty on each weight matrix.
    learning_rate, epochs : float, int
        Adam step size and number of passes over the data.
    batch_size : int or None
        Mini-batch size; None picks 256 in ``ddu_mode`` and 128 otherwise.
    batch_norm : bool
        Batch-normalize each hidden pre-activation (running statistics with
        momentum 0.99 at inference).
    ddu_mode : bool
        Add identity skips on width-preserving hidden layers and keep every
        weight matrix's spectral norm at or below one.
    n_classes : int or None
        Output width; None infers ``max(y) + 1`` at fit time.
    seed : int
        Drives initialization and batch shuffling; same seed, same weights.
    """

    def __init__(
        self,
        hidden_layers: int = 2,
        hidden_width: int = 64,
        weight_decay: float = 0.1,
        learning_rate: float = 1e-2,
        batch_size: int | None = None,
        epochs: int = 10,
        batch_norm: bool = True,
        ddu_mode: bool = False,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.weight_decay = weight_decay
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.batch_norm = batch_norm
        self.ddu_mode = ddu_mode
        self.n_classes = n_classes
        self.seed = seed

    # -- training ----------------------------------------------------------

    def _resolve_batch_size(self) -> int:
        if self.batch_size is not None:
            return int(self.batch_size)
        return 256 if self.ddu_mode else 128

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_features(X)
        y = check_labels(y, X.shape[0], self.n_classes)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if k < 2:
            raise DataError("need at least two classes")
        if self.epochs < 0 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValueError("epochs must be >= 0 and layer sizes positive")
        if X_val is not None:
            X_val = check_features(X_val, n_features=X.shape[1], name="X_val")
            y_val = check_labels(y_val, X_val.shape[0], k)

        arch = Arch(
            dims=(X.shape[1], *([self.hidden_width] * self.hidden_layers), k),
            batch_norm=self.batch_norm,
            residual=self.ddu_mode,
        )
        rng = derive_rng(self.seed, STREAM_MLP)
        params = init_params(arch, rng)
        running = init_running_stats(arch)
        sn_vectors = None
        if self.ddu_mode:
            sn_vectors = {}
            for layer, (fan_in, _) in enumerate(arch.weight_shapes()):
                u = rng.standard_normal(fan_in)
                sn_vectors[f"W{layer}"] = u / np.linalg.norm(u)

        batch = self._resolve_batch_size()
        optimizer = Adam(params.keys(), self.learning_rate)
        history = {"train_loss": [], "val_accuracy": []}
        n = X.shape[0]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, batch):
                rows = order[start : start + batch]
                loss, grads, caches = loss_and_grads(
                    params, X[rows], y[rows], arch, self.weight_decay
                )
                if arch.batch_norm:
                    for layer in range(arch.n_hidden):
                        running["mean"][layer] = (
                            _BN_MOMENTUM * running["mean"][layer]
                            + (1.0 - _BN_MOMENTUM) * caches[layer]["mean"]
                        )
                        running["var"][layer] = (
                            _BN_MOMENTUM * running["var"][layer]
                            + (1.0 - _BN_MOMENTUM) * caches[layer]["var"]
                        )
                optimizer.step(params, grads)
                if self.ddu_mode:
                    self._spectral_step(params, sn_vectors, arch)
                epoch_losses.append(loss)
            history["train_loss"].append(float(np.mean(epoch_losses)))
            if X_val is not None:
                logits, _ = forward_eval(params, X_val, arch, running)
                history["val_accuracy"].append(
                    float((logits.argmax(axis=1) == y_val).mean())
                )
        if self.ddu_mode:
            # settle the invariant with a high-precision estimate
            for layer in range(arch.n_hidden + 1):
                w = params[f"W{layer}"]
                sigma = spectral_norm(w, iterations=30)
                if sigma > 1.0:
                    params[f"W{layer}"] = w / sigma

        self.arch_ = arch
        self.params_ = params
        self.running_ = running
        self.history_ = history
        self.classes_ = np.arange(k)
        self.n_classes_ = k
        self.n_features_in_ = X.shape[1]
        return self

    @staticmethod
    def _spectral_step(params: dict, sn_vectors: dict, arch: Arch) -> None:
        """One persistent-vector power iteration per matrix; rescale if > 1."""
        for layer in range(arch.n_hidden + 1):
            key = f"W{layer}"
            w = params[key]
            u = sn_vectors[key]
            v = w.T @ u
            nv = np.linalg.norm(v)
            if nv == 0.0:
                continue
            v /= nv
            wv = w @ v
            sigma = np.linalg.norm(wv)
            if sigma == 0.0:
                continue
            sn_vectors[key] = wv / sigma
            if sigma > 1.0:
                params[key] = w / sigma

    # -- inference ---------------------------------------------------------

    def _forward(self, X):
        check_is_fitted(self, "params_")
        X = check_features(X, n_features=self.n_features_in_)
        return forward_eval(self.params_, X, self.arch_, self.running_)

    def predict_logits(self, X) -> np.ndarray:
        logits, _ = self._forward(X)
        return logits

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.predict_logits(X))

    def predict(self, X) -> np.ndarray:
        return self.predict_logits(X).argmax(axis=1)

    def transform(self, X) -> np.ndarray:
        """Hidden representation: output of the last hidden block."""
        _, features = self._forward(X)
        return features

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Dump weights, running statistics and settings (bit-exact)."""
        check_is_fitted(self, "params_")
        payload = {f"param_{k}": v for k, v in self.params_.items()}
        for layer in range(self.arch_.n_hidden):
            payload[f"running_mean_{layer}"] = self.running_["mean"][layer]
            payload[f"running_var_{layer}"] = self.running_["var"][layer]
        meta = {
            "settings": self.get_params(),
            "dims": list(self.arch_.dims),
            "batch_norm": self.arch_.batch_norm,
            "residual": self.arch_.residual,
            "n_classes": int(self.n_classes_),
            "n_features": int(self.n_features_in_),
            "history": self.history_,
        }
        np.savez(
            path, format=np.array(_MODEL_FORMAT), meta=np.array(json.dumps(meta)), **payload
        )

    @classmethod
    def load(cls, path) -> "MlpClassifier":
        with np.load(path) as archive:
            if "format" not in archive or str(archive["format"]) != _MODEL_FORMAT:
                raise DataError(f"unrecognized model dump format in {path}")
            meta = json.loads(str(archive["meta"]))
            model = cls(**meta["settings"])
            model.arch_ = Arch(
                dims=tuple(meta["dims"]),
                batch_norm=meta["batch_norm"],
                residual=meta["residual"],
            )
            model.params_ = {
                k[len("param_") :]: archive[k]
                for k in archive.files
                if k.startswith("param_")
            }
            model.running_ = {
                "mean": [
                    archive[f"running_mean_{i}"] for i in range(model.arch_.n_hidden)
                ],
                "var": [
                    archive[f"running_var_{i}"] for i in range(model.arch_.n_hidden)
                ],
            }
            model.history_ = meta["history"]
            model.n_classes_ = meta["n_classes"]
            model.classes_ = np.arange(model.n_classes_)
            model.n_features_in_ = meta["n_features"]
        return model
