"""Desk-scale verification lab: seeded blobs, a tiny MLP, and a gradient oracle.

Everything here exists to manufacture genuine last-layer bundles and to check
the analytic gradient against central differences, without any deep-learning
framework in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import LastLayerBundle, make_bundle
from .tensor import as_matrix, as_vector
from .trust import CounterfactualPlan

__all__ = [
    "BlobSpec",
    "BlobDataset",
    "TinyMlp",
    "TrainResult",
    "TrainingDiverged",
    "gen_blobs",
    "train_mlp",
    "export_bundle",
    "finite_diff_grad",
]


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class BlobSpec:
    """Gaussian blob dataset parameters; all randomness flows from `seed`."""

    n_classes: int
    dim: int
    samples_per_class: int
    class_separation: float
    noise_sigma: float
    seed: int

    def __post_init__(self):
        if self.n_classes < 1 or self.dim < 1 or self.samples_per_class < 1:
            raise ValueError("n_classes, dim and samples_per_class must be at least 1")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.class_separation < 0:
            raise ValueError("class_separation must be nonnegative")


@dataclass(frozen=True)
class BlobDataset:
    """Generated samples with a fixed seeded 80/20 train/eval split."""

    train_features: np.ndarray
    train_labels: np.ndarray
    eval_features: np.ndarray
    eval_labels: np.ndarray
    spec: BlobSpec

    @property
    def n_train(self) -> int:
        return self.train_labels.size

    @property
    def n_eval(self) -> int:
        return self.eval_labels.size


def gen_blobs(spec: BlobSpec) -> BlobDataset:
    """Sample gaussian blobs around class means seeded onto a sphere.

    Means are drawn deterministically from the seed and scaled to radius
    class_separation; samples are mean + gaussian(noise_sigma) noise.  The
    80/20 split comes from one seeded shuffle, so the same spec always
    yields the same dataset.
    """
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.n_classes, spec.dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    np.maximum(norms, np.finfo(np.float64).tiny, out=norms)
    means = means / norms * spec.class_separation

    m = spec.n_classes * spec.samples_per_class
    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), spec.samples_per_class)
    features = means[labels] + spec.noise_sigma * rng.standard_normal((m, spec.dim))

    order = rng.permutation(m)
    n_train = min(4 * m // 5, m - 1)  # keep the eval split nonempty
    train_idx, eval_idx = order[:n_train], order[n_train:]
    return BlobDataset(
        train_features=features[train_idx],
        train_labels=labels[train_idx],
        eval_features=features[eval_idx],
        eval_labels=labels[eval_idx],
        spec=spec,
    )


@dataclass(frozen=True)
class TinyMlp:
    """One ReLU hidden layer; out_weights/out_bias are the exported last layer."""

    hidden_weights: np.ndarray
    hidden_bias: np.ndarray
    out_weights: np.ndarray
    out_bias: np.ndarray

    def __post_init__(self):
        dim, hidden = self.hidden_weights.shape
        if self.hidden_bias.shape != (hidden,):
            raise ValueError("hidden_bias does not match hidden width")
        if self.out_weights.shape[0] != hidden:
            raise ValueError("out_weights does not match hidden width")
        if self.out_bias.shape != (self.out_weights.shape[1],):
            raise ValueError("out_bias does not match class count")
        for arr in (self.hidden_weights, self.hidden_bias, self.out_weights, self.out_bias):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.out_bias.size

    def hidden_activations(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.hidden_weights + self.hidden_bias, 0.0)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.hidden_activations(x) @ self.out_weights + self.out_bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1).astype(np.int64)


@dataclass(frozen=True)
class TrainResult:
    model: TinyMlp
    train_accuracy: float
    final_loss: float


def _mean_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    return float(np.mean(log_z - shifted[np.arange(labels.size), labels]))


def train_mlp(dataset: BlobDataset, hidden: int = 32, lr: float = 0.1,
              epochs: int = 500, seed: int = 0) -> TrainResult:
    """Full-batch gradient descent on softmax cross-entropy.

    Deterministic given (dataset, seed).  Raises TrainingDiverged as soon as
    the loss stops being finite.  epochs=0 returns the seeded initialization.
    """
    x, y = dataset.train_features, dataset.train_labels
    m, dim = x.shape
    if m < 1:
        raise ValueError("training split is empty")
    n = dataset.spec.n_classes

    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((dim, hidden)) / np.sqrt(dim)
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((hidden, n)) / np.sqrt(hidden)
    b2 = np.zeros(n)

    onehot = np.zeros((m, n))
    onehot[np.arange(m), y] = 1.0
    # Overflow is how divergence announces itself; silence the warnings and
    # let the finiteness check below turn it into TrainingDiverged.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            pre = x @ w1 + b1
            h = np.maximum(pre, 0.0)
            logits = h @ w2 + b2
            loss = _mean_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}")

            shifted = logits - logits.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            probs = exp / exp.sum(axis=1, keepdims=True)
            d_logits = (probs - onehot) / m
            d_w2 = h.T @ d_logits
            d_b2 = d_logits.sum(axis=0)
            d_h = (d_logits @ w2.T) * (pre > 0)
            d_w1 = x.T @ d_h
            d_b1 = d_h.sum(axis=0)
            w1 -= lr * d_w1
            b1 -= lr * d_b1
            w2 -= lr * d_w2
            b2 -= lr * d_b2

    if not np.all(np.isfinite(w1)) or not np.all(np.isfinite(w2)):
        raise TrainingDiverged("parameters became non-finite after the final update")
    model = TinyMlp(hidden_weights=w1, hidden_bias=b1, out_weights=w2, out_bias=b2)
    final_logits = model.logits(x)
    accuracy = float(np.mean(np.argmax(final_logits, axis=1) == y))
    return TrainResult(model=model, train_accuracy=accuracy,
                       final_loss=_mean_cross_entropy(final_logits, y))


def export_bundle(model: TinyMlp, dataset: BlobDataset) -> LastLayerBundle:
    """Capture the eval split through the model as a last-layer bundle."""
    features = model.hidden_activations(dataset.eval_features)
    logits = features @ model.out_weights + model.out_bias
    spec = dataset.spec
    meta = {
        "source": "synthetic-blobs",
        "n_classes": str(spec.n_classes),
        "input_dim": str(spec.dim),
        "class_separation": repr(spec.class_separation),
        "noise_sigma": repr(spec.noise_sigma),
        "data_seed": str(spec.seed),
    }
    return make_bundle(features=features, weights=model.out_weights, bias=model.out_bias,
                       labels=dataset.eval_labels, logits=logits, meta=meta)


def finite_diff_grad(features, weights, bias, plan: CounterfactualPlan,
                     h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of the counterfactual loss w.r.t. weights.

    The plan (and thus the target vector) is held fixed across perturbations,
    and the loss is evaluated from scratch here so the check is independent
    of the analytic path.  The loss is quadratic in the weights, so central
    differences are exact up to roundoff for any step size.
    """
    f = as_vector(features)
    w = as_matrix(weights)
    b = as_vector(bias)
    if h <= 0:
        raise ValueError("step size h must be positive")
    targets = np.asarray(plan.targets, dtype=np.float64)
    norm = 1.0 if plan.k == 1 else 1.0 / (plan.k - 1.0)

    def loss_at(w_mod: np.ndarray) -> float:
        residual = f @ w_mod + b - targets
        return norm * float(residual @ residual)

    grad = np.empty_like(w)
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            bumped = w.copy()
            bumped[i, j] += h
            up = loss_at(bumped)
            bumped[i, j] = w[i, j] - h
            down = loss_at(bumped)
            grad[i, j] = (up - down) / (2.0 * h)
    return grad
