"""Trust scores from counterfactual last-layer gradients.

The score for one sample asks: if the label were one of the k strongest
alternative classes instead of the prediction, how large and how lopsided
would the required weight update be?  Because the last layer is linear,
the gradient of the counterfactual MSE loss has a closed form (an outer
product), so no autodiff framework is involved.  Per class we take the
variance of the squared gradient entries; the trust score is the largest
such variance divided by the mean over the counterfactual classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import LastLayerBundle, ensure_logits
from .tensor import as_matrix, as_vector, outer, population_variance

__all__ = [
    "InvalidK",
    "DegenerateScore",
    "CounterfactualPlan",
    "GradientReport",
    "predict",
    "counterfactual_targets",
    "counterfactual_loss",
    "loss_gradient_wrt_logits",
    "grad_last_layer",
    "variance_vector",
    "gradient_report",
    "gradtrust_score",
    "batch_gradtrust",
    "DEGENERATE_SENTINEL",
]

VARIANCE_MODES = ("squared", "raw")
DENOMINATOR_MODES = ("counterfactuals", "remaining")

# Placeholder placed in score arrays where the ratio was 0/0; ranks below
# every finite score, and callers get an explicit mask alongside.
DEGENERATE_SENTINEL = -np.inf


class InvalidK(ValueError):
    """k outside 1 <= k <= N-1."""


class DegenerateScore(ArithmeticError):
    """Trust ratio is 0/0, e.g. constant-magnitude features or a zero gradient."""


@dataclass(frozen=True)
class CounterfactualPlan:
    """Which classes play the counterfactual role for one sample.

    `counterfactuals` holds the k strongest classes after removing the
    prediction, ordered by descending logit (ties: ascending index).
    `targets` is the binary N-vector with ones exactly on those classes.
    """

    predicted: int
    counterfactuals: tuple[int, ...]
    targets: np.ndarray
    k: int


@dataclass(frozen=True)
class GradientReport:
    """Everything the trust ratio is built from, for inspection and tests."""

    grad: np.ndarray            # d x N, column j = residual_grad[j] * features
    residual_grad: np.ndarray   # dJ/dlogit per class
    variance: np.ndarray        # per-class variance vector
    score: float                # may be +inf


def predict(logits) -> int:
    """Index of the maximum logit; ties break to the lowest index."""
    y = as_vector(logits)
    if y.size < 2:
        raise ValueError("prediction needs at least 2 classes")
    return int(np.argmax(y))


def counterfactual_targets(logits, k: int) -> CounterfactualPlan:
    """Build the binary counterfactual target vector for the top-k alternatives.

    The predicted class is never a counterfactual: members are the classes at
    ranks 2..k+1 of the descending logit order, so targets[predicted] == 0 and
    exactly k entries are one.  Deterministic under ties (stable sort).
    """
    y = as_vector(logits)
    n = y.size
    if k < 1 or k > n - 1:
        raise InvalidK(f"k must satisfy 1 <= k <= N-1, got k={k} with N={n}")
    order = np.argsort(-y, kind="stable")
    predicted = int(order[0])
    members = tuple(int(j) for j in order[1:k + 1])
    targets = np.zeros(n)
    targets[list(members)] = 1.0
    return CounterfactualPlan(predicted=predicted, counterfactuals=members,
                              targets=targets, k=k)


def _normalizer(k: int) -> float:
    # 1/(k-1) is the printed constant; it cancels in the trust ratio, so the
    # k=1 case simply defines it as 1.
    return 1.0 if k == 1 else 1.0 / (k - 1)


def counterfactual_loss(logits, plan: CounterfactualPlan, normalizer: float | None = None) -> float:
    """MSE between logits and the counterfactual targets, over all N classes."""
    y = as_vector(logits)
    if y.size != plan.targets.size:
        raise ValueError("plan was built for a different number of classes")
    if normalizer is None:
        normalizer = _normalizer(plan.k)
    return float(normalizer * np.sum((y - plan.targets) ** 2))


def loss_gradient_wrt_logits(logits, plan: CounterfactualPlan,
                             normalizer: float | None = None) -> np.ndarray:
    """Per-class derivative of the counterfactual MSE loss: 2c * (logit - target)."""
    y = as_vector(logits)
    if y.size != plan.targets.size:
        raise ValueError("plan was built for a different number of classes")
    if normalizer is None:
        normalizer = _normalizer(plan.k)
    return 2.0 * normalizer * (y - plan.targets)


def grad_last_layer(features, residual_grad) -> np.ndarray:
    """Exact weight gradient for a linear layer: outer(features, residual).

    Column j is residual_grad[j] * features; bias gradients are not included.
    """
    return outer(features, residual_grad)


def variance_vector(g, mode: str = "squared") -> np.ndarray:
    """Per-class spread of the gradient: variance over each d-entry column.

    mode "squared" (default) squares the entries first, i.e. the spread of the
    per-weight squared gradient magnitudes; "raw" uses the entries as-is.
    """
    grad = as_matrix(g)
    if mode == "squared":
        grad = grad ** 2
    elif mode != "raw":
        raise ValueError(f"variance mode must be one of {VARIANCE_MODES}, got {mode!r}")
    return np.var(grad, axis=0)


def gradient_report(features, logits, k: int, variance_mode: str = "squared",
                    denominator_mode: str = "counterfactuals") -> GradientReport:
    """Full per-sample computation: plan, gradient, variance vector, score."""
    if denominator_mode not in DENOMINATOR_MODES:
        raise ValueError(
            f"denominator mode must be one of {DENOMINATOR_MODES}, got {denominator_mode!r}")
    plan = counterfactual_targets(logits, k)
    residual = loss_gradient_wrt_logits(logits, plan)
    grad = grad_last_layer(features, residual)
    variance = variance_vector(grad, mode=variance_mode)

    top = int(np.argmax(variance))  # ties -> lowest index
    numerator = float(variance[top])
    if denominator_mode == "counterfactuals":
        denom_idx = [j for j in plan.counterfactuals if j != top]
    else:
        denom_idx = [j for j in range(variance.size) if j != top]
    denominator = float(np.mean(variance[denom_idx])) if denom_idx else 0.0

    if denominator == 0.0:
        if numerator == 0.0:
            raise DegenerateScore(
                "trust ratio is 0/0: every per-class gradient variance vanishes")
        score = np.inf
    else:
        score = numerator / denominator
    return GradientReport(grad=grad, residual_grad=residual, variance=variance, score=score)


def gradtrust_score(features, logits, k: int, variance_mode: str = "squared",
                    denominator_mode: str = "counterfactuals") -> float:
    """Trust ratio for one sample: max variance over mean counterfactual variance.

    Returns +inf when all counterfactual variances vanish but the maximum does
    not; raises DegenerateScore on 0/0 (e.g. constant-magnitude features).
    """
    report = gradient_report(features, logits, k, variance_mode=variance_mode,
                             denominator_mode=denominator_mode)
    return report.score


def batch_gradtrust(bundle: LastLayerBundle, k: int, variance_mode: str = "squared",
                    denominator_mode: str = "counterfactuals") -> tuple[np.ndarray, np.ndarray]:
    """Per-sample trust scores for a whole bundle.

    Returns (scores, degenerate): degenerate samples carry DEGENERATE_SENTINEL
    in `scores` and True in the mask.  Samples are independent; output order
    matches input order.
    """
    bundle = ensure_logits(bundle)
    n = bundle.n_classes
    if k < 1 or k > n - 1:
        raise InvalidK(f"k must satisfy 1 <= k <= N-1, got k={k} with N={n}")
    m = bundle.n_samples
    scores = np.empty(m)
    degenerate = np.zeros(m, dtype=bool)
    for i in range(m):
        try:
            scores[i] = gradtrust_score(bundle.features[i], bundle.logits[i], k,
                                        variance_mode=variance_mode,
                                        denominator_mode=denominator_mode)
        except DegenerateScore:
            scores[i] = DEGENERATE_SENTINEL
            degenerate[i] = True
    return scores, degenerate
