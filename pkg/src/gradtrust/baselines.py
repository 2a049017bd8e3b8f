"""Comparison trust scores computable from logits and features alone.

Sign convention everywhere: higher score = more trust in the prediction.
Entropy is therefore negated and NLL reported as the log-probability of
the predicted class, so every metric ranks the same way around.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .tensor import as_vector, logsumexp, softmax

__all__ = [
    "MetricId",
    "ALL_METRICS",
    "softmax_confidence",
    "entropy_trust",
    "nll_trust",
    "margin_trust",
    "gradnorm_trust",
]

MARGIN_MODES = ("probability", "logit")


class MetricId(str, Enum):
    """Closed set of score column names; serialized lowercase in CSV headers."""

    SOFTMAX = "softmax"
    ENTROPY = "entropy"
    NLL = "nll"
    MARGIN = "margin"
    GRADNORM = "gradnorm"
    GRADTRUST = "gradtrust"


ALL_METRICS = tuple(m.value for m in MetricId)


def _class_logits(logits) -> np.ndarray:
    y = as_vector(logits)
    if y.size < 2:
        raise ValueError("need at least 2 classes")
    return y


def softmax_confidence(logits) -> float:
    """Largest softmax probability; the classic confidence readout."""
    return float(np.max(softmax(_class_logits(logits))))


def entropy_trust(logits) -> float:
    """Negative Shannon entropy of the softmax distribution, in [-ln N, 0]."""
    p = softmax(_class_logits(logits))
    nonzero = p > 0.0  # p can underflow to exactly 0 for extreme logits
    return float(np.sum(p[nonzero] * np.log(p[nonzero])))


def nll_trust(logits) -> float:
    """Log-probability of the predicted class, via logsumexp (never ln(softmax))."""
    y = _class_logits(logits)
    return float(np.max(y) - logsumexp(y))


def margin_trust(logits, mode: str = "probability") -> float:
    """Gap between the top two classes.

    Default is the posterior margin p(1) - p(2); mode "logit" uses the raw
    logit gap instead.
    """
    y = _class_logits(logits)
    if mode == "probability":
        y = softmax(y)
    elif mode != "logit":
        raise ValueError(f"margin mode must be one of {MARGIN_MODES}, got {mode!r}")
    top2 = np.sort(y)[-2:]
    return float(top2[1] - top2[0])


def gradnorm_trust(features, logits) -> float:
    """L1 norm of the last-layer gradient of cross-entropy toward uniform.

    For a linear last layer that gradient is outer(features, p - u) with u the
    uniform vector, so its L1 norm factorizes to ||features||_1 * ||p - u||_1.
    Larger norm = more in-distribution = more trust.
    """
    f = as_vector(features)
    p = softmax(_class_logits(logits))
    return float(np.sum(np.abs(f)) * np.sum(np.abs(p - 1.0 / p.size)))
