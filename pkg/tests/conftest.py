import numpy as np
import pytest

import gradtrust as gt

# Hand-checkable single-sample bundle: features [1,2] against weights chosen
# so the logits come out as [3, 1, 2, 0.5] (all values exact in float32).
WORKED_FEATURES = [1.0, 2.0]
WORKED_WEIGHTS = [[1.0, 0.0, 0.0, 0.0],
                  [1.0, 0.5, 1.0, 0.25]]
WORKED_LOGITS = [3.0, 1.0, 2.0, 0.5]


@pytest.fixture
def worked_bundle():
    return gt.make_bundle(
        features=np.array([WORKED_FEATURES]),
        weights=np.array(WORKED_WEIGHTS),
        bias=np.zeros(4),
        labels=np.array([0], dtype=np.int64),
    )


@pytest.fixture
def small_bundle():
    """Seeded 12-sample, 5-class bundle with varied features."""
    rng = np.random.default_rng(42)
    features = rng.standard_normal((12, 6))
    weights = rng.standard_normal((6, 5))
    bias = rng.standard_normal(5)
    labels = rng.integers(0, 5, size=12)
    return gt.ensure_logits(gt.make_bundle(
        features=features, weights=weights, bias=bias, labels=labels))
