"""Prediction-trust scoring from counterfactual last-layer gradients.

The library consumes last-layer bundles (penultimate features, final-layer
weights and bias, labels) and produces per-sample trust scores: the
gradient-variance trust ratio plus five classical baselines, together with a
percentile-binned accuracy/F1 evaluation harness and a synthetic lab for
end-to-end verification.
"""

from .baselines import (ALL_METRICS, MARGIN_MODES, MetricId, entropy_trust,
                        gradnorm_trust, margin_trust, nll_trust,
                        softmax_confidence)
from .bundle import (BadMagic, BundleError, BundleFormatError, InvalidBundle,
                     LastLayerBundle, Truncated, UnsupportedVersion,
                     consistency_warnings, ensure_logits, make_bundle,
                     read_bundle, validate_bundle, write_bundle)
from .evaluation import (DEGENERATE_POLICIES, EvalCurve, MalformedScoreCSV,
                         ScoreTable, accuracy_curve, area, build_score_table,
                         emit_curves, f1_curve, percentile_threshold,
                         read_score_csv, write_score_csv)
from .synth import (BlobDataset, BlobSpec, TinyMlp, TrainingDiverged,
                    TrainResult, export_bundle, finite_diff_grad, gen_blobs,
                    train_mlp)
from .trust import (DEGENERATE_SENTINEL, DENOMINATOR_MODES, VARIANCE_MODES,
                    CounterfactualPlan, DegenerateScore, GradientReport,
                    InvalidK, batch_gradtrust, counterfactual_loss,
                    counterfactual_targets, grad_last_layer, gradient_report,
                    gradtrust_score, loss_gradient_wrt_logits, predict,
                    variance_vector)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # trust scoring
    "CounterfactualPlan", "GradientReport", "InvalidK", "DegenerateScore",
    "DEGENERATE_SENTINEL", "VARIANCE_MODES", "DENOMINATOR_MODES",
    "predict", "counterfactual_targets", "counterfactual_loss",
    "loss_gradient_wrt_logits", "grad_last_layer", "variance_vector",
    "gradient_report", "gradtrust_score", "batch_gradtrust",
    # baselines
    "MetricId", "ALL_METRICS", "MARGIN_MODES", "softmax_confidence",
    "entropy_trust", "nll_trust", "margin_trust", "gradnorm_trust",
    # bundles
    "LastLayerBundle", "BundleError", "BadMagic", "UnsupportedVersion",
    "Truncated", "BundleFormatError", "InvalidBundle", "make_bundle",
    "validate_bundle", "consistency_warnings", "ensure_logits",
    "read_bundle", "write_bundle",
    # evaluation
    "ScoreTable", "EvalCurve", "MalformedScoreCSV", "DEGENERATE_POLICIES",
    "percentile_threshold", "accuracy_curve", "f1_curve", "area",
    "build_score_table", "emit_curves", "write_score_csv", "read_score_csv",
    # synthetic lab
    "BlobSpec", "BlobDataset", "TinyMlp", "TrainResult", "TrainingDiverged",
    "gen_blobs", "train_mlp", "export_bundle", "finite_diff_grad",
]
