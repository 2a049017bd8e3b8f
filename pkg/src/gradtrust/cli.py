"""Command-line front end: score, eval, synth, gradcheck, and report runs.

Exit codes are a stable contract: 0 ok, 2 input error, 3 config error,
4 training divergence, 5 gradient-check failure.  Every command is
deterministic given its flags and inputs; warnings go to standard error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from .baselines import ALL_METRICS
from .bundle import BundleError, read_bundle, write_bundle
from .evaluation import (DEGENERATE_POLICIES, MalformedScoreCSV, ScoreTable,
                         build_score_table, emit_curves, read_score_csv,
                         write_score_csv)
from .synth import (BlobSpec, TrainingDiverged, export_bundle, finite_diff_grad,
                    gen_blobs, train_mlp)
from .trust import (DENOMINATOR_MODES, VARIANCE_MODES, InvalidK,
                    counterfactual_targets, grad_last_layer,
                    loss_gradient_wrt_logits)

__all__ = ["RunConfig", "main", "run_score", "run_eval", "run_synth",
           "run_gradcheck", "run_report", "GRADCHECK_TOL"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5

GRADCHECK_TOL = 1e-4


class _InputError(Exception):
    """Unreadable or inconsistent input; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a single command run needs, with contract defaults."""

    command: str
    input: str = ""
    out: str = ""
    out_dir: str = ""
    k: int = 10
    metrics: tuple = ALL_METRICS
    bins: int = 100
    seed: int = 0
    variance_mode: str = "squared"
    denominator_mode: str = "counterfactuals"
    margin_mode: str = "probability"
    degenerate_policy: str = "bottom"
    svg: bool = False
    # synth lane
    classes: int = 10
    dim: int = 32
    samples_per_class: int = 100
    separation: float = 2.0
    sigma: float = 1.0
    hidden: int = 32
    lr: float = 0.1
    epochs: int = 500
    # gradcheck lane
    instances: int = 100
    h: float = 1e-4
    inject_bug: bool = False


def _read_bundle_or_die(path: str):
    try:
        return read_bundle(path)
    except OSError as exc:
        raise _InputError(f"cannot read bundle {path!r}: {exc}") from exc


def _score_table(config: RunConfig) -> ScoreTable:
    bundle = _read_bundle_or_die(config.input)
    return build_score_table(
        bundle, metrics=config.metrics, k=config.k,
        variance_mode=config.variance_mode,
        denominator_mode=config.denominator_mode,
        margin_mode=config.margin_mode)


def _warn_degenerate(table: ScoreTable) -> None:
    for metric in table.metrics:
        mask = table.degenerate_mask(metric)
        if mask.any():
            ids = [str(int(i)) for i in table.sample_ids[mask][:10]]
            more = "" if mask.sum() <= 10 else f" (first 10 of {int(mask.sum())})"
            print(f"warning: {int(mask.sum())} degenerate {metric} score(s), "
                  f"sample ids {', '.join(ids)}{more}", file=sys.stderr)


def run_score(config: RunConfig) -> int:
    """Score a bundle and write the per-sample CSV."""
    table = _score_table(config)
    _warn_degenerate(table)
    write_score_csv(table, config.out)
    return EXIT_OK


def run_eval(config: RunConfig) -> int:
    """Evaluate a scores CSV into curves.csv and summary.csv."""
    table = read_score_csv(config.input)
    metrics = config.metrics if config.metrics else table.metrics
    missing = [m for m in metrics if m not in table.scores]
    if missing:
        raise _InputError(
            f"metric column(s) not present in {config.input!r}: {', '.join(missing)}")
    emit_curves(table, metrics, config.out_dir, bins=config.bins,
                degenerate_policy=config.degenerate_policy, svg=config.svg)
    return EXIT_OK


def run_synth(config: RunConfig) -> int:
    """Generate blobs, train the tiny MLP, export the eval split as GTPK."""
    spec = BlobSpec(n_classes=config.classes, dim=config.dim,
                    samples_per_class=config.samples_per_class,
                    class_separation=config.separation,
                    noise_sigma=config.sigma, seed=config.seed)
    dataset = gen_blobs(spec)
    result = train_mlp(dataset, hidden=config.hidden, lr=config.lr,
                       epochs=config.epochs, seed=config.seed)
    bundle = export_bundle(result.model, dataset)
    write_bundle(bundle, config.out)
    eval_acc = float(np.mean(
        np.argmax(bundle.logits, axis=1) == bundle.labels))
    print(f"bundle={config.out} m={bundle.n_samples} n={bundle.n_classes} "
          f"train_acc={result.train_accuracy:.4f} eval_acc={eval_acc:.4f}")
    return EXIT_OK


def run_gradcheck(config: RunConfig) -> int:
    """Compare analytic last-layer gradients against central differences.

    Each instance draws its own shapes (2 <= d <= 16, 2 <= N <= 12) and a
    uniform k in 1..N-1.  Relative error guards near-zero entries with a
    loss-scaled floor, since the oracle's roundoff scales with the loss.
    """
    worst = (-1.0, None, -1, -1)  # (rel_err, instance, i, j)
    for idx in range(config.instances):
        rng = np.random.default_rng([config.seed, idx])
        d = int(rng.integers(2, 17))
        n = int(rng.integers(2, 13))
        k = int(rng.integers(1, n))
        features = rng.standard_normal(d)
        weights = rng.standard_normal((d, n))
        bias = rng.standard_normal(n)
        logits = features @ weights + bias

        plan = counterfactual_targets(logits, k)
        residual = loss_gradient_wrt_logits(logits, plan)
        analytic = grad_last_layer(features, residual)
        if config.inject_bug:
            analytic = analytic * 1.001 + 1e-6
        oracle = finite_diff_grad(features, weights, bias, plan, h=config.h)

        norm = 1.0 if k == 1 else 1.0 / (k - 1.0)
        loss = norm * float(np.sum((logits - plan.targets) ** 2))
        floor = 1e-6 * max(1.0, abs(loss))
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(oracle)), floor)
        rel = np.abs(analytic - oracle) / denom
        i, j = np.unravel_index(np.argmax(rel), rel.shape)
        if rel[i, j] > worst[0]:
            worst = (float(rel[i, j]), idx, int(i), int(j))

    rel_err, instance, i, j = worst
    print(f"instances={config.instances} h={config.h:g} seed={config.seed}")
    print(f"max_rel_err={rel_err:.3e} at instance={instance} i={i} j={j}")
    if rel_err < GRADCHECK_TOL:
        print(f"PASS: max relative error below {GRADCHECK_TOL:g}")
        return EXIT_OK
    print(f"FAIL: max relative error {rel_err:.3e} >= {GRADCHECK_TOL:g} "
          f"(instance seed=[{config.seed},{instance}] i={i} j={j})")
    return EXIT_GRADCHECK


def run_report(config: RunConfig) -> int:
    """Score a bundle and evaluate it in one run; prints per-metric areas."""
    table = _score_table(config)
    _warn_degenerate(table)
    os.makedirs(config.out_dir, exist_ok=True)
    write_score_csv(table, os.path.join(config.out_dir, "scores.csv"))
    results = emit_curves(table, config.metrics, config.out_dir, bins=config.bins,
                          degenerate_policy=config.degenerate_policy, svg=config.svg)
    for metric in config.metrics:
        print(f"metric={metric} auac={results[metric]['accuracy'].area:.2f} "
              f"aufc={results[metric]['f1'].area:.2f}")
    return EXIT_OK


def _add_common_score_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=10,
                   help="counterfactual set size (default 10)")
    p.add_argument("--metrics", nargs="+", choices=ALL_METRICS,
                   default=list(ALL_METRICS), help="metrics to compute (default all)")
    p.add_argument("--variance-mode", choices=VARIANCE_MODES, default="squared")
    p.add_argument("--denominator-mode", choices=DENOMINATOR_MODES,
                   default="counterfactuals")
    p.add_argument("--margin-mode", choices=("probability", "logit"),
                   default="probability")


def _add_common_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bins", type=int, default=100,
                   help="number of percentile bins (default 100)")
    p.add_argument("--degenerate-policy", choices=DEGENERATE_POLICIES,
                   default="bottom",
                   help="rank degenerate scores below (bottom) or above (top) all others")
    p.add_argument("--svg", action="store_true", help="also write per-metric SVG charts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradtrust",
        description="Prediction-trust scoring from last-layer bundles.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score a GTPK bundle into a per-sample CSV")
    p.add_argument("--input", required=True, help="GTPK bundle path")
    p.add_argument("--out", required=True, help="output scores.csv path")
    _add_common_score_flags(p)

    p = sub.add_parser("eval", help="turn a scores CSV into curves and areas")
    p.add_argument("--input", required=True, help="scores.csv path")
    p.add_argument("--out-dir", required=True, help="directory for curves.csv/summary.csv")
    p.add_argument("--metrics", nargs="+", default=[],
                   help="metric columns to evaluate (default: all in the file)")
    _add_common_eval_flags(p)

    p = sub.add_parser("synth", help="generate blobs, train the tiny MLP, export GTPK")
    p.add_argument("--out", required=True, help="output bundle path")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--samples-per-class", type=int, default=100)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=500)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against the oracle")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--inject-bug", action="store_true",
                   help="corrupt the analytic gradient to prove the check can fail")

    p = sub.add_parser("report", help="score a bundle and evaluate it in one run")
    p.add_argument("--input", required=True, help="GTPK bundle path")
    p.add_argument("--out-dir", required=True, help="directory for all outputs")
    _add_common_score_flags(p)
    _add_common_eval_flags(p)

    return parser


_RUNNERS = {
    "score": run_score,
    "eval": run_eval,
    "synth": run_synth,
    "gradcheck": run_gradcheck,
    "report": run_report,
}


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {name: getattr(args, name) for name in vars(args)
              if name in RunConfig.__dataclass_fields__}
    if "metrics" in fields:
        fields["metrics"] = tuple(fields["metrics"])
    return RunConfig(**fields)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _RUNNERS[args.command](_config_from_args(args))
    except InvalidK as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (BundleError, MalformedScoreCSV, _InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
