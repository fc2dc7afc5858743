"""
linecp command line
Calibrate, predict, evaluate and triage tube/line prediction sets from score files.

Exit codes: 0 success, 2 input error, 3 calibration or consistency error,
1 anything unexpected.
"""
import argparse
import logging
import os
import sys
from typing import Callable, List, Optional, Sequence

from pydantic import ValidationError

from linecp.config import DEFAULTS, taxonomy_path_override
from linecp.conformal import CalibrationMode, Pooling, calibrate, load_model, save_model
from linecp.dataio import (
    SPLIT_BUCKETS,
    SplitSpec,
    SynthConfig,
    atomic_write,
    check_cases,
    grouped_split,
    load_scores,
    parse_synth_config,
    synth_generate,
    write_scores,
)
from linecp.dwa import DwaConfig, read_loss_history, replay, write_weights
from linecp.exceptions import InputError, LinecpError
from linecp.metrics import aggregate_safety, alpha_sweep, category_breakdown, compare_modes, coverage
from linecp.report import (
    EvaluationReport,
    SweepReport,
    render_evaluation,
    render_sweep,
    render_thresholds,
    render_workload,
    summarize_model,
)
from linecp.taxonomy import Taxonomy, default_ranzcr, load_taxonomy
from linecp.triage import build_verdicts, workload, write_triage_csv

logger = logging.getLogger(__name__)


def _float_list(count: Optional[int] = None) -> Callable[[str], List[float]]:
    def parse(text: str) -> List[float]:
        try:
            values = [float(s) for s in text.split(",") if s.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
        if count is not None and len(values) != count:
            raise argparse.ArgumentTypeError(f"expected {count} values, got {len(values)}")
        return values
    return parse


def _read_text(path: str, what: str) -> str:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise InputError(f"cannot read {what} {path}: {e}") from e


def resolve_taxonomy(path: Optional[str]) -> Taxonomy:
    """--taxonomy, then the LINECP_TAXONOMY environment variable, then the built-in default."""
    path = path or taxonomy_path_override()
    if path:
        return load_taxonomy(path)
    return default_ranzcr()


def _write(path: str, text: str) -> None:
    atomic_write(path, text)
    logger.info(f"Wrote {path}")


def _text_sidecar(report_path: str) -> str:
    return os.path.splitext(report_path)[0] + ".txt"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_calibrate(args: argparse.Namespace) -> None:
    taxonomy = resolve_taxonomy(args.taxonomy)
    cases = load_scores(args.scores, taxonomy)
    model = calibrate(
        cases,
        taxonomy,
        CalibrationMode(args.mode),
        args.alpha,
        alpha_critical=args.alpha_critical,
        pooling=Pooling(args.pooling),
    )
    save_model(args.out, model)
    print(render_thresholds(model), end="")


def cmd_predict(args: argparse.Namespace) -> None:
    taxonomy = resolve_taxonomy(args.taxonomy)
    model = load_model(args.model)
    model.check_taxonomy(taxonomy)
    cases = load_scores(args.scores, taxonomy)
    verdicts = build_verdicts(model, cases, taxonomy)
    _write(args.out, write_triage_csv(verdicts, taxonomy))


def cmd_evaluate(args: argparse.Namespace) -> None:
    taxonomy = resolve_taxonomy(args.taxonomy)
    model = load_model(args.model)
    model.check_taxonomy(taxonomy)
    cases = load_scores(args.scores, taxonomy)
    check_cases(cases, taxonomy, require_labels=True)

    verdicts = build_verdicts(model, cases, taxonomy)
    report = EvaluationReport(
        model=summarize_model(model),
        coverage=coverage(verdicts, taxonomy),
        categories=category_breakdown(verdicts, taxonomy),
        safety=aggregate_safety(verdicts, taxonomy),
        workload=workload(verdicts, args.daily_volume),
    )
    text = render_evaluation(report)
    _write(args.report, report.to_json())
    _write(_text_sidecar(args.report), text)
    print(text, end="")


def cmd_triage(args: argparse.Namespace) -> None:
    taxonomy = resolve_taxonomy(args.taxonomy)
    model = load_model(args.model)
    model.check_taxonomy(taxonomy)
    cases = load_scores(args.scores, taxonomy)

    verdicts = build_verdicts(model, cases, taxonomy)
    report = workload(verdicts, args.daily_volume)
    if args.out:
        _write(args.out, write_triage_csv(verdicts, taxonomy))
    if args.report:
        _write(args.report, report.model_dump_json(indent=2) + "\n")
    print(render_workload(report), end="")


def cmd_synth(args: argparse.Namespace) -> None:
    taxonomy = resolve_taxonomy(args.taxonomy)
    if args.config:
        config = parse_synth_config(_read_text(args.config, "synth config"))
    else:
        try:
            config = SynthConfig.uniform(
                taxonomy,
                n_cases=args.cases,
                prevalence=args.prevalence,
                sharpness=args.sharpness,
                temperature=args.temperature,
                seed=args.seed,
                cases_per_patient=args.cases_per_patient,
            )
        except ValidationError as e:
            raise InputError(f"invalid synth parameters: {e}") from e
    cases = synth_generate(config, taxonomy)
    _write(args.out, write_scores(cases, taxonomy))


def cmd_split(args: argparse.Namespace) -> None:
    taxonomy = resolve_taxonomy(args.taxonomy)
    try:
        spec = SplitSpec(ratios=tuple(args.ratios), seed=args.seed)
    except ValidationError as e:
        raise InputError(f"invalid split: {e}") from e
    cases = load_scores(args.scores, taxonomy)
    buckets = grouped_split(cases, spec)
    for name in SPLIT_BUCKETS:
        _write(f"{args.out}{name}.csv", write_scores(buckets[name], taxonomy))
    print(" ".join(f"{name}={len(buckets[name])}" for name in SPLIT_BUCKETS))


def cmd_dwa(args: argparse.Namespace) -> None:
    history = read_loss_history(_read_text(args.losses, "loss history"))
    try:
        config = DwaConfig(
            num_tasks=history.num_tasks,
            k_norm=args.k_norm,
            temperature=args.temperature,
            warmup_epochs=args.warmup,
        )
    except ValidationError as e:
        raise InputError(f"invalid DWA parameters: {e}") from e
    _write(args.out, write_weights(replay(history, config)))


def cmd_sweep(args: argparse.Namespace) -> None:
    taxonomy = resolve_taxonomy(args.taxonomy)
    cases = load_scores(args.scores, taxonomy)
    check_cases(cases, taxonomy, require_labels=True)
    halves = grouped_split(cases, SplitSpec(ratios=(0.0, 0.0, 0.5, 0.5), seed=args.split_seed))
    cal, test = halves["calibration"], halves["test"]
    if not cal or not test:
        raise InputError("too few patients to split into calibration and test halves")

    pooling = Pooling(args.pooling)
    report = SweepReport(
        alpha_standard=args.alpha,
        pooling=pooling.value,
        n_calibration=len(cal),
        n_test=len(test),
        sweep=alpha_sweep(cal, test, taxonomy, args.alpha, args.alpha_criticals, pooling),
        comparison=compare_modes(cal, test, taxonomy, args.alpha, args.alpha_critical, pooling),
    )
    text = render_sweep(report)
    _write(args.report, report.to_json())
    _write(_text_sidecar(args.report), text)
    print(text, end="")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--taxonomy", default=None,
                        help="Taxonomy JSON file (default: $LINECP_TAXONOMY, else the built-in RANZCR taxonomy)")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    parser = argparse.ArgumentParser(
        prog="linecp",
        description="Conformal prediction sets and triage for tube/line classifier scores",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        return p

    def add_alphas(p: argparse.ArgumentParser) -> None:
        p.add_argument("--alpha", type=float, default=DEFAULTS.alpha, help="Standard miscoverage rate")
        p.add_argument("--alpha-critical", type=float, default=DEFAULTS.alpha_critical,
                       help="Miscoverage rate for critical Present outcomes")
        p.add_argument("--pooling", choices=[m.value for m in Pooling], default=DEFAULTS.pooling,
                       help="Risk-sensitive stratification")

    p = add("calibrate", cmd_calibrate, "Fit conformal thresholds on a labeled scores file")
    p.add_argument("--scores", required=True, help="Labeled scores CSV")
    p.add_argument("--mode", choices=[m.value for m in CalibrationMode], default=DEFAULTS.mode,
                   help="Calibration mode")
    add_alphas(p)
    p.add_argument("--out", required=True, help="Model JSON to write")

    p = add("predict", cmd_predict, "Write per-case prediction sets")
    p.add_argument("--model", required=True, help="Model JSON")
    p.add_argument("--scores", required=True, help="Scores CSV, labels optional")
    p.add_argument("--out", required=True, help="Prediction-set CSV to write")

    p = add("evaluate", cmd_evaluate, "Coverage, safety and workload report on labeled scores")
    p.add_argument("--model", required=True, help="Model JSON")
    p.add_argument("--scores", required=True, help="Labeled scores CSV")
    p.add_argument("--daily-volume", type=int, default=DEFAULTS.daily_volume, help="Images per day")
    p.add_argument("--report", required=True, help="JSON report to write; a .txt table is written beside it")

    p = add("triage", cmd_triage, "Triage distribution and daily workload")
    p.add_argument("--model", required=True, help="Model JSON")
    p.add_argument("--scores", required=True, help="Scores CSV, labels optional")
    p.add_argument("--daily-volume", type=int, default=DEFAULTS.daily_volume, help="Images per day")
    p.add_argument("--out", default=None, help="Per-case triage CSV to write")
    p.add_argument("--report", default=None, help="Workload JSON to write")

    p = add("synth", cmd_synth, "Generate a labeled synthetic cohort")
    p.add_argument("--config", default=None, help="Synth config JSON (overrides the per-class flags below)")
    p.add_argument("--cases", type=int, default=DEFAULTS.synth_cases, help="Cohort size")
    p.add_argument("--prevalence", type=float, default=DEFAULTS.synth_prevalence, help="Base rate for every class")
    p.add_argument("--sharpness", type=float, default=DEFAULTS.synth_sharpness, help="Spread of latent logits")
    p.add_argument("--temperature", type=float, default=DEFAULTS.synth_temperature,
                   help="Miscalibration temperature; 1.0 is calibrated")
    p.add_argument("--cases-per-patient", type=_float_list(), default=None,
                   help="Comma-separated weights for patients with 1, 2, ... cases")
    p.add_argument("--seed", type=int, default=DEFAULTS.seed, help="Generator seed")
    p.add_argument("--out", required=True, help="Scores CSV to write")

    p = add("split", cmd_split, "Patient-grouped train/validation/test/calibration split")
    p.add_argument("--scores", required=True, help="Scores CSV")
    p.add_argument("--ratios", type=_float_list(4), default=list(DEFAULTS.ratios),
                   help="train,validation,test,calibration fractions")
    p.add_argument("--seed", type=int, default=DEFAULTS.seed, help="Shuffle seed")
    p.add_argument("--out", required=True, help="Output prefix; writes <prefix><bucket>.csv")

    p = add("dwa", cmd_dwa, "Replay Dynamic Weight Averaging over a loss history")
    p.add_argument("--losses", required=True, help="Loss-history CSV: epoch,<task>...")
    p.add_argument("--k-norm", type=float, default=DEFAULTS.k_norm, help="Normalization constant K")
    p.add_argument("--temperature", type=float, default=DEFAULTS.temperature, help="Softmax temperature T")
    p.add_argument("--warmup", type=int, default=DEFAULTS.warmup_epochs, help="Equal-weight warm-up epochs")
    p.add_argument("--out", required=True, help="Weights CSV to write")

    p = add("sweep", cmd_sweep, "alpha_critical sweep and mode comparison on held-out halves")
    p.add_argument("--scores", required=True, help="Labeled scores CSV")
    p.add_argument("--split-seed", type=int, default=DEFAULTS.seed, help="Seed of the calibration/test split")
    add_alphas(p)
    p.add_argument("--alpha-criticals", type=_float_list(), default=list(DEFAULTS.alpha_criticals),
                   help="Comma-separated alpha_critical values to sweep")
    p.add_argument("--report", required=True, help="JSON report to write; a .txt table is written beside it")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except LinecpError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unhandled exception in {args.command}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
