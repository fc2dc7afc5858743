"""Evaluation documents and their plain-text tables."""
import logging
import math
from typing import Any, Dict, List, Optional

from pydantic import BaseModel

from linecp.conformal import CalibrationModel, threshold_summary
from linecp.metrics import CoverageReport, ModeComparison, SafetyReport, SweepPoint, format_rate
from linecp.triage import WorkloadReport

logger = logging.getLogger(__name__)


class ModelSummary(BaseModel):
    mode: str
    alpha_standard: float
    alpha_critical: Optional[float] = None
    pooling: Optional[str] = None
    thresholds: List[Dict[str, Any]]


def summarize_model(model: CalibrationModel) -> ModelSummary:
    rows = []
    for row in threshold_summary(model):
        q_hat = row["q_hat"]
        rows.append({**row, "q_hat": "inf" if math.isinf(q_hat) else q_hat})
    return ModelSummary(
        mode=model.mode.value,
        alpha_standard=model.alpha_standard,
        alpha_critical=model.alpha_critical,
        pooling=model.pooling.value if model.pooling else None,
        thresholds=rows,
    )


class EvaluationReport(BaseModel):
    model: ModelSummary
    coverage: CoverageReport
    categories: Dict[str, Dict[str, float]]
    safety: SafetyReport
    workload: WorkloadReport

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


class SweepReport(BaseModel):
    alpha_standard: float
    pooling: str
    n_calibration: int
    n_test: int
    sweep: List[SweepPoint]
    comparison: ModeComparison

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def _table(headers: List[str], rows: List[List[str]]) -> List[str]:
    """Left-aligned first column, right-aligned others."""
    widths = [max(len(str(x)) for x in col) for col in zip(headers, *rows)]
    lines = []
    for row in [headers] + rows:
        cells = [str(row[0]).ljust(widths[0])] + [str(v).rjust(w) for v, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return lines


def render_thresholds(model: CalibrationModel) -> str:
    rows = [
        [r["threshold"], "inf" if math.isinf(r["q_hat"]) else f"{r['q_hat']:.6f}", str(r["n_cal"]), str(r["rank_k"])]
        for r in threshold_summary(model)
    ]
    return "\n".join(_table(["threshold", "q_hat", "n", "k"], rows)) + "\n"


def render_workload(report: WorkloadReport) -> str:
    rows = [
        [category, str(report.counts[category]), format_rate(report.rates[category]),
         str(report.rounded_per_day[category])]
        for category in report.counts
    ]
    lines = _table(["category", "count", "rate", f"per {report.daily_volume}/day"], rows)
    lines.append(
        f"fully confident: {report.fully_confident_count} ({format_rate(report.fully_confident_rate)})"
    )
    if report.critical_condition_images is not None:
        lines.append(
            f"potential critical misses: {report.potential_miss_images}/{report.critical_condition_images} "
            f"({format_rate(report.potential_miss_rate)}), "
            f"per day: {report.rounded_misses_per_day if report.rounded_misses_per_day is not None else 'n/a'}"
        )
    return "\n".join(lines) + "\n"


def render_evaluation(report: EvaluationReport) -> str:
    cov, safety = report.coverage, report.safety
    lines = [
        f"mode: {report.model.mode}  alpha: {report.model.alpha_standard}"
        + (f"  alpha_critical: {report.model.alpha_critical}" if report.model.alpha_critical is not None else ""),
        f"cases: {cov.n_cases}  pairs: {cov.n_pairs}",
        f"overall coverage: {format_rate(cov.overall_coverage)}",
        f"critical present coverage: {format_rate(cov.critical_present_coverage)}",
        f"average set size: {cov.avg_set_size:.3f}",
        "set sizes: " + ", ".join(f"{k}={v}" for k, v in cov.size_histogram.items()),
        "",
    ]
    lines += _table(
        ["class", "coverage"],
        [[cid, format_rate(rate)] for cid, rate in cov.per_class_coverage.items()],
    )
    lines.append("")
    lines += _table(
        ["tube", "coverage", "avg size", "high-risk", "rate"],
        [
            [
                tube,
                format_rate(stats["coverage"]),
                f"{stats['avg_set_size']:.3f}",
                str(safety.high_risk_mispredictions[tube].events) if tube in safety.high_risk_mispredictions else "-",
                format_rate(safety.high_risk_mispredictions[tube].rate) if tube in safety.high_risk_mispredictions else "-",
            ]
            for tube, stats in report.categories.items()
        ],
    )
    lines += [
        "",
        f"high-risk mispredictions: {safety.high_risk_events} ({format_rate(safety.high_risk_rate)})",
        f"potential critical misses: {safety.potential_critical_miss_images}/{safety.critical_condition_images} "
        f"({format_rate(safety.potential_miss_rate)})",
        "",
    ]
    return "\n".join(lines) + render_workload(report.workload)


def render_sweep(report: SweepReport) -> str:
    lines = [
        f"alpha: {report.alpha_standard}  pooling: {report.pooling}  "
        f"calibration: {report.n_calibration}  test: {report.n_test}",
        "",
    ]
    lines += _table(
        ["alpha_critical", "coverage", "critical present", "avg size", "high-risk", "miss rate"],
        [
            [
                str(p.alpha_critical),
                format_rate(p.overall_coverage),
                format_rate(p.critical_present_coverage),
                f"{p.avg_set_size:.3f}",
                str(p.high_risk_events),
                format_rate(p.potential_miss_rate),
            ]
            for p in report.sweep
        ],
    )
    c = report.comparison
    lines.append("")
    lines += _table(
        ["mode", "coverage", "critical present", "avg size", "high-risk", "miss rate"],
        [
            [
                name,
                format_rate(cov.overall_coverage),
                format_rate(cov.critical_present_coverage),
                f"{cov.avg_set_size:.3f}",
                str(safety.high_risk_events),
                format_rate(safety.potential_miss_rate),
            ]
            for name, cov, safety in (
                ("independent", c.independent_coverage, c.independent_safety),
                ("risk-sensitive", c.risk_sensitive_coverage, c.risk_sensitive_safety),
            )
        ],
    )
    return "\n".join(lines) + "\n"
