"""Coverage, set-size and clinical-safety metrics over labeled prediction sets.

Two levels of evaluation:
    per label:  is the true outcome in the class's set? how large are sets?
    per image:  high-risk mispredictions (a tube category confidently called
                normal while a critical finding is present) and potential
                critical misses (a present critical finding whose set lacks
                Present).
All counts are integers, so results do not depend on case order.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from linecp.conformal import (
    CalibrationModel,
    Pooling,
    PredictionSet,
    calibrate_independent,
    calibrate_risk_sensitive,
    predict_batch,
)
from linecp.dataio import ScoredCase, check_cases
from linecp.exceptions import InputError
from linecp.taxonomy import RiskGroup, Taxonomy, TubeCategory

logger = logging.getLogger(__name__)


class LabeledSets(BaseModel):
    """Prediction sets of one case, with its labels when known."""

    model_config = ConfigDict(frozen=True)

    case_id: str
    sets: PredictionSet
    labels: Optional[Tuple[int, ...]] = None


def labeled_sets(model: CalibrationModel, cases: List[ScoredCase], taxonomy: Taxonomy) -> List[LabeledSets]:
    sets = predict_batch(model, cases, taxonomy)
    return [LabeledSets(case_id=c.case_id, sets=s, labels=c.labels) for c, s in zip(cases, sets)]


def _require_labels(verdict: LabeledSets, taxonomy: Taxonomy) -> Tuple[int, ...]:
    if verdict.labels is None:
        raise InputError(f"case {verdict.case_id} has no labels")
    if len(verdict.labels) != len(taxonomy) or len(verdict.sets) != len(taxonomy):
        raise InputError(f"case {verdict.case_id} does not match the taxonomy width")
    return verdict.labels


def format_rate(rate: Optional[float]) -> str:
    """Percentage with one decimal; undefined rates render as 'n/a'."""
    if rate is None:
        return "n/a"
    return f"{rate * 100:.1f}%"


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------

class CoverageReport(BaseModel):
    n_cases: int
    n_pairs: int
    overall_coverage: float
    per_class_coverage: Dict[str, float]
    critical_pair_coverage: Optional[float] = None
    critical_present_coverage: Optional[float] = None
    avg_set_size: float
    size_histogram: Dict[str, int] = Field(description="Pair counts by set size 0, 1, 2")


def _matrices(verdicts: List[LabeledSets], taxonomy: Taxonomy) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(covered, sizes, labels) arrays of shape (n_cases, n_classes)."""
    if not verdicts:
        raise InputError("no verdicts to evaluate")
    labels = np.array([_require_labels(v, taxonomy) for v in verdicts], dtype=np.int64)
    covered = np.array([[s.covers(y) for s, y in zip(v.sets.sets, v.labels)] for v in verdicts], dtype=bool)
    sizes = np.array([v.sets.sizes for v in verdicts], dtype=np.int64)
    return covered, sizes, labels


def _fraction(mask: np.ndarray) -> Optional[float]:
    return float(mask.mean()) if mask.size else None


def coverage(verdicts: List[LabeledSets], taxonomy: Taxonomy) -> CoverageReport:
    """Coverage and set-size statistics over every (case, class) pair."""
    covered, sizes, labels = _matrices(verdicts, taxonomy)
    critical = taxonomy.indices(RiskGroup.CRITICAL)
    crit_covered = covered[:, critical]
    crit_present = labels[:, critical] == 1

    counts = np.bincount(sizes.ravel(), minlength=3)
    return CoverageReport(
        n_cases=len(verdicts),
        n_pairs=int(covered.size),
        overall_coverage=float(covered.mean()),
        per_class_coverage={c.id: float(covered[:, i].mean()) for i, c in enumerate(taxonomy.classes)},
        critical_pair_coverage=_fraction(crit_covered),
        critical_present_coverage=_fraction(crit_covered[crit_present]),
        avg_set_size=float(sizes.mean()),
        size_histogram={str(k): int(counts[k]) for k in range(3)},
    )


def category_breakdown(verdicts: List[LabeledSets], taxonomy: Taxonomy) -> Dict[str, Dict[str, float]]:
    """Coverage and average set size restricted to each tube category's classes."""
    covered, sizes, _ = _matrices(verdicts, taxonomy)
    breakdown = {}
    for category in taxonomy.tube_categories:
        cols = [i for i, c in enumerate(taxonomy.classes) if c.tube_category == category]
        breakdown[category.value] = {
            "coverage": float(covered[:, cols].mean()),
            "avg_set_size": float(sizes[:, cols].mean()),
            "n_pairs": int(covered[:, cols].size),
        }
    return breakdown


# ---------------------------------------------------------------------------
# Safety
# ---------------------------------------------------------------------------

def category_groups(taxonomy: Taxonomy) -> List[Tuple[TubeCategory, List[int], List[int]]]:
    """(category, critical indices, normal indices) per tube category."""
    groups = []
    for category in taxonomy.tube_categories:
        indices = taxonomy.category_indices(category)
        groups.append((category, indices[RiskGroup.CRITICAL], indices[RiskGroup.NORMAL]))
    return groups


def high_risk_flags(labels: Sequence[int], sets: PredictionSet,
                     groups: List[Tuple[TubeCategory, List[int], List[int]]]) -> Dict[TubeCategory, bool]:
    return {
        category: bool(
            normal
            and any(labels[i] == 1 for i in critical)
            and any(sets[i].has_present for i in normal)
            and not any(sets[i].has_present for i in critical)
        )
        for category, critical, normal in groups
    }


def high_risk_mispredictions(verdict: LabeledSets, taxonomy: Taxonomy) -> Dict[TubeCategory, bool]:
    """
    Per tube category: a critical class is truly present, a normal class set
    contains Present, and no critical class set contains Present.
    Categories without a normal class never flag.
    """
    labels = _require_labels(verdict, taxonomy)
    return high_risk_flags(labels, verdict.sets, category_groups(taxonomy))


class CriticalMiss(BaseModel):
    flagged: bool
    classes: List[str] = Field(default_factory=list, description="Present critical classes whose set lacks Present")


def potential_critical_miss(verdict: LabeledSets, taxonomy: Taxonomy) -> CriticalMiss:
    """Critical classes with true label Present whose set is empty or {Absent}."""
    labels = _require_labels(verdict, taxonomy)
    missed = [
        taxonomy.classes[i].id
        for i in taxonomy.indices(RiskGroup.CRITICAL)
        if labels[i] == 1 and not verdict.sets[i].has_present
    ]
    return CriticalMiss(flagged=bool(missed), classes=missed)


class CategorySafety(BaseModel):
    events: int = 0
    denominator: int = Field(default=0, description="Images with a present critical class in this category")
    rate: Optional[float] = None


class SafetyReport(BaseModel):
    n_cases: int
    high_risk_mispredictions: Dict[str, CategorySafety]
    high_risk_events: int
    high_risk_rate: Optional[float] = None
    high_risk_images: int
    potential_critical_miss_images: int
    critical_condition_images: int
    potential_miss_rate: Optional[float] = None


def _rate(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def aggregate_safety(verdicts: List[LabeledSets], taxonomy: Taxonomy) -> SafetyReport:
    """
    Sum per-case safety analyses. The miss rate is relative to images with at
    least one present critical class; it is None when there are none.
    """
    if not verdicts:
        raise InputError("no verdicts to evaluate")
    critical = taxonomy.indices(RiskGroup.CRITICAL)
    groups = category_groups(taxonomy)
    per_category = {category: CategorySafety() for category, _, normal in groups if normal}
    high_risk_images = miss_images = critical_images = 0

    for v in verdicts:
        labels = _require_labels(v, taxonomy)
        flags = high_risk_flags(labels, v.sets, groups)
        for category, crit, _ in groups:
            if category not in per_category:
                continue
            stats = per_category[category]
            if any(labels[i] == 1 for i in crit):
                stats.denominator += 1
            if flags[category]:
                stats.events += 1
        high_risk_images += any(flags.values())
        miss_images += any(labels[i] == 1 and not v.sets[i].has_present for i in critical)
        critical_images += any(labels[i] == 1 for i in critical)

    for stats in per_category.values():
        stats.rate = _rate(stats.events, stats.denominator)
    events = sum(s.events for s in per_category.values())
    pairs = sum(s.denominator for s in per_category.values())

    if critical_images == 0:
        logger.warning("No images with a present critical class; potential miss rate is undefined")
    return SafetyReport(
        n_cases=len(verdicts),
        high_risk_mispredictions={c.value: s for c, s in per_category.items()},
        high_risk_events=events,
        high_risk_rate=_rate(events, pairs),
        high_risk_images=high_risk_images,
        potential_critical_miss_images=miss_images,
        critical_condition_images=critical_images,
        potential_miss_rate=_rate(miss_images, critical_images),
    )


# ---------------------------------------------------------------------------
# Mode comparison and alpha_critical sweep
# ---------------------------------------------------------------------------

class SweepPoint(BaseModel):
    alpha_critical: float
    overall_coverage: float
    critical_present_coverage: Optional[float] = None
    avg_set_size: float
    high_risk_events: int
    potential_miss_rate: Optional[float] = None


class ModeComparison(BaseModel):
    independent_coverage: CoverageReport
    independent_safety: SafetyReport
    risk_sensitive_coverage: CoverageReport
    risk_sensitive_safety: SafetyReport


def _evaluate_model(model: CalibrationModel, test: List[ScoredCase], taxonomy: Taxonomy) -> Tuple[CoverageReport, SafetyReport]:
    verdicts = labeled_sets(model, test, taxonomy)
    return coverage(verdicts, taxonomy), aggregate_safety(verdicts, taxonomy)


def alpha_sweep(cal: List[ScoredCase], test: List[ScoredCase], taxonomy: Taxonomy, alpha_standard: float,
                alpha_criticals: Sequence[float], pooling: Pooling = Pooling.GROUP) -> List[SweepPoint]:
    """Recalibrate at each alpha_critical and evaluate on the same test cases."""
    check_cases(test, taxonomy, require_labels=True)
    points = []
    for alpha_critical in sorted(alpha_criticals, reverse=True):
        model = calibrate_risk_sensitive(cal, taxonomy, alpha_standard, alpha_critical, pooling)
        cov, safety = _evaluate_model(model, test, taxonomy)
        points.append(SweepPoint(
            alpha_critical=alpha_critical,
            overall_coverage=cov.overall_coverage,
            critical_present_coverage=cov.critical_present_coverage,
            avg_set_size=cov.avg_set_size,
            high_risk_events=safety.high_risk_events,
            potential_miss_rate=safety.potential_miss_rate,
        ))
        logger.info(
            f"alpha_critical={alpha_critical}: critical-present coverage "
            f"{format_rate(cov.critical_present_coverage)}, avg size {cov.avg_set_size:.3f}"
        )
    return points


def compare_modes(cal: List[ScoredCase], test: List[ScoredCase], taxonomy: Taxonomy, alpha: float,
                  alpha_critical: float, pooling: Pooling = Pooling.GROUP) -> ModeComparison:
    """Independent and risk-sensitive models calibrated and evaluated on the same data."""
    check_cases(test, taxonomy, require_labels=True)
    ind_cov, ind_safety = _evaluate_model(calibrate_independent(cal, taxonomy, alpha), test, taxonomy)
    rs_model = calibrate_risk_sensitive(cal, taxonomy, alpha, alpha_critical, pooling)
    rs_cov, rs_safety = _evaluate_model(rs_model, test, taxonomy)
    return ModeComparison(
        independent_coverage=ind_cov,
        independent_safety=ind_safety,
        risk_sensitive_coverage=rs_cov,
        risk_sensitive_safety=rs_safety,
    )
