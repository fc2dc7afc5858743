"""Triage engine - routes each image to one clinical decision category.

Rules run in priority order and the first rule that claims an image decides
its category:

    1. ImmediateIntervention  a critical class set is {Present}
    2. RescanNeeded           a critical class set is empty
    3. AutoNormal             critical sets all {Absent}, normal sets all {Present}
    4. SpecialistReview       everything else

``fully_confident`` (every set a singleton) is reported beside the category,
not as a category of its own.
"""
import logging
from fractions import Fraction
from typing import Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field

from linecp.conformal import CalibrationModel, PredictionSet, predict_batch
from linecp.dataio import ScoredCase
from linecp.exceptions import ConsistencyError, InputError
from linecp.metrics import LabeledSets, category_groups, high_risk_flags, potential_critical_miss
from linecp.rules.auto_normal_rule import AutoNormalRule
from linecp.rules.intervention_rule import ImmediateInterventionRule
from linecp.rules.rescan_rule import RescanNeededRule
from linecp.rules.review_rule import SpecialistReviewRule
from linecp.rules.rule_base import RuleHit, TriageCategory, TriageRule
from linecp.taxonomy import RiskGroup, Taxonomy

logger = logging.getLogger(__name__)

__all__ = [
    "CaseVerdict",
    "TriageCategory",
    "TriageEngine",
    "WorkloadReport",
    "build_verdicts",
    "categorize",
    "fully_confident",
    "workload",
    "write_triage_csv",
]


class TriageEngine:
    """Runs triage rules in priority order; the first match decides."""

    def __init__(self, rules: Optional[List[TriageRule]] = None):
        self.rules: List[TriageRule] = rules or [
            ImmediateInterventionRule(),  # Priority 1: urgent findings dominate
            RescanNeededRule(),           # Priority 2: unreadable critical classes
            AutoNormalRule(),             # Priority 3: confidently normal
            SpecialistReviewRule(),       # Priority 4: fallback
        ]

    def explain(self, sets: PredictionSet, taxonomy: Taxonomy) -> RuleHit:
        if len(sets) != len(taxonomy):
            raise InputError(f"{len(sets)} prediction sets for {len(taxonomy)} classes")
        for rule in self.rules:
            hit = rule.decide(sets, taxonomy)
            if hit is not None:
                return hit
        raise ConsistencyError("no triage rule matched; the rule list needs a fallback rule")

    def categorize(self, sets: PredictionSet, taxonomy: Taxonomy) -> TriageCategory:
        return self.explain(sets, taxonomy).category


_DEFAULT_ENGINE = TriageEngine()


def categorize(sets: PredictionSet, taxonomy: Taxonomy) -> TriageCategory:
    """Triage category of one image under the default rule order."""
    return _DEFAULT_ENGINE.categorize(sets, taxonomy)


def fully_confident(sets: PredictionSet) -> bool:
    """True iff every class set holds exactly one outcome."""
    return all(s.size == 1 for s in sets.sets)


class CaseVerdict(LabeledSets):
    """Prediction sets, triage decision and (with labels) safety flags of one image."""

    triage: TriageCategory
    fully_confident: bool
    reason: str = ""
    critical_condition: Optional[bool] = None
    high_risk_categories: Optional[List[str]] = None
    missed_critical_classes: Optional[List[str]] = None


def verdict_for(case_id: str, sets: PredictionSet, taxonomy: Taxonomy, labels=None,
                engine: Optional[TriageEngine] = None) -> CaseVerdict:
    hit = (engine or _DEFAULT_ENGINE).explain(sets, taxonomy)
    base = LabeledSets(case_id=case_id, sets=sets, labels=labels)
    critical = high_risk = missed = None
    if labels is not None:
        critical = any(labels[i] == 1 for i in taxonomy.indices(RiskGroup.CRITICAL))
        flags = high_risk_flags(labels, sets, category_groups(taxonomy))
        high_risk = [category.value for category, flagged in flags.items() if flagged]
        missed = potential_critical_miss(base, taxonomy).classes
    return CaseVerdict(
        case_id=case_id,
        sets=sets,
        labels=labels,
        triage=hit.category,
        fully_confident=fully_confident(sets),
        reason=hit.reason,
        critical_condition=critical,
        high_risk_categories=high_risk,
        missed_critical_classes=missed,
    )


def build_verdicts(model: CalibrationModel, cases: List[ScoredCase], taxonomy: Taxonomy,
                   engine: Optional[TriageEngine] = None) -> List[CaseVerdict]:
    """Predict sets for every case and triage them."""
    all_sets = predict_batch(model, cases, taxonomy)
    return [verdict_for(c.case_id, s, taxonomy, c.labels, engine) for c, s in zip(cases, all_sets)]


# ---------------------------------------------------------------------------
# Workload
# ---------------------------------------------------------------------------

def round_half_away(value: Fraction) -> int:
    """Round to the nearest integer, halves away from zero."""
    magnitude = (abs(value) * 2 + 1) // 2
    return int(magnitude if value >= 0 else -magnitude)


class WorkloadReport(BaseModel):
    n_cases: int
    counts: Dict[str, int]
    rates: Dict[str, float]
    fully_confident_count: int
    fully_confident_rate: float
    daily_volume: int
    expected_per_day: Dict[str, float] = Field(description="rate x volume, unrounded")
    rounded_per_day: Dict[str, int]
    critical_condition_images: Optional[int] = None
    potential_miss_images: Optional[int] = None
    potential_miss_rate: Optional[float] = None
    expected_misses_per_day: Optional[float] = None
    rounded_misses_per_day: Optional[int] = None


def workload(verdicts: List[CaseVerdict], daily_volume: int) -> WorkloadReport:
    """
    Category distribution of a cohort and its extrapolation to a daily volume.
    The potential-miss rate is extrapolated too when every verdict is labeled.

    Raises:
        InputError: empty cohort or daily_volume < 1
    """
    if not verdicts:
        raise InputError("cannot compute workload of an empty cohort")
    if daily_volume < 1:
        raise InputError(f"daily volume must be a positive integer, got {daily_volume}")

    n = len(verdicts)
    counts = {category.value: 0 for category in TriageCategory}
    for v in verdicts:
        counts[v.triage.value] += 1
    confident = sum(v.fully_confident for v in verdicts)

    expected = {k: Fraction(c * daily_volume, n) for k, c in counts.items()}
    report = WorkloadReport(
        n_cases=n,
        counts=counts,
        rates={k: c / n for k, c in counts.items()},
        fully_confident_count=confident,
        fully_confident_rate=confident / n,
        daily_volume=daily_volume,
        expected_per_day={k: float(e) for k, e in expected.items()},
        rounded_per_day={k: round_half_away(e) for k, e in expected.items()},
    )

    if all(v.labels is not None for v in verdicts):
        critical_images = sum(bool(v.critical_condition) for v in verdicts)
        miss_images = sum(bool(v.missed_critical_classes) for v in verdicts)
        report.critical_condition_images = critical_images
        report.potential_miss_images = miss_images
        if critical_images:
            miss_rate = Fraction(miss_images, critical_images)
            report.potential_miss_rate = float(miss_rate)
            report.expected_misses_per_day = float(miss_rate * daily_volume)
            report.rounded_misses_per_day = round_half_away(miss_rate * daily_volume)

    logger.info(f"Workload over {n} cases at {daily_volume}/day: {report.rounded_per_day}")
    return report


def write_triage_csv(verdicts: List[CaseVerdict], taxonomy: Taxonomy) -> str:
    """case_id, category, fully_confident (0/1), then set:<class_id> coded "", "P", "A" or "PA"."""
    rows = []
    for v in verdicts:
        row = {
            "case_id": v.case_id,
            "category": v.triage.value,
            "fully_confident": int(v.fully_confident),
        }
        for cid, s in zip(taxonomy.class_ids, v.sets.sets):
            row[f"set:{cid}"] = s.value
        rows.append(row)
    columns = ["case_id", "category", "fully_confident"] + [f"set:{cid}" for cid in taxonomy.class_ids]
    return pd.DataFrame(rows, columns=columns).to_csv(index=False, lineterminator="\n")
