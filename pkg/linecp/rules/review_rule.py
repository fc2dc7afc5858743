"""Specialist Review - fallback for every image no other rule claims."""
from typing import List

from linecp.conformal import PredictionSet
from linecp.rules.rule_base import TriageCategory, TriageRule
from linecp.taxonomy import RiskGroup, Taxonomy


class SpecialistReviewRule(TriageRule):
    """Always matches; reports the critical and normal classes that are not singletons."""

    category = TriageCategory.SPECIALIST_REVIEW

    def __init__(self):
        super().__init__("SpecialistReview")

    def matches(self, sets: PredictionSet, taxonomy: Taxonomy) -> List[str]:
        gated = sorted(taxonomy.indices(RiskGroup.CRITICAL) + taxonomy.indices(RiskGroup.NORMAL))
        uncertain = [taxonomy.classes[i].id for i in gated if sets[i].size != 1]
        return uncertain

    def reason(self, classes: List[str]) -> str:
        if not classes:
            return "Confident but not auto-normal; needs specialist confirmation"
        return f"Uncertain prediction sets: {', '.join(classes)}"
