"""Immediate Intervention - a critical finding is confidently present."""
from typing import List, Optional

from linecp.conformal import OutcomeSet, PredictionSet
from linecp.rules.rule_base import TriageCategory, TriageRule
from linecp.taxonomy import RiskGroup, Taxonomy


class ImmediateInterventionRule(TriageRule):
    """Claims the image when any critical class set is exactly {Present}."""

    category = TriageCategory.IMMEDIATE_INTERVENTION

    def __init__(self):
        super().__init__("ImmediateIntervention")

    def matches(self, sets: PredictionSet, taxonomy: Taxonomy) -> Optional[List[str]]:
        return self.classes_with(sets, taxonomy, RiskGroup.CRITICAL, OutcomeSet.PRESENT) or None

    def reason(self, classes: List[str]) -> str:
        return f"Critical finding confidently present: {', '.join(classes)}"
