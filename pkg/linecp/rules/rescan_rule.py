"""Re-scan Needed - no outcome of a critical class could be certified."""
from typing import List, Optional

from linecp.conformal import OutcomeSet, PredictionSet
from linecp.rules.rule_base import TriageCategory, TriageRule
from linecp.taxonomy import RiskGroup, Taxonomy


class RescanNeededRule(TriageRule):
    """
    Claims the image when a critical class has an empty prediction set,
    which usually points at image quality or positioning problems.
    """

    category = TriageCategory.RESCAN_NEEDED

    def __init__(self):
        super().__init__("RescanNeeded")

    def matches(self, sets: PredictionSet, taxonomy: Taxonomy) -> Optional[List[str]]:
        return self.classes_with(sets, taxonomy, RiskGroup.CRITICAL, OutcomeSet.EMPTY) or None

    def reason(self, classes: List[str]) -> str:
        return f"Empty prediction set for critical class: {', '.join(classes)}"
