"""Auto-Normal - every tube confidently normal, nothing critical possible."""
from typing import List, Optional

from linecp.conformal import OutcomeSet, PredictionSet
from linecp.rules.rule_base import TriageCategory, TriageRule
from linecp.taxonomy import RiskGroup, Taxonomy


class AutoNormalRule(TriageRule):
    """
    Claims the image when every critical class set is {Absent} and every
    normal class set is {Present}. Other-group classes (Swan Ganz) do not
    take part.
    """

    category = TriageCategory.AUTO_NORMAL

    def __init__(self):
        super().__init__("AutoNormal")

    def matches(self, sets: PredictionSet, taxonomy: Taxonomy) -> Optional[List[str]]:
        critical = taxonomy.indices(RiskGroup.CRITICAL)
        normal = taxonomy.indices(RiskGroup.NORMAL)
        if all(sets[i] == OutcomeSet.ABSENT for i in critical) and all(sets[i] == OutcomeSet.PRESENT for i in normal):
            return [taxonomy.classes[i].id for i in critical + normal]
        return None

    def reason(self, classes: List[str]) -> str:
        return "All critical classes confidently absent and all tubes confidently normal"
