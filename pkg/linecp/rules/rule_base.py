"""Base class for per-image triage rules."""
from abc import ABC, abstractmethod
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field

from linecp.conformal import OutcomeSet, PredictionSet
from linecp.taxonomy import RiskGroup, Taxonomy


class TriageCategory(str, Enum):
    AUTO_NORMAL = "auto_normal"
    IMMEDIATE_INTERVENTION = "immediate_intervention"
    SPECIALIST_REVIEW = "specialist_review"
    RESCAN_NEEDED = "rescan_needed"


class RuleHit(BaseModel):
    """A rule's decision for one image and the classes that triggered it."""

    rule: str
    category: TriageCategory
    classes: List[str] = Field(default_factory=list)
    reason: str = ""


class TriageRule(ABC):
    """
    Abstract base class for triage rules.
    A rule inspects the prediction sets of one image and either claims the
    image for its category or passes.
    """

    category: TriageCategory

    def __init__(self, name: str):
        self.name = name

    @abstractmethod
    def matches(self, sets: PredictionSet, taxonomy: Taxonomy) -> Optional[List[str]]:
        """
        Inspect the prediction sets.

        Args:
            sets: per-class prediction sets in taxonomy order
            taxonomy: class registry the sets are keyed on

        Returns:
            None when the rule does not apply, otherwise the ids of the
            classes behind the decision (possibly empty)
        """
        pass

    def reason(self, classes: List[str]) -> str:
        return f"{self.name}: {', '.join(classes)}" if classes else self.name

    def decide(self, sets: PredictionSet, taxonomy: Taxonomy) -> Optional[RuleHit]:
        """Run the rule; returns a RuleHit when it claims the image."""
        classes = self.matches(sets, taxonomy)
        if classes is None:
            return None
        return RuleHit(rule=self.name, category=self.category, classes=classes, reason=self.reason(classes))

    @staticmethod
    def classes_with(sets: PredictionSet, taxonomy: Taxonomy, group: RiskGroup, value: OutcomeSet) -> List[str]:
        """Ids of classes in a risk group whose set equals ``value``."""
        return [taxonomy.classes[i].id for i in taxonomy.indices(group) if sets[i] == value]
