"""Class registry, risk stratification and tube-category structure.

Every score vector, label vector and prediction set in linecp is keyed on the
class order of a :class:`Taxonomy`. The RANZCR line-position label set is
shipped as a built-in default, but any grouping that satisfies the taxonomy
invariants can be loaded from a JSON file.
"""
import hashlib
import json
import logging
from enum import Enum
from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from linecp.exceptions import InputError

logger = logging.getLogger(__name__)


class RiskGroup(str, Enum):
    CRITICAL = "critical"
    NORMAL = "normal"
    OTHER = "other"


class TubeCategory(str, Enum):
    ETT = "ETT"
    NGT = "NGT"
    CVC = "CVC"
    SWAN_GANZ = "SwanGanz"


class ClassDef(BaseModel):
    """One label column: machine id, display name, risk group and tube category."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(..., min_length=1, description="Short unique token used in CSV headers")
    name: str = Field(..., description="Human-readable display name")
    risk_group: RiskGroup
    tube_category: TubeCategory

    @field_validator("id")
    @classmethod
    def validate_id(cls, v):
        if not v.strip():
            raise ValueError("class id must be non-empty")
        if "," in v or ":" in v:
            raise ValueError(f"class id {v!r} may not contain ',' or ':'")
        return v


class Taxonomy(BaseModel):
    """Ordered class registry. Class order is the canonical column order."""

    model_config = ConfigDict(frozen=True)

    version: str = "1"
    classes: Tuple[ClassDef, ...]

    @model_validator(mode="after")
    def check_invariants(self):
        if not self.classes:
            raise ValueError("taxonomy must declare at least one class")

        seen = set()
        for c in self.classes:
            if c.id in seen:
                raise ValueError(f"duplicate class id: {c.id!r}")
            seen.add(c.id)

        # The high-risk misprediction rule needs a Critical partner for every Normal class
        for category in {c.tube_category for c in self.classes}:
            groups = {c.risk_group for c in self.classes if c.tube_category == category}
            if RiskGroup.NORMAL in groups and RiskGroup.CRITICAL not in groups:
                raise ValueError(
                    f"tube category {category.value} has a normal class but no critical class"
                )
        return self

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def class_ids(self) -> List[str]:
        return [c.id for c in self.classes]

    def index_of(self, class_id: str) -> int:
        for i, c in enumerate(self.classes):
            if c.id == class_id:
                return i
        raise KeyError(class_id)

    def indices(self, risk_group: RiskGroup) -> List[int]:
        """Column indices of every class in a risk group, in canonical order."""
        return [i for i, c in enumerate(self.classes) if c.risk_group == risk_group]

    @property
    def tube_categories(self) -> List[TubeCategory]:
        """Tube categories in order of first appearance."""
        ordered: List[TubeCategory] = []
        for c in self.classes:
            if c.tube_category not in ordered:
                ordered.append(c.tube_category)
        return ordered

    def category_indices(self, category: TubeCategory) -> Dict[RiskGroup, List[int]]:
        """Column indices of one tube category, grouped by risk group."""
        grouped: Dict[RiskGroup, List[int]] = {g: [] for g in RiskGroup}
        for i, c in enumerate(self.classes):
            if c.tube_category == category:
                grouped[c.risk_group].append(i)
        return grouped


# Listing order of the RANZCR CLiP label set
_RANZCR_CLASSES = [
    ("ett_abnormal", "ETT - Abnormal", RiskGroup.CRITICAL, TubeCategory.ETT),
    ("ett_borderline", "ETT - Borderline", RiskGroup.CRITICAL, TubeCategory.ETT),
    ("ett_normal", "ETT - Normal", RiskGroup.NORMAL, TubeCategory.ETT),
    ("ngt_abnormal", "NGT - Abnormal", RiskGroup.CRITICAL, TubeCategory.NGT),
    ("ngt_borderline", "NGT - Borderline", RiskGroup.CRITICAL, TubeCategory.NGT),
    ("ngt_incompletely_imaged", "NGT - Incompletely Imaged", RiskGroup.CRITICAL, TubeCategory.NGT),
    ("ngt_normal", "NGT - Normal", RiskGroup.NORMAL, TubeCategory.NGT),
    ("cvc_abnormal", "CVC - Abnormal", RiskGroup.CRITICAL, TubeCategory.CVC),
    ("cvc_borderline", "CVC - Borderline", RiskGroup.CRITICAL, TubeCategory.CVC),
    ("cvc_normal", "CVC - Normal", RiskGroup.NORMAL, TubeCategory.CVC),
    ("swan_ganz", "Swan Ganz Catheter Present", RiskGroup.OTHER, TubeCategory.SWAN_GANZ),
]


def default_ranzcr() -> Taxonomy:
    """The built-in 11-class line-position taxonomy."""
    return Taxonomy(
        version="ranzcr-1",
        classes=tuple(
            ClassDef(id=cid, name=name, risk_group=group, tube_category=category)
            for cid, name, group, category in _RANZCR_CLASSES
        ),
    )


def parse_taxonomy(text: str) -> Taxonomy:
    """
    Parse and validate a taxonomy JSON document.

    Raises:
        InputError: on malformed JSON or any violated taxonomy invariant
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"taxonomy file is not valid JSON: {e}") from e

    try:
        return Taxonomy.model_validate(data)
    except ValidationError as e:
        raise InputError(f"invalid taxonomy: {e}") from e


def serialize_taxonomy(taxonomy: Taxonomy) -> str:
    """Render a taxonomy in the same JSON layout :func:`parse_taxonomy` reads."""
    return taxonomy.model_dump_json(indent=2) + "\n"


def load_taxonomy(path: str) -> Taxonomy:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise InputError(f"cannot read taxonomy file {path}: {e}") from e
    taxonomy = parse_taxonomy(text)
    logger.debug(f"Loaded taxonomy {taxonomy.version} with {len(taxonomy)} classes from {path}")
    return taxonomy


def fingerprint(taxonomy: Taxonomy) -> str:
    """SHA-256 over the ordered (id, risk_group, tube_category) triples."""
    triples = [[c.id, c.risk_group.value, c.tube_category.value] for c in taxonomy.classes]
    payload = json.dumps(triples, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
