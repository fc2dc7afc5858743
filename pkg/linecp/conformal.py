"""Split conformal calibration and prediction sets for multi-label scores.

Each class is a binary task with outcomes Present (label 1) and Absent
(label 0). Nonconformity is ``1 - p`` for Present and ``p`` for Absent. A
threshold is the ``ceil((n+1)(1-alpha))``-th smallest calibration score, or
infinite when that rank exceeds ``n``. An outcome joins a class's prediction
set when its score is ``<=`` the applicable threshold.
"""
import logging
import math
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator, model_validator

from linecp.dataio import ScoredCase, atomic_write, check_cases, label_matrix, score_matrix
from linecp.exceptions import CalibrationError, ConsistencyError, InputError
from linecp.taxonomy import RiskGroup, Taxonomy, fingerprint

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = "1"

# Keys of the group-pooled risk-sensitive thresholds
CRIT_PRESENT = "crit_present"
CRIT_ABSENT = "crit_absent"
STANDARD = "standard"


class Outcome(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"

    @classmethod
    def from_label(cls, y: int) -> "Outcome":
        return cls.PRESENT if y == 1 else cls.ABSENT


class CalibrationMode(str, Enum):
    INDEPENDENT = "independent"
    RISK_SENSITIVE = "risk-sensitive"


class Pooling(str, Enum):
    GROUP = "group"
    PER_CLASS = "per-class"


class OutcomeSet(str, Enum):
    """One class's prediction set, encoded the way the triage CSV writes it."""

    EMPTY = ""
    PRESENT = "P"
    ABSENT = "A"
    BOTH = "PA"

    @classmethod
    def of(cls, has_present: bool, has_absent: bool) -> "OutcomeSet":
        if has_present and has_absent:
            return cls.BOTH
        if has_present:
            return cls.PRESENT
        if has_absent:
            return cls.ABSENT
        return cls.EMPTY

    @property
    def has_present(self) -> bool:
        return self in (OutcomeSet.PRESENT, OutcomeSet.BOTH)

    @property
    def has_absent(self) -> bool:
        return self in (OutcomeSet.ABSENT, OutcomeSet.BOTH)

    @property
    def size(self) -> int:
        return len(self.value)

    def covers(self, label: int) -> bool:
        return self.has_present if label == 1 else self.has_absent


class PredictionSet(BaseModel):
    """Per-class prediction sets in taxonomy order."""

    model_config = ConfigDict(frozen=True)

    sets: Tuple[OutcomeSet, ...]

    def __len__(self) -> int:
        return len(self.sets)

    def __getitem__(self, i: int) -> OutcomeSet:
        return self.sets[i]

    @property
    def sizes(self) -> List[int]:
        return [s.size for s in self.sets]

    @classmethod
    def parse(cls, codes: Sequence[str]) -> "PredictionSet":
        """Build from encoded sets ("", "P", "A", "PA")."""
        try:
            return cls(sets=tuple(OutcomeSet(c) for c in codes))
        except ValueError as e:
            raise InputError(f"invalid prediction set code in {list(codes)}") from e


class ConformalThreshold(BaseModel):
    """A conformal quantile: value, calibration count and the rank used."""

    model_config = ConfigDict(frozen=True)

    q_hat: float
    n_cal: int = Field(..., ge=1)
    rank_k: int = Field(..., ge=1)

    @field_validator("q_hat", mode="before")
    @classmethod
    def parse_infinite(cls, v):
        if isinstance(v, str) and v == "inf":
            return math.inf
        return v

    @model_validator(mode="after")
    def check_rank(self):
        if self.rank_k > self.n_cal and not self.is_infinite:
            raise ValueError(f"rank {self.rank_k} > n {self.n_cal} requires an infinite threshold")
        if not self.is_infinite and not 0.0 <= self.q_hat <= 1.0:
            raise ValueError(f"finite threshold {self.q_hat} outside [0, 1]")
        return self

    @field_serializer("q_hat")
    def serialize_q_hat(self, v: float):
        return "inf" if math.isinf(v) else v

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.q_hat)

    def admits(self, score: float) -> bool:
        return score <= self.q_hat


class CalibrationModel(BaseModel):
    """
    Frozen conformal thresholds.

    ``thresholds`` keys by mode:
        independent:              <class_id>
        risk-sensitive, group:    crit_present, crit_absent, standard
        risk-sensitive, per-class: <class_id>:present, <class_id>:absent
    """

    model_config = ConfigDict(frozen=True)

    version: str = MODEL_FORMAT_VERSION
    mode: CalibrationMode
    alpha_standard: float = Field(..., gt=0.0, lt=1.0)
    alpha_critical: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    pooling: Optional[Pooling] = None
    taxonomy_fingerprint: str
    thresholds: Dict[str, ConformalThreshold]

    @model_validator(mode="after")
    def check_mode_fields(self):
        if self.mode == CalibrationMode.RISK_SENSITIVE:
            if self.alpha_critical is None or self.pooling is None:
                raise ValueError("risk-sensitive models need alpha_critical and pooling")
            if self.alpha_critical >= self.alpha_standard:
                raise ValueError(
                    f"alpha_critical ({self.alpha_critical}) must be below alpha_standard ({self.alpha_standard})"
                )
        return self

    def check_taxonomy(self, taxonomy: Taxonomy) -> None:
        digest = fingerprint(taxonomy)
        if digest != self.taxonomy_fingerprint:
            raise ConsistencyError(
                f"model was calibrated for taxonomy {self.taxonomy_fingerprint[:12]}, "
                f"scores use taxonomy {digest[:12]}"
            )

    def _threshold(self, key: str) -> ConformalThreshold:
        try:
            return self.thresholds[key]
        except KeyError:
            raise ConsistencyError(f"model has no threshold {key!r}") from None

    def class_thresholds(self, taxonomy: Taxonomy) -> List[Tuple[ConformalThreshold, ConformalThreshold]]:
        """(present-threshold, absent-threshold) for every class in taxonomy order."""
        self.check_taxonomy(taxonomy)
        pairs = []
        for c in taxonomy.classes:
            if self.mode == CalibrationMode.INDEPENDENT:
                t = self._threshold(c.id)
                pairs.append((t, t))
            elif self.pooling == Pooling.PER_CLASS:
                pairs.append((self._threshold(f"{c.id}:present"), self._threshold(f"{c.id}:absent")))
            elif c.risk_group == RiskGroup.CRITICAL:
                pairs.append((self._threshold(CRIT_PRESENT), self._threshold(CRIT_ABSENT)))
            else:
                t = self._threshold(STANDARD)
                pairs.append((t, t))
        return pairs

    def threshold_vectors(self, taxonomy: Taxonomy) -> Tuple[np.ndarray, np.ndarray]:
        pairs = self.class_thresholds(taxonomy)
        present = np.array([p.q_hat for p, _ in pairs], dtype=np.float64)
        absent = np.array([a.q_hat for _, a in pairs], dtype=np.float64)
        return present, absent

    def to_json(self) -> str:
        return self.model_dump_json(indent=2, exclude_none=True) + "\n"


# ---------------------------------------------------------------------------
# Scores and quantiles
# ---------------------------------------------------------------------------

def nonconformity(p: float, outcome: Outcome) -> float:
    """1 - p for Present, p for Absent."""
    if not 0.0 <= p <= 1.0:
        raise InputError(f"probability {p} outside [0, 1]")
    return 1.0 - p if outcome == Outcome.PRESENT else p


def _check_alpha(alpha: float, name: str = "alpha") -> None:
    if not 0.0 < alpha < 1.0:
        raise InputError(f"{name} must be in (0, 1), got {alpha}")


def conformal_rank(n: int, alpha: float) -> int:
    """ceil((n+1)(1-alpha)); the epsilon absorbs float error on exact integers."""
    return max(1, math.ceil((n + 1) * (1.0 - alpha) - 1e-9))


def conformal_quantile(scores: Sequence[float], alpha: float, stratum: str = "scores") -> ConformalThreshold:
    """
    Finite-sample conformal quantile of calibration scores.

    Raises:
        CalibrationError: scores is empty
        InputError: alpha outside (0, 1) or a score outside [0, 1]
    """
    _check_alpha(alpha)
    values = np.sort(np.asarray(scores, dtype=np.float64))
    n = int(values.size)
    if n == 0:
        raise CalibrationError(f"calibration stratum {stratum!r} is empty", stratum=stratum)
    if not (values[0] >= 0.0 and values[-1] <= 1.0):
        raise InputError(f"calibration scores for {stratum!r} must lie in [0, 1]")

    k = conformal_rank(n, alpha)
    q_hat = math.inf if k > n else float(values[k - 1])
    if math.isinf(q_hat):
        logger.warning(f"Stratum {stratum!r}: rank {k} exceeds n={n} at alpha={alpha}; threshold is infinite")
    return ConformalThreshold(q_hat=q_hat, n_cal=n, rank_k=k)


def true_outcome_scores(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Nonconformity of the true outcome, element-wise."""
    return np.where(labels == 1, 1.0 - scores, scores)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def calibrate_independent(cal: List[ScoredCase], taxonomy: Taxonomy, alpha: float) -> CalibrationModel:
    """One threshold per class over the true-outcome scores of that class."""
    _check_alpha(alpha)
    check_cases(cal, taxonomy, require_labels=True)
    residuals = true_outcome_scores(score_matrix(cal), label_matrix(cal))

    thresholds = {
        c.id: conformal_quantile(residuals[:, i], alpha, stratum=c.id)
        for i, c in enumerate(taxonomy.classes)
    }
    model = CalibrationModel(
        mode=CalibrationMode.INDEPENDENT,
        alpha_standard=alpha,
        taxonomy_fingerprint=fingerprint(taxonomy),
        thresholds=thresholds,
    )
    logger.info(f"Calibrated independent model on {len(cal)} cases, alpha={alpha}")
    return model


def calibrate_risk_sensitive(cal: List[ScoredCase], taxonomy: Taxonomy, alpha_standard: float,
                             alpha_critical: float, pooling: Pooling = Pooling.GROUP) -> CalibrationModel:
    """
    Label-conditional calibration with a stricter rate for critical Present.

    Group pooling builds three thresholds from pooled strata: critical
    Present (alpha_critical), critical Absent (alpha_standard) and every
    normal/other score (alpha_standard). Per-class pooling builds a Present
    and an Absent threshold per class; only critical Present uses
    alpha_critical.

    Raises:
        InputError: alpha_critical >= alpha_standard
        CalibrationError: a required stratum is empty
    """
    _check_alpha(alpha_standard, "alpha_standard")
    _check_alpha(alpha_critical, "alpha_critical")
    if alpha_critical >= alpha_standard:
        raise InputError(f"alpha_critical ({alpha_critical}) must be below alpha ({alpha_standard})")
    pooling = Pooling(pooling)
    check_cases(cal, taxonomy, require_labels=True)

    scores = score_matrix(cal)
    labels = label_matrix(cal)
    critical = taxonomy.indices(RiskGroup.CRITICAL)
    standard = taxonomy.indices(RiskGroup.NORMAL) + taxonomy.indices(RiskGroup.OTHER)

    thresholds: Dict[str, ConformalThreshold] = {}
    if pooling == Pooling.GROUP:
        if critical:
            p, y = scores[:, critical], labels[:, critical]
            thresholds[CRIT_PRESENT] = conformal_quantile(1.0 - p[y == 1], alpha_critical, stratum="critical/present")
            thresholds[CRIT_ABSENT] = conformal_quantile(p[y == 0], alpha_standard, stratum="critical/absent")
        if standard:
            residuals = true_outcome_scores(scores[:, standard], labels[:, standard])
            thresholds[STANDARD] = conformal_quantile(residuals.ravel(), alpha_standard, stratum="normal+other")
    else:
        for i, c in enumerate(taxonomy.classes):
            p, y = scores[:, i], labels[:, i]
            present_alpha = alpha_critical if c.risk_group == RiskGroup.CRITICAL else alpha_standard
            thresholds[f"{c.id}:present"] = conformal_quantile(1.0 - p[y == 1], present_alpha, stratum=f"{c.id}/present")
            thresholds[f"{c.id}:absent"] = conformal_quantile(p[y == 0], alpha_standard, stratum=f"{c.id}/absent")

    for key, t in thresholds.items():
        logger.debug(f"Threshold {key}: q_hat={t.q_hat} n={t.n_cal} k={t.rank_k}")

    model = CalibrationModel(
        mode=CalibrationMode.RISK_SENSITIVE,
        alpha_standard=alpha_standard,
        alpha_critical=alpha_critical,
        pooling=pooling,
        taxonomy_fingerprint=fingerprint(taxonomy),
        thresholds=thresholds,
    )
    logger.info(
        f"Calibrated risk-sensitive model ({pooling.value}) on {len(cal)} cases, "
        f"alpha={alpha_standard}, alpha_critical={alpha_critical}"
    )
    return model


def calibrate(cal: List[ScoredCase], taxonomy: Taxonomy, mode: CalibrationMode, alpha: float,
              alpha_critical: Optional[float] = None, pooling: Pooling = Pooling.GROUP) -> CalibrationModel:
    """Dispatch on mode."""
    if CalibrationMode(mode) == CalibrationMode.INDEPENDENT:
        return calibrate_independent(cal, taxonomy, alpha)
    if alpha_critical is None:
        raise InputError("risk-sensitive calibration needs alpha_critical")
    return calibrate_risk_sensitive(cal, taxonomy, alpha, alpha_critical, pooling)


# ---------------------------------------------------------------------------
# Prediction sets
# ---------------------------------------------------------------------------

def predict_sets(model: CalibrationModel, case: ScoredCase, taxonomy: Taxonomy) -> PredictionSet:
    """
    Prediction set for one case.

    Raises:
        ConsistencyError: model fingerprint or score width does not match the taxonomy
    """
    return predict_batch(model, [case], taxonomy)[0]


def predict_batch(model: CalibrationModel, cases: List[ScoredCase], taxonomy: Taxonomy) -> List[PredictionSet]:
    """Vectorized :func:`predict_sets` over many cases."""
    present_t, absent_t = model.threshold_vectors(taxonomy)
    check_cases(cases, taxonomy)
    p = score_matrix(cases)
    has_present = (1.0 - p) <= present_t
    has_absent = p <= absent_t
    return [
        PredictionSet(sets=tuple(OutcomeSet.of(bool(hp), bool(ha)) for hp, ha in zip(row_p, row_a)))
        for row_p, row_a in zip(has_present, has_absent)
    ]


def threshold_summary(model: CalibrationModel) -> List[Dict[str, object]]:
    """One row per stored threshold: key, q_hat, n_cal, rank_k."""
    return [
        {"threshold": key, "q_hat": t.q_hat, "n_cal": t.n_cal, "rank_k": t.rank_k}
        for key, t in model.thresholds.items()
    ]


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def parse_model(text: str) -> CalibrationModel:
    try:
        return CalibrationModel.model_validate_json(text)
    except ValidationError as e:
        raise InputError(f"invalid model file: {e}") from e


def load_model(path: str) -> CalibrationModel:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise InputError(f"cannot read model file {path}: {e}") from e
    return parse_model(text)


def save_model(path: str, model: CalibrationModel) -> None:
    atomic_write(path, model.to_json())
    logger.info(f"Wrote {model.mode.value} model to {path}")
