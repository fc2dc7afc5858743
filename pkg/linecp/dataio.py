"""Score/label files, patient-grouped splitting, synthetic cohorts and file plumbing.

Scores CSV layout (UTF-8, comma separated, '.' decimal)::

    case_id,patient_id,p:<class_id>...[,y:<class_id>...]

p-columns follow taxonomy order; y-columns, when present, follow the same
order. Readers reject malformed input instead of repairing it.

Random streams:
    - grouped_split shuffles with ``random.Random(seed)`` (Mersenne Twister).
    - synth_generate draws from ``numpy.random.Generator(PCG64(seed))`` and
      only consumes uniform doubles, so the stream does not depend on any
      distribution-specific sampler.
    Changing either algorithm requires bumping SYNTH_FORMAT_VERSION.
"""
import csv
import io
import logging
import os
import random
import tempfile
from collections import OrderedDict
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from linecp.exceptions import ConsistencyError, InputError
from linecp.taxonomy import Taxonomy

logger = logging.getLogger(__name__)

SYNTH_FORMAT_VERSION = "1"
SPLIT_BUCKETS = ("train", "validation", "test", "calibration")


class ScoredCase(BaseModel):
    """One image: probability per class, optional binary labels, identifiers."""

    model_config = ConfigDict(frozen=True)

    case_id: str = Field(..., min_length=1)
    patient_id: Optional[str] = None
    scores: Tuple[float, ...]
    labels: Optional[Tuple[int, ...]] = None

    @field_validator("scores")
    @classmethod
    def validate_scores(cls, v):
        for p in v:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"score {p} outside [0, 1]")
        return v

    @field_validator("labels")
    @classmethod
    def validate_labels(cls, v):
        if v is not None and any(y not in (0, 1) for y in v):
            raise ValueError(f"labels must be 0 or 1, got {v}")
        return v

    @model_validator(mode="after")
    def check_widths(self):
        if self.labels is not None and len(self.labels) != len(self.scores):
            raise ValueError(
                f"case {self.case_id}: {len(self.labels)} labels for {len(self.scores)} scores"
            )
        return self

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    @property
    def group_key(self) -> str:
        """Patient key used for grouping; unknown patients are their own group."""
        return self.patient_id if self.patient_id else f"case:{self.case_id}"


def check_cases(cases: List[ScoredCase], taxonomy: Taxonomy, require_labels: bool = False) -> None:
    """
    Validate a batch against a taxonomy.

    Raises:
        InputError: empty batch or missing labels when required
        ConsistencyError: score vector width differs from the taxonomy
    """
    if not cases:
        raise InputError("no cases given")
    width = len(taxonomy)
    for case in cases:
        if len(case.scores) != width:
            raise ConsistencyError(
                f"case {case.case_id} has {len(case.scores)} scores, taxonomy has {width} classes"
            )
        if require_labels and not case.is_labeled:
            raise InputError(f"case {case.case_id} has no labels")


def score_matrix(cases: List[ScoredCase]) -> np.ndarray:
    """(n_cases, n_classes) float array of scores."""
    return np.array([c.scores for c in cases], dtype=np.float64)


def label_matrix(cases: List[ScoredCase]) -> np.ndarray:
    """(n_cases, n_classes) int array of labels. Every case must be labeled."""
    return np.array([c.labels for c in cases], dtype=np.int64)


# ---------------------------------------------------------------------------
# Scores CSV
# ---------------------------------------------------------------------------

def check_row_widths(text: str, what: str) -> None:
    """Reject any CSV row whose field count differs from the header's."""
    width = None
    try:
        for row_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise InputError(f"{what} row {row_no}: {len(row)} fields, header has {width}")
    except csv.Error as e:
        raise InputError(f"unreadable {what}: {e}") from e


def _parse_numbers(df: pd.DataFrame, column: str) -> np.ndarray:
    raw = df[column]
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise InputError(f"row {row + 2}, column {column}: not a number: {raw.iloc[row]!r}")
    return values


def read_scores(text: str, taxonomy: Taxonomy) -> List[ScoredCase]:
    """
    Parse a scores CSV into validated cases, in file order.

    Raises:
        ConsistencyError: header does not match the taxonomy's class columns
        InputError: bad value (score outside [0,1], label not 0/1, duplicate case_id)
    """
    check_row_widths(text, "scores CSV")
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, index_col=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"unreadable scores CSV: {e}") from e

    columns = list(df.columns)
    if columns[:2] != ["case_id", "patient_id"]:
        raise InputError(f"scores CSV must start with case_id,patient_id; got {columns[:2]}")

    p_cols = [f"p:{cid}" for cid in taxonomy.class_ids]
    y_cols = [f"y:{cid}" for cid in taxonomy.class_ids]
    rest = columns[2:]

    for col in p_cols:
        if col not in rest:
            raise ConsistencyError(f"scores CSV is missing column {col}")
    has_labels = any(c.startswith("y:") for c in rest)
    expected = p_cols + (y_cols if has_labels else [])
    for col in rest:
        if col not in expected:
            raise ConsistencyError(f"scores CSV has column {col} not in the taxonomy")
    if rest != expected:
        missing = [c for c in expected if c not in rest]
        if missing:
            raise ConsistencyError(f"scores CSV is missing column {missing[0]}")
        raise ConsistencyError("scores CSV columns are not in taxonomy order")

    scores = np.column_stack([_parse_numbers(df, c) for c in p_cols])
    for j, col in enumerate(p_cols):
        out_of_range = (scores[:, j] < 0.0) | (scores[:, j] > 1.0)
        if out_of_range.any():
            row = int(np.flatnonzero(out_of_range)[0])
            raise InputError(f"row {row + 2}, column {col}: score {scores[row, j]} outside [0, 1]")

    labels = None
    if has_labels:
        for col in y_cols:
            bad = ~df[col].isin(["0", "1"])
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise InputError(f"row {row + 2}, column {col}: label must be 0 or 1, got {df[col].iloc[row]!r}")
        labels = df[y_cols].astype(np.int64).to_numpy()

    seen = set()
    cases = []
    for i, (case_id, patient_id) in enumerate(zip(df["case_id"], df["patient_id"])):
        if not case_id:
            raise InputError(f"row {i + 2}: empty case_id")
        if case_id in seen:
            raise InputError(f"row {i + 2}: duplicate case_id {case_id!r}")
        seen.add(case_id)
        cases.append(ScoredCase(
            case_id=case_id,
            patient_id=patient_id or None,
            scores=tuple(float(p) for p in scores[i]),
            labels=tuple(int(y) for y in labels[i]) if labels is not None else None,
        ))

    logger.debug(f"Read {len(cases)} cases ({'labeled' if has_labels else 'unlabeled'})")
    return cases


def write_scores(cases: List[ScoredCase], taxonomy: Taxonomy) -> str:
    """Render cases as scores CSV text. Labels are written only if every case has them."""
    labeled = [c.is_labeled for c in cases]
    if any(labeled) and not all(labeled):
        raise InputError("cannot write a scores file mixing labeled and unlabeled cases")

    columns: Dict[str, List[Any]] = OrderedDict()
    columns["case_id"] = [c.case_id for c in cases]
    columns["patient_id"] = [c.patient_id or "" for c in cases]
    for j, cid in enumerate(taxonomy.class_ids):
        columns[f"p:{cid}"] = [c.scores[j] for c in cases]
    if cases and all(labeled):
        for j, cid in enumerate(taxonomy.class_ids):
            columns[f"y:{cid}"] = [c.labels[j] for c in cases]

    return pd.DataFrame(columns).to_csv(index=False, lineterminator="\n")


def load_scores(path: str, taxonomy: Taxonomy) -> List[ScoredCase]:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise InputError(f"cannot read scores file {path}: {e}") from e
    return read_scores(text, taxonomy)


# ---------------------------------------------------------------------------
# Patient-grouped split
# ---------------------------------------------------------------------------

class SplitSpec(BaseModel):
    """Target case fractions for train/validation/test/calibration and the shuffle seed."""

    ratios: Tuple[float, float, float, float] = (0.7, 0.1, 0.1, 0.1)
    seed: int = Field(default=42, ge=-(2 ** 63), lt=2 ** 64)

    @field_validator("ratios")
    @classmethod
    def validate_ratios(cls, v):
        if any(r < 0 for r in v):
            raise ValueError(f"ratios must be non-negative, got {v}")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(v)}")
        return v


def grouped_split(cases: List[ScoredCase], spec: SplitSpec) -> Dict[str, List[ScoredCase]]:
    """
    Split cases into four disjoint buckets without splitting any patient.

    Patients are sorted, shuffled with a seeded generator and assigned one by
    one to the bucket whose case count lags its target the most (ties go to
    the earlier bucket).

    Returns:
        Mapping bucket name -> cases, buckets in SPLIT_BUCKETS order; cases
        keep their input order within a bucket.
    """
    if not cases:
        raise InputError("cannot split an empty case list")

    by_patient: Dict[str, List[int]] = {}
    for i, case in enumerate(cases):
        by_patient.setdefault(case.group_key, []).append(i)

    patients = sorted(by_patient)  # deterministic order before shuffle
    random.Random(spec.seed).shuffle(patients)

    targets = [r * len(cases) for r in spec.ratios]
    counts = [0, 0, 0, 0]
    assignment: Dict[str, int] = {}
    for patient in patients:
        deficits = [t - c for t, c in zip(targets, counts)]
        bucket = max(range(4), key=lambda b: (deficits[b], -b))
        assignment[patient] = bucket
        counts[bucket] += len(by_patient[patient])

    buckets: Dict[str, List[ScoredCase]] = {name: [] for name in SPLIT_BUCKETS}
    for case in cases:
        buckets[SPLIT_BUCKETS[assignment[case.group_key]]].append(case)

    logger.debug(f"Split {len(cases)} cases / {len(patients)} patients into {counts}")
    return buckets


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------

class ClassSynth(BaseModel):
    """Generator parameters for one class."""

    prevalence: float = Field(default=0.3, ge=0.0, le=1.0,
                              description="Median latent probability (Bernoulli base rate)")
    sharpness: float = Field(default=1.0, gt=0.0,
                             description="Spread of the latent logit; larger means more confident latents")
    temperature: float = Field(default=1.0, gt=0.0,
                               description="Miscalibration temperature; 1.0 reports the latent unchanged")


class SynthConfig(BaseModel):
    """Synthetic cohort definition. ``classes`` is keyed by class id."""

    classes: Dict[str, ClassSynth]
    n_cases: int = Field(default=1000, ge=1)
    cases_per_patient: List[float] = Field(
        default_factory=lambda: [1.0],
        description="Weights for patients having 1, 2, ... cases",
    )
    seed: int = Field(default=42, ge=0, lt=2 ** 64)

    @field_validator("cases_per_patient")
    @classmethod
    def validate_cases_per_patient(cls, v):
        if not v or any(w < 0 for w in v) or sum(v) <= 0:
            raise ValueError("cases_per_patient needs non-negative weights with a positive sum")
        return v

    @classmethod
    def uniform(cls, taxonomy: Taxonomy, n_cases: int = 1000, prevalence: float = 0.3,
                sharpness: float = 1.0, temperature: float = 1.0, seed: int = 42,
                cases_per_patient: Optional[List[float]] = None) -> "SynthConfig":
        """Same generator parameters for every class of the taxonomy."""
        return cls(
            classes={
                cid: ClassSynth(prevalence=prevalence, sharpness=sharpness, temperature=temperature)
                for cid in taxonomy.class_ids
            },
            n_cases=n_cases,
            cases_per_patient=cases_per_patient or [1.0],
            seed=seed,
        )


def parse_synth_config(text: str) -> SynthConfig:
    try:
        return SynthConfig.model_validate_json(text)
    except ValidationError as e:
        raise InputError(f"invalid synth config: {e}") from e


def _logit(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p) - np.log1p(-p)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def synth_generate(config: SynthConfig, taxonomy: Taxonomy) -> List[ScoredCase]:
    """
    Generate a labeled cohort with known ground truth.

    Per case and class: latent = sigmoid(logit(prevalence) + sharpness * L)
    with L standard logistic; label ~ Bernoulli(latent); reported score =
    sigmoid(logit(latent) / temperature). Calibration and test cases drawn
    from one cohort are exchangeable.
    """
    missing = [cid for cid in taxonomy.class_ids if cid not in config.classes]
    if missing:
        raise InputError(f"synth config has no parameters for class {missing[0]}")
    extra = [cid for cid in config.classes if cid not in taxonomy.class_ids]
    if extra:
        raise InputError(f"synth config names unknown class {extra[0]}")

    params = [config.classes[cid] for cid in taxonomy.class_ids]
    prevalence = np.array([p.prevalence for p in params])
    sharpness = np.array([p.sharpness for p in params])
    temperature = np.array([p.temperature for p in params])

    n, m = config.n_cases, len(taxonomy)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    u_latent = rng.random((n, m))
    u_label = rng.random((n, m))
    u_patient = rng.random(n)

    with np.errstate(invalid="ignore"):
        latent = _sigmoid(_logit(prevalence) + sharpness * _logit(u_latent))
        # degenerate prevalences stay exact
        latent = np.where(prevalence == 0.0, 0.0, np.where(prevalence == 1.0, 1.0, latent))
        labels = (u_label < latent).astype(np.int64)
        scores = _sigmoid(_logit(latent) / temperature)
    scores = np.clip(np.nan_to_num(scores, nan=0.0), 0.0, 1.0)

    weights = np.asarray(config.cases_per_patient, dtype=np.float64)
    cdf = np.cumsum(weights / weights.sum())
    patient_ids: List[str] = []
    patient, i = 0, 0
    while i < n:
        patient += 1
        size = int(np.searchsorted(cdf, u_patient[patient - 1], side="right")) + 1
        size = min(size, len(weights), n - i)
        patient_ids.extend([f"patient-{patient:06d}"] * size)
        i += size

    cases = [
        ScoredCase(
            case_id=f"case-{k + 1:06d}",
            patient_id=patient_ids[k],
            scores=tuple(float(p) for p in scores[k]),
            labels=tuple(int(y) for y in labels[k]),
        )
        for k in range(n)
    ]
    logger.debug(f"Generated {n} synthetic cases for {patient} patients (seed={config.seed})")
    return cases


# ---------------------------------------------------------------------------
# Atomic file output
# ---------------------------------------------------------------------------

def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path: str, text: str) -> None:
    """
    Write text to path through a temp file in the same directory, then rename.
    The file gets the permissions a plain open() would give it.
    """
    if not text.endswith("\n"):
        text += "\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".linecp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        # mkstemp creates 0600
        os.chmod(tmp_path, 0o666 & ~_umask())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
