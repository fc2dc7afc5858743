"""Shared fixtures for the linecp test-suite."""
from typing import Callable, Dict

import pytest

from linecp.conformal import PredictionSet
from linecp.dataio import SynthConfig, synth_generate
from linecp.taxonomy import ClassDef, RiskGroup, Taxonomy, TubeCategory, default_ranzcr


@pytest.fixture
def ranzcr() -> Taxonomy:
    return default_ranzcr()


@pytest.fixture
def toy_taxonomy() -> Taxonomy:
    """One tube category: two critical classes and their normal partner."""
    return Taxonomy(
        version="toy",
        classes=(
            ClassDef(id="abnormal", name="Abnormal", risk_group=RiskGroup.CRITICAL, tube_category=TubeCategory.ETT),
            ClassDef(id="borderline", name="Borderline", risk_group=RiskGroup.CRITICAL, tube_category=TubeCategory.ETT),
            ClassDef(id="normal", name="Normal", risk_group=RiskGroup.NORMAL, tube_category=TubeCategory.ETT),
        ),
    )


@pytest.fixture
def make_sets() -> Callable[..., PredictionSet]:
    """Build a PredictionSet from {class_id: code}; unnamed classes default to ``fill``."""

    def build(taxonomy: Taxonomy, codes: Dict[str, str], fill: str = "A") -> PredictionSet:
        unknown = set(codes) - set(taxonomy.class_ids)
        assert not unknown, f"unknown classes {unknown}"
        return PredictionSet.parse([codes.get(cid, fill) for cid in taxonomy.class_ids])

    return build


@pytest.fixture
def synth_cohort(ranzcr):
    config = SynthConfig.uniform(ranzcr, n_cases=600, prevalence=0.3, seed=7,
                                 cases_per_patient=[0.6, 0.3, 0.1])
    return synth_generate(config, ranzcr)
