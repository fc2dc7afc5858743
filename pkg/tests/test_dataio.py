import os

import numpy as np
import pytest

from linecp.dataio import (
    SPLIT_BUCKETS,
    ClassSynth,
    ScoredCase,
    SplitSpec,
    SynthConfig,
    atomic_write,
    grouped_split,
    load_scores,
    parse_synth_config,
    read_scores,
    synth_generate,
    write_scores,
)
from linecp.exceptions import ConsistencyError, InputError

HEADER = "case_id,patient_id,p:abnormal,p:borderline,p:normal"
LABELED_HEADER = HEADER + ",y:abnormal,y:borderline,y:normal"


# ---------------------------------------------------------------------------
# Scores CSV
# ---------------------------------------------------------------------------

def test_read_unlabeled(toy_taxonomy):
    cases = read_scores(f"{HEADER}\na,pat1,0.1,0.2,0.9\nb,,0,1,0.5\n", toy_taxonomy)
    assert [c.case_id for c in cases] == ["a", "b"]
    assert cases[0].patient_id == "pat1"
    assert cases[1].patient_id is None
    assert cases[1].group_key == "case:b"
    assert cases[1].scores == (0.0, 1.0, 0.5)
    assert not any(c.is_labeled for c in cases)


def test_read_labeled(toy_taxonomy):
    cases = read_scores(f"{LABELED_HEADER}\na,p,0.1,0.2,0.9,0,0,1\n", toy_taxonomy)
    assert cases[0].labels == (0, 0, 1)


def test_write_then_read(toy_taxonomy):
    text = f"{LABELED_HEADER}\na,p1,0.125,0.25,0.875,0,1,1\nb,,0.5,0.0,1.0,1,0,0\n"
    cases = read_scores(text, toy_taxonomy)
    again = write_scores(cases, toy_taxonomy)
    assert read_scores(again, toy_taxonomy) == cases
    assert again.endswith("\n")
    assert again.splitlines()[0] == LABELED_HEADER


def test_score_out_of_range_names_row_and_column(toy_taxonomy):
    with pytest.raises(InputError, match=r"row 2, column p:abnormal"):
        read_scores(f"{HEADER}\na,,1.3,0.2,0.9\n", toy_taxonomy)


@pytest.mark.parametrize("value", ["", "abc", "nan", "inf"])
def test_non_numeric_score_rejected(toy_taxonomy, value):
    with pytest.raises(InputError, match="column p:borderline"):
        read_scores(f"{HEADER}\na,,0.1,{value},0.9\n", toy_taxonomy)


@pytest.mark.parametrize("label", ["2", "0.5", "", "yes"])
def test_bad_label_rejected(toy_taxonomy, label):
    with pytest.raises(InputError, match="row 3, column y:normal"):
        read_scores(f"{LABELED_HEADER}\na,,0.1,0.2,0.9,0,0,1\nb,,0.1,0.2,0.9,0,0,{label}\n", toy_taxonomy)


def test_duplicate_case_id_rejected(toy_taxonomy):
    with pytest.raises(InputError, match="duplicate"):
        read_scores(f"{HEADER}\na,,0.1,0.2,0.9\na,,0.1,0.2,0.9\n", toy_taxonomy)


def test_missing_class_column_is_consistency_error(toy_taxonomy):
    with pytest.raises(ConsistencyError, match="p:normal"):
        read_scores("case_id,patient_id,p:abnormal,p:borderline\na,,0.1,0.2\n", toy_taxonomy)


def test_unknown_class_column_is_consistency_error(toy_taxonomy):
    with pytest.raises(ConsistencyError, match="p:extra"):
        read_scores(f"{HEADER},p:extra\na,,0.1,0.2,0.9,0.4\n", toy_taxonomy)


def test_reordered_columns_rejected(toy_taxonomy):
    with pytest.raises(ConsistencyError, match="order"):
        read_scores("case_id,patient_id,p:borderline,p:abnormal,p:normal\na,,0.1,0.2,0.9\n", toy_taxonomy)


def test_partial_labels_rejected(toy_taxonomy):
    with pytest.raises(ConsistencyError, match="y:normal"):
        read_scores(f"{HEADER},y:abnormal,y:borderline\na,,0.1,0.2,0.9,0,0\n", toy_taxonomy)


def test_surplus_field_in_every_row_rejected(toy_taxonomy):
    rows = "c1,pt1,0.1,0.2,0.3,0.4\nc2,pt2,0.5,0.6,0.7,0.8\n"
    with pytest.raises(InputError, match="row 2: 6 fields, header has 5"):
        read_scores(f"{HEADER}\n{rows}", toy_taxonomy)


@pytest.mark.parametrize("row", ["a,,0.1,0.2", "a,,0.1,0.2,0.9,0.4"])
def test_row_width_mismatch_rejected(toy_taxonomy, row):
    with pytest.raises(InputError, match="row 3"):
        read_scores(f"{HEADER}\nz,,0.1,0.2,0.9\n{row}\n", toy_taxonomy)


def test_bad_leading_columns_rejected(toy_taxonomy):
    with pytest.raises(InputError):
        read_scores("id,p:abnormal,p:borderline,p:normal\na,0.1,0.2,0.9\n", toy_taxonomy)


def test_load_scores_missing_file(tmp_path, toy_taxonomy):
    with pytest.raises(InputError):
        load_scores(str(tmp_path / "missing.csv"), toy_taxonomy)


def test_scored_case_validates_ranges():
    with pytest.raises(ValueError):
        ScoredCase(case_id="a", scores=(1.5,))
    with pytest.raises(ValueError):
        ScoredCase(case_id="a", scores=(0.5,), labels=(2,))
    with pytest.raises(ValueError):
        ScoredCase(case_id="a", scores=(0.5, 0.5), labels=(1,))


# ---------------------------------------------------------------------------
# Grouped split
# ---------------------------------------------------------------------------

def _cases(patients):
    return [ScoredCase(case_id=f"c{i}", patient_id=p, scores=(0.5,)) for i, p in enumerate(patients)]


def test_split_ten_single_case_patients():
    buckets = grouped_split(_cases([f"p{i}" for i in range(10)]), SplitSpec(ratios=(0.7, 0.1, 0.1, 0.1), seed=42))
    assert [len(buckets[name]) for name in SPLIT_BUCKETS] == [7, 1, 1, 1]


def test_split_is_a_partition(synth_cohort):
    buckets = grouped_split(synth_cohort, SplitSpec(seed=3))
    ids = sorted(c.case_id for name in SPLIT_BUCKETS for c in buckets[name])
    assert ids == sorted(c.case_id for c in synth_cohort)


def test_split_keeps_patients_together(synth_cohort):
    buckets = grouped_split(synth_cohort, SplitSpec(seed=5))
    owner = {}
    for name in SPLIT_BUCKETS:
        for case in buckets[name]:
            assert owner.setdefault(case.group_key, name) == name


def test_split_cases_without_patient_are_singletons():
    cases = [ScoredCase(case_id=f"c{i}", scores=(0.5,)) for i in range(20)]
    buckets = grouped_split(cases, SplitSpec(ratios=(0.5, 0.0, 0.0, 0.5), seed=1))
    assert len(buckets["train"]) == 10
    assert len(buckets["calibration"]) == 10


def test_split_deterministic(synth_cohort):
    a = grouped_split(synth_cohort, SplitSpec(seed=42))
    b = grouped_split(list(synth_cohort), SplitSpec(seed=42))
    assert a == b


def test_split_seed_changes_assignment(synth_cohort):
    a = grouped_split(synth_cohort, SplitSpec(seed=1))
    b = grouped_split(synth_cohort, SplitSpec(seed=2))
    assert a != b


def test_split_approximates_ratios(synth_cohort):
    buckets = grouped_split(synth_cohort, SplitSpec(seed=9))
    n = len(synth_cohort)
    for name, ratio in zip(SPLIT_BUCKETS, (0.7, 0.1, 0.1, 0.1)):
        assert abs(len(buckets[name]) - ratio * n) <= 5


def test_split_rejects_empty():
    with pytest.raises(InputError):
        grouped_split([], SplitSpec())


@pytest.mark.parametrize("ratios", [(0.7, 0.1, 0.1, 0.2), (1.1, -0.1, 0.0, 0.0)])
def test_split_spec_validates_ratios(ratios):
    with pytest.raises(ValueError):
        SplitSpec(ratios=ratios)


# ---------------------------------------------------------------------------
# Synthetic cohorts
# ---------------------------------------------------------------------------

def test_synth_is_deterministic(ranzcr):
    config = SynthConfig.uniform(ranzcr, n_cases=200, seed=99, cases_per_patient=[0.5, 0.5])
    first = write_scores(synth_generate(config, ranzcr), ranzcr)
    second = write_scores(synth_generate(config, ranzcr), ranzcr)
    assert first == second


def test_synth_seed_matters(ranzcr):
    a = synth_generate(SynthConfig.uniform(ranzcr, n_cases=50, seed=1), ranzcr)
    b = synth_generate(SynthConfig.uniform(ranzcr, n_cases=50, seed=2), ranzcr)
    assert a != b


def test_synth_zero_prevalence_never_present(toy_taxonomy):
    config = SynthConfig(
        classes={
            "abnormal": ClassSynth(prevalence=0.0),
            "borderline": ClassSynth(prevalence=0.5),
            "normal": ClassSynth(prevalence=1.0),
        },
        n_cases=500,
        seed=3,
    )
    cases = synth_generate(config, toy_taxonomy)
    assert all(c.labels[0] == 0 and c.scores[0] == 0.0 for c in cases)
    assert all(c.labels[2] == 1 and c.scores[2] == 1.0 for c in cases)


def test_synth_labels_follow_latents(toy_taxonomy):
    # At temperature 1 the reported score is the latent probability.
    config = SynthConfig.uniform(toy_taxonomy, n_cases=5000, prevalence=0.5, temperature=1.0, seed=17)
    cases = synth_generate(config, toy_taxonomy)
    labels = np.array([c.labels for c in cases], dtype=float)
    latents = np.array([c.scores for c in cases])
    for j in range(3):
        se = np.sqrt(np.mean(latents[:, j] * (1 - latents[:, j])) / len(cases))
        assert abs(labels[:, j].mean() - latents[:, j].mean()) <= 3 * se


def test_synth_patient_grouping(ranzcr):
    config = SynthConfig.uniform(ranzcr, n_cases=300, seed=8, cases_per_patient=[0.0, 0.0, 1.0])
    cases = synth_generate(config, ranzcr)
    sizes = {}
    for c in cases:
        sizes[c.patient_id] = sizes.get(c.patient_id, 0) + 1
    assert set(sizes.values()) == {3}


def test_synth_config_must_cover_taxonomy(ranzcr, toy_taxonomy):
    with pytest.raises(InputError):
        synth_generate(SynthConfig.uniform(toy_taxonomy, n_cases=5), ranzcr)


def test_parse_synth_config(toy_taxonomy):
    config = SynthConfig.uniform(toy_taxonomy, n_cases=10, seed=4)
    assert parse_synth_config(config.model_dump_json()) == config
    with pytest.raises(InputError):
        parse_synth_config('{"classes": {"abnormal": {"temperature": 0}}}')


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def test_atomic_write_adds_trailing_newline(tmp_path):
    path = tmp_path / "out.txt"
    atomic_write(str(path), "hello")
    assert path.read_text(encoding="utf-8") == "hello\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]


@pytest.mark.skipif(os.name != "posix", reason="POSIX permission bits")
def test_atomic_write_follows_umask(tmp_path):
    previous = os.umask(0o022)
    try:
        atomic_write(str(tmp_path / "out.txt"), "hello")
    finally:
        os.umask(previous)
    assert os.stat(tmp_path / "out.txt").st_mode & 0o777 == 0o644
