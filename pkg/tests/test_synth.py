"""Synthetic corpus generator: determinism and planted guarantees."""

import itertools
import random
from collections import defaultdict
from datetime import date

import pytest

from notepheno.corpus import is_metastasis_code, load_diagnoses, load_notes
from notepheno.extract import Lexicon
from notepheno.llm import Label, oracle_classify
from notepheno.synth import (
    _DISTRACTOR_TEMPLATES,
    _MEDICATIONS,
    _n_positive,
    generate_corpus,
    read_truth,
    SynthConfig,
)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    config = SynthConfig(seed=42, n_patients=40, prevalence=0.4)
    paths = generate_corpus(config, tmp_path_factory.mktemp("synth"))
    return config, paths


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        config = SynthConfig(seed=7, n_patients=12)
        one = generate_corpus(config, tmp_path / "one")
        two = generate_corpus(config, tmp_path / "two")
        for a, b in zip((one.notes, one.diagnoses, one.truth), (two.notes, two.diagnoses, two.truth)):
            assert a.read_bytes() == b.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        one = generate_corpus(SynthConfig(seed=7, n_patients=12), tmp_path / "one")
        two = generate_corpus(SynthConfig(seed=8, n_patients=12), tmp_path / "two")
        assert one.notes.read_bytes() != two.notes.read_bytes()


class TestPlantedGuarantees:
    def test_files_load_cleanly(self, corpus):
        config, paths = corpus
        notes = load_notes(paths.notes)
        diagnoses = load_diagnoses(paths.diagnoses)
        truth = read_truth(paths.truth)
        assert len({n.patient_id for n in notes}) == config.n_patients
        assert diagnoses
        assert sum(1 for (_, adm) in truth if adm is None) == config.n_patients

    def test_truth_prevalence_exact_when_target_integral(self, corpus):
        config, paths = corpus
        truth = read_truth(paths.truth)
        n_pos = sum(
            1 for (pid, adm), label in truth.items() if adm is None and label == 1
        )
        assert n_pos == 16  # 40 * 0.4, no fractional remainder

    def test_every_admission_has_a_keyword_note(self, corpus):
        _, paths = corpus
        lex = Lexicon.default()
        by_admission = defaultdict(list)
        for note in load_notes(paths.notes):
            by_admission[note.admission_id].append(note)
        truth = read_truth(paths.truth)
        admissions = {adm for (_, adm) in truth if adm is not None}
        assert set(by_admission) == admissions
        for adm, notes in by_admission.items():
            assert any(lex.search(n.text) for n in notes), adm

    def test_positive_patients_fully_consistent(self, corpus):
        _, paths = corpus
        truth = read_truth(paths.truth)
        positives = {pid for (pid, adm), lab in truth.items() if adm is None and lab == 1}
        dx_by_patient = defaultdict(list)
        for dx in load_diagnoses(paths.diagnoses):
            dx_by_patient[dx.patient_id].append(dx)
        for pid in positives:
            admissions = {adm for (p, adm) in truth if p == pid and adm is not None}
            met = [d for d in dx_by_patient[pid] if is_metastasis_code(d.code_system, d.code)]
            # one dated metastasis code row per admission
            assert {d.admission_id for d in met} == admissions
            assert all(d.diagnosis_date is not None for d in met)
        for note in load_notes(paths.notes):
            if note.patient_id in positives:
                assert oracle_classify(note.text) is not Label.NO_METASTASIS

    def test_negative_patients_fully_consistent(self, corpus):
        config, paths = corpus
        truth = read_truth(paths.truth)
        negatives = {pid for (pid, adm), lab in truth.items() if adm is None and lab == 2}
        assert negatives
        for dx in load_diagnoses(paths.diagnoses):
            if dx.patient_id in negatives:
                assert not is_metastasis_code(dx.code_system, dx.code)
        # with full negation every mention reads as an explicit denial
        assert config.negation_rate == 1.0
        for note in load_notes(paths.notes):
            if note.patient_id in negatives:
                assert oracle_classify(note.text) is not Label.METASTASIS

    def test_note_dates_near_admission_anchor(self, corpus):
        _, paths = corpus
        anchors = {}
        for dx in load_diagnoses(paths.diagnoses):
            if dx.admission_id and is_metastasis_code(dx.code_system, dx.code):
                anchors[dx.admission_id] = dx.diagnosis_date
        checked = 0
        for note in load_notes(paths.notes):
            anchor = anchors.get(note.admission_id)
            if anchor is not None:
                assert abs((note.chart_date - anchor).days) <= 3
                checked += 1
        assert checked > 0

    def test_distractors_carry_no_lexicon_phrase(self):
        lex = Lexicon.default()
        rendered = [
            template.format(n=5, med=med, dose=10, val="10.1", k=3)
            for template, med in itertools.product(_DISTRACTOR_TEMPLATES, _MEDICATIONS)
        ]
        assert all(lex.search(text) is None for text in rendered)


class TestHelpers:
    def test_n_positive_exact_on_integral_target(self):
        rng = random.Random(0)
        assert all(_n_positive(rng, 200, 0.4) == 80 for _ in range(20))
        assert _n_positive(rng, 10, 0.0) == 0
        assert _n_positive(rng, 10, 1.0) == 10

    def test_n_positive_fractional_rounds_both_ways(self):
        rng = random.Random(0)
        draws = {_n_positive(rng, 10, 0.25) for _ in range(200)}
        assert draws == {2, 3}

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_patients": 0},
            {"prevalence": 1.5},
            {"negation_rate": -0.1},
            {"notes_per_patient": (0, 3)},
            {"notes_per_patient": (4, 2)},
            {"distractor_sentences_per_note": (5, 1)},
            {"anchor_date_range": (date(2021, 1, 1), date(2020, 1, 1))},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            SynthConfig(**kwargs)

    def test_read_truth_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_truth(tmp_path / "none.jsonl")
