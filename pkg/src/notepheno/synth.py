"""Seeded synthetic corpus generator with planted ground truth.

Builds notes, coded diagnoses, and a truth file that agree by
construction: planted-positive patients carry dated metastasis codes and
affirmative keyword sentences in every admission, planted-negative
patients carry only benign codes and (by default) only negated keyword
mentions. Distractor sentences never contain lexicon phrases, so
keyword-anchored extraction has real work to do. Same config, same
bytes.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Optional

from notepheno.errors import CorpusError
from notepheno.extract import DEFAULT_LEXICON_PHRASES

# Mention templates. Affirmative ones must not contain negation cues;
# negated ones must put the cue before the keyword in the same sentence.
AFFIRMATIVE_TEMPLATES = (
    "Imaging is consistent with {kw} in the {site}.",
    "Pathology confirms {kw} involving the {site}.",
    "Findings are consistent with {kw}.",
    "Imaging demonstrates {kw} in the {site}.",
)
NEGATED_TEMPLATES = (
    "There is no evidence of {kw}.",
    "No evidence of {kw} on current imaging.",
    "Workup negative for {kw}.",
    "The patient is without {kw} at this time.",
)

SITES = ("liver", "lungs", "spine", "brain", "pelvis", "adrenal glands")

# Distractor sentences must stay free of lexicon phrases (checked in tests).
_MEDICATIONS = ("lisinopril", "metformin", "atorvastatin", "omeprazole")
_DISTRACTOR_TEMPLATES = (
    "Vitals remained stable throughout the day.",
    "Patient reports mild fatigue rated {n} out of 10.",
    "Continue {med} {dose} mg daily.",
    "Labs notable for hemoglobin of {val}.",
    "Follow-up scheduled in {k} weeks.",
    "Diet advanced as tolerated.",
    "Physical exam unremarkable today.",
    "Wound site clean, dry, and intact.",
    "Ambulating in hallway with supervision.",
    "Plan reviewed with the care team.",
    "Sleep quality improved since admission.",
    "Repeat basic metabolic panel in the morning.",
)

# (code_system, dotted code) pools; loaders normalize the dots away.
METASTASIS_CODES = (
    ("ICD9", "197.0"),
    ("ICD9", "198.5"),
    ("ICD9", "199.1"),
    ("ICD10", "C78.7"),
    ("ICD10", "C79.31"),
    ("ICD10", "C80.0"),
)
BENIGN_CODES = (
    ("ICD9", "401.9"),
    ("ICD9", "250.00"),
    ("ICD9", "414.01"),
    ("ICD10", "I10"),
    ("ICD10", "E11.9"),
    ("ICD10", "K21.9"),
)

POSITIVE_LABEL = 1
NEGATIVE_LABEL = 2


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_patients: int = 50
    prevalence: float = 0.3
    notes_per_patient: tuple[int, int] = (2, 5)
    distractor_sentences_per_note: tuple[int, int] = (3, 8)
    negation_rate: float = 1.0
    anchor_date_range: tuple[date, date] = (date(2019, 1, 1), date(2020, 12, 31))

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        if not 0.0 <= self.prevalence <= 1.0:
            raise ValueError("prevalence must be within [0, 1]")
        if not 0.0 <= self.negation_rate <= 1.0:
            raise ValueError("negation_rate must be within [0, 1]")
        lo, hi = self.notes_per_patient
        if lo < 1 or lo > hi:
            raise ValueError("notes_per_patient must satisfy 1 <= lo <= hi")
        dlo, dhi = self.distractor_sentences_per_note
        if dlo < 0 or dlo > dhi:
            raise ValueError("distractor_sentences_per_note must satisfy 0 <= lo <= hi")
        start, end = self.anchor_date_range
        if start > end:
            raise ValueError("anchor_date_range start must not be after end")


@dataclass(frozen=True)
class SynthPaths:
    notes: Path
    diagnoses: Path
    truth: Path


def _n_positive(rng: random.Random, n_patients: int, prevalence: float) -> int:
    target = n_patients * prevalence
    base = math.floor(target + 1e-9)
    frac = target - base
    if frac > 1e-9 and rng.random() < frac:
        base += 1
    return min(base, n_patients)


def _distractor_sentence(rng: random.Random) -> str:
    template = rng.choice(_DISTRACTOR_TEMPLATES)
    return template.format(
        n=rng.randint(1, 9),
        med=rng.choice(_MEDICATIONS),
        dose=rng.choice((5, 10, 20, 40)),
        val=f"{rng.randint(90, 140) / 10:.1f}",
        k=rng.randint(2, 8),
    )


def _mention_sentence(rng: random.Random, negated: bool) -> str:
    template = rng.choice(NEGATED_TEMPLATES if negated else AFFIRMATIVE_TEMPLATES)
    return template.format(kw=rng.choice(DEFAULT_LEXICON_PHRASES), site=rng.choice(SITES))


def _note_text(rng: random.Random, config: SynthConfig, mention: Optional[bool]) -> str:
    """Build one note; ``mention`` is None (no keyword), True (negated),
    or False (affirmative)."""
    dlo, dhi = config.distractor_sentences_per_note
    sentences = [_distractor_sentence(rng) for _ in range(rng.randint(dlo, dhi))]
    if mention is not None:
        count = 2 if rng.random() < 0.25 else 1
        for _ in range(count):
            sentences.insert(
                rng.randint(0, len(sentences)), _mention_sentence(rng, negated=mention)
            )
    return " ".join(sentences)


def generate_corpus(config: SynthConfig, out_dir) -> SynthPaths:
    """Write notes.jsonl, diagnoses.jsonl, and truth.jsonl under ``out_dir``.

    Guarantees, independent of seed:

    * every admission has at least one keyword-bearing note;
    * planted positives have a metastasis code row (dated at the
      admission anchor) per admission and only affirmative mentions;
    * planted negatives have no metastasis code rows and their mentions
      are negated with probability ``negation_rate`` per note;
    * note dates fall within 3 days of their admission anchor.
    """
    rng = random.Random(config.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    n_pos = _n_positive(rng, config.n_patients, config.prevalence)
    flags = [True] * n_pos + [False] * (config.n_patients - n_pos)
    rng.shuffle(flags)

    start, end = config.anchor_date_range
    span_days = (end - start).days
    note_rows: list[dict] = []
    dx_rows: list[dict] = []
    truth_rows: list[dict] = []
    adm_counter = 0
    note_counter = 0

    for p_idx, positive in enumerate(flags):
        patient_id = f"P{p_idx:04d}"
        n_adm = rng.randint(1, 2)
        admissions = []
        for _ in range(n_adm):
            admission_id = f"A{adm_counter:05d}"
            adm_counter += 1
            anchor = start + timedelta(days=rng.randint(0, span_days))
            admissions.append((admission_id, anchor))

        lo, hi = config.notes_per_patient
        n_notes = max(rng.randint(lo, hi), n_adm)
        for i in range(n_notes):
            admission_id, anchor = admissions[i % n_adm]
            first_of_admission = i < n_adm
            if positive:
                flagged = first_of_admission or rng.random() < 0.6
                mention: Optional[bool] = False if flagged else None
            else:
                mentioned = first_of_admission or rng.random() < 0.4
                if mentioned:
                    mention = rng.random() < config.negation_rate
                else:
                    mention = None
            chart_date = anchor + timedelta(days=rng.randint(-3, 3))
            note_rows.append(
                {
                    "note_id": f"N{note_counter:06d}",
                    "patient_id": patient_id,
                    "admission_id": admission_id,
                    "chart_date": chart_date.isoformat(),
                    "text": _note_text(rng, config, mention),
                }
            )
            note_counter += 1

        for admission_id, anchor in admissions:
            if positive:
                system, code = rng.choice(METASTASIS_CODES)
                dx_rows.append(
                    {
                        "patient_id": patient_id,
                        "admission_id": admission_id,
                        "code_system": system,
                        "code": code,
                        "diagnosis_date": anchor.isoformat(),
                    }
                )
            for _ in range(rng.randint(1, 2)):
                system, code = rng.choice(BENIGN_CODES)
                dx_rows.append(
                    {
                        "patient_id": patient_id,
                        "admission_id": admission_id,
                        "code_system": system,
                        "code": code,
                        "diagnosis_date": (anchor + timedelta(days=rng.randint(-2, 2))).isoformat(),
                    }
                )

        label = POSITIVE_LABEL if positive else NEGATIVE_LABEL
        truth_rows.append(
            {"patient_id": patient_id, "admission_id": None, "planted_label": label}
        )
        for admission_id, _ in admissions:
            truth_rows.append(
                {"patient_id": patient_id, "admission_id": admission_id, "planted_label": label}
            )

    paths = SynthPaths(
        notes=out / "notes.jsonl",
        diagnoses=out / "diagnoses.jsonl",
        truth=out / "truth.jsonl",
    )
    for path, rows in (
        (paths.notes, note_rows),
        (paths.diagnoses, dx_rows),
        (paths.truth, truth_rows),
    ):
        with path.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return paths


def read_truth(path) -> dict:
    """Load truth.jsonl as {(patient_id, admission_id or None): label}.

    Patient-level rows have admission_id None; admission-level rows name
    the admission.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"truth file not found: {p}")
    truth = {}
    with p.open(encoding="utf-8") as fh:
        row_no = 0
        for line in fh:
            if not line.strip():
                continue
            row_no += 1
            try:
                row = json.loads(line)
                key = (str(row["patient_id"]), row["admission_id"])
                if key[1] is not None:
                    key = (key[0], str(key[1]))
                truth[key] = int(row["planted_label"])
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"{p}: row {row_no}: bad truth row ({exc!r})") from exc
    return truth
