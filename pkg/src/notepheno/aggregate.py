"""Folding per-note verdicts into window outcomes and entity classes.

Window voting compares yes vs no counts around a diagnosis date;
Unknown verdicts are tallied but never sway the vote. Entity
classification applies the same vote to all of a patient's or
admission's verdicts to build a predicted cohort.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from notepheno.corpus import Granularity
from notepheno.llm import Label, NoteVerdict


class WindowResult(Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    INCONCLUSIVE = "inconclusive"
    NO_NOTES = "no_notes"


class EntityLabel(Enum):
    METASTATIC = "metastatic"
    NON_METASTATIC_OR_INCONCLUSIVE = "non_metastatic_or_inconclusive"


def _tally(verdicts: Iterable[NoteVerdict]) -> tuple[int, int, int]:
    n_yes = n_no = n_unknown = 0
    for v in verdicts:
        if v.label is Label.METASTASIS:
            n_yes += 1
        elif v.label is Label.NO_METASTASIS:
            n_no += 1
        else:
            n_unknown += 1
    return n_yes, n_no, n_unknown


@dataclass(frozen=True)
class WindowOutcome:
    """Vote result for one (patient, anchor date, half-width) case."""

    patient_id: str
    anchor: date
    half_width_days: int
    n_yes: int
    n_no: int
    n_unknown: int
    outcome: WindowResult

    def to_json_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "anchor": self.anchor.isoformat(),
            "half_width_days": self.half_width_days,
            "n_yes": self.n_yes,
            "n_no": self.n_no,
            "n_unknown": self.n_unknown,
            "outcome": self.outcome.value,
        }


def vote_window(
    verdicts: Sequence[NoteVerdict],
    patient_id: str,
    anchor: date,
    half_width_days: int,
) -> WindowOutcome:
    """Majority vote over the verdicts inside one review window.

    More yes than no is CORRECT, more no than yes is INCORRECT, a tie
    with any verdicts present is INCONCLUSIVE, and an empty window is
    NO_NOTES. Order never matters and Unknowns never flip the result.
    """
    n_yes, n_no, n_unknown = _tally(verdicts)
    if n_yes + n_no + n_unknown == 0:
        outcome = WindowResult.NO_NOTES
    elif n_yes > n_no:
        outcome = WindowResult.CORRECT
    elif n_no > n_yes:
        outcome = WindowResult.INCORRECT
    else:
        outcome = WindowResult.INCONCLUSIVE
    return WindowOutcome(
        patient_id=patient_id,
        anchor=anchor,
        half_width_days=half_width_days,
        n_yes=n_yes,
        n_no=n_no,
        n_unknown=n_unknown,
        outcome=outcome,
    )


@dataclass(frozen=True)
class EntityClass:
    """Predicted phenotype for one patient or admission."""

    entity_id: str
    granularity: Granularity
    n_yes: int
    n_no: int
    n_unknown: int
    assigned: EntityLabel

    def to_json_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "granularity": self.granularity.value,
            "n_yes": self.n_yes,
            "n_no": self.n_no,
            "n_unknown": self.n_unknown,
            "assigned": self.assigned.value,
        }


def classify_entity(
    entity_id: str,
    granularity: Granularity,
    verdicts: Sequence[NoteVerdict],
) -> EntityClass:
    """Assign METASTATIC only on a strict yes majority; ties and empty
    verdict sets fall to NON_METASTATIC_OR_INCONCLUSIVE."""
    n_yes, n_no, n_unknown = _tally(verdicts)
    assigned = (
        EntityLabel.METASTATIC
        if n_yes > n_no
        else EntityLabel.NON_METASTATIC_OR_INCONCLUSIVE
    )
    return EntityClass(
        entity_id=entity_id,
        granularity=granularity,
        n_yes=n_yes,
        n_no=n_no,
        n_unknown=n_unknown,
        assigned=assigned,
    )


@dataclass(frozen=True)
class PredictedCohort:
    """Model-predicted split of the entity set."""

    positives: frozenset
    negatives: frozenset


def partition_by_prediction(entity_classes: Iterable[EntityClass]) -> PredictedCohort:
    """Collect entity classes into predicted positive/negative sets."""
    positives: set = set()
    negatives: set = set()
    seen: set = set()
    for ec in entity_classes:
        if ec.entity_id in seen:
            raise ValueError(f"duplicate entity id {ec.entity_id!r}")
        seen.add(ec.entity_id)
        if ec.assigned is EntityLabel.METASTATIC:
            positives.add(ec.entity_id)
        else:
            negatives.add(ec.entity_id)
    return PredictedCohort(positives=frozenset(positives), negatives=frozenset(negatives))


def write_outcomes(outcomes: Iterable[WindowOutcome], path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_json_dict(), ensure_ascii=False) + "\n")
    return p


def write_entity_classes(entity_classes: Iterable[EntityClass], path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        for ec in entity_classes:
            fh.write(json.dumps(ec.to_json_dict(), ensure_ascii=False) + "\n")
    return p
