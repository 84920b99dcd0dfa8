"""Corpus ingestion: clinical notes and coded diagnoses.

File schemas, accepted as JSON Lines or CSV (extension-inferred unless a
format is passed explicitly):

* notes: note_id, patient_id, admission_id (optional), chart_date
  (ISO-8601; timestamps are truncated to the day), text (may be empty)
* diagnoses: patient_id, admission_id (optional), code_system
  ("ICD9" | "ICD10"), code, diagnosis_date (optional)

Codes are normalized to uppercase with dots removed ("C78.1" -> "C781")
before any prefix matching. Schema violations raise CorpusError naming
the 1-based data row.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from notepheno.errors import CorpusError
from notepheno.extract import Lexicon


class CodeSystem(Enum):
    ICD9 = "ICD9"
    ICD10 = "ICD10"


class Granularity(Enum):
    PATIENT = "patient"
    ADMISSION = "admission"


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    patient_id: str
    chart_date: date
    text: str
    admission_id: Optional[str] = None


@dataclass(frozen=True)
class IcdDiagnosis:
    """One coded diagnosis row; ``code`` is always normalized."""

    patient_id: str
    code_system: CodeSystem
    code: str
    admission_id: Optional[str] = None
    diagnosis_date: Optional[date] = None


@dataclass(frozen=True)
class CohortPartition:
    """Code-derived split of an entity set into positives and negatives."""

    granularity: Granularity
    positives: frozenset
    negatives: frozenset


DEFAULT_METASTASIS_PREFIXES: Mapping[CodeSystem, tuple[str, ...]] = {
    CodeSystem.ICD9: ("197", "198", "199"),
    CodeSystem.ICD10: ("C78", "C79", "C80"),
}

NOTE_FIELDS = ("note_id", "patient_id", "admission_id", "chart_date", "text")
DIAGNOSIS_FIELDS = ("patient_id", "admission_id", "code_system", "code", "diagnosis_date")


def normalize_code(code: str) -> str:
    """Uppercase and strip dots; idempotent."""
    # strip again: removing dots can expose trailing whitespace ("1 .")
    return code.strip().upper().replace(".", "").strip()


def is_metastasis_code(
    code_system: CodeSystem,
    code: str,
    prefixes: Optional[Mapping[CodeSystem, tuple[str, ...]]] = None,
) -> bool:
    """Prefix test on a normalized code against the metastasis code table."""
    table = DEFAULT_METASTASIS_PREFIXES if prefixes is None else prefixes
    return normalize_code(code).startswith(tuple(table.get(code_system, ())))


def _detect_format(path: Path, fmt: Optional[str]) -> str:
    if fmt:
        if fmt not in ("jsonl", "csv"):
            raise CorpusError(f"unsupported format {fmt!r}; expected jsonl or csv")
        return fmt
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".ndjson", ".json"):
        return "jsonl"
    if suffix == ".csv":
        return "csv"
    raise CorpusError(f"cannot infer format of {path}; pass jsonl or csv explicitly")


def _iter_rows(path: Path, fmt: str, required_columns: Sequence[str]):
    """Yield (row_number, row_dict); row numbers are 1-based data rows."""
    if fmt == "jsonl":
        with path.open(encoding="utf-8") as fh:
            row_no = 0
            for line in fh:
                if not line.strip():
                    continue
                row_no += 1
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}: row {row_no}: invalid JSON ({exc.msg})")
                if not isinstance(row, dict):
                    raise CorpusError(f"{path}: row {row_no}: expected a JSON object")
                yield row_no, row
    else:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required_columns if c not in header]
            if missing:
                raise CorpusError(f"{path}: missing column(s): {', '.join(missing)}")
            for row_no, row in enumerate(reader, start=1):
                yield row_no, {k: v for k, v in row.items() if k is not None}


def _require_str(row: dict, row_no: int, field: str, path: Path) -> str:
    value = row.get(field)
    if value is None or (isinstance(value, str) and not value.strip()):
        raise CorpusError(f"{path}: row {row_no}: missing required field {field!r}")
    return str(value).strip()


def _optional_str(value) -> Optional[str]:
    if value is None:
        return None
    text = str(value).strip()
    return text or None


def _parse_date(value, row_no: int, field: str, path: Path, required: bool) -> Optional[date]:
    if value is None or (isinstance(value, str) and not value.strip()):
        if required:
            raise CorpusError(f"{path}: row {row_no}: missing required field {field!r}")
        return None
    raw = str(value).strip()
    try:
        return date.fromisoformat(raw)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(raw).date()
    except ValueError:
        raise CorpusError(f"{path}: row {row_no}: field {field!r}: unparseable date {raw!r}")


def load_notes(path, fmt: Optional[str] = None) -> list[ClinicalNote]:
    """Load clinical notes, preserving row order.

    Rejects rows with missing note_id/patient_id/chart_date, unparseable
    dates, and duplicate note_ids. ``text`` must be present but may be
    empty; such notes yield Unknown verdicts downstream.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"notes file not found: {p}")
    fmt = _detect_format(p, fmt)
    notes: list[ClinicalNote] = []
    seen: set[str] = set()
    for row_no, row in _iter_rows(p, fmt, ("note_id", "patient_id", "chart_date", "text")):
        note_id = _require_str(row, row_no, "note_id", p)
        if note_id in seen:
            raise CorpusError(f"{p}: row {row_no}: duplicate note_id {note_id!r}")
        seen.add(note_id)
        if "text" not in row or row["text"] is None:
            raise CorpusError(f"{p}: row {row_no}: missing required field 'text'")
        notes.append(
            ClinicalNote(
                note_id=note_id,
                patient_id=_require_str(row, row_no, "patient_id", p),
                chart_date=_parse_date(row.get("chart_date"), row_no, "chart_date", p, True),
                text=str(row["text"]),
                admission_id=_optional_str(row.get("admission_id")),
            )
        )
    return notes


def write_notes(notes: Iterable[ClinicalNote], path, fmt: Optional[str] = None) -> Path:
    """Serialize notes so that ``load_notes`` round-trips them unchanged."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fmt = _detect_format(p, fmt)
    rows = [
        {
            "note_id": n.note_id,
            "patient_id": n.patient_id,
            "admission_id": n.admission_id,
            "chart_date": n.chart_date.isoformat(),
            "text": n.text,
        }
        for n in notes
    ]
    _write_rows(p, fmt, NOTE_FIELDS, rows)
    return p


def _parse_code_system(raw: str, row_no: int, path: Path) -> CodeSystem:
    normalized = raw.strip().upper().replace("-", "")
    if normalized == "ICD9":
        return CodeSystem.ICD9
    if normalized == "ICD10":
        return CodeSystem.ICD10
    raise CorpusError(f"{path}: row {row_no}: unknown code_system {raw!r}")


def load_diagnoses(path, fmt: Optional[str] = None) -> list[IcdDiagnosis]:
    """Load coded diagnoses; codes come back normalized.

    ``code_system`` must be present and one of ICD9/ICD10 (hyphen and
    case variants accepted); it is never inferred from the code shape.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"diagnoses file not found: {p}")
    fmt = _detect_format(p, fmt)
    rows: list[IcdDiagnosis] = []
    for row_no, row in _iter_rows(p, fmt, ("patient_id", "code_system", "code")):
        code = normalize_code(_require_str(row, row_no, "code", p))
        if not code:
            raise CorpusError(f"{p}: row {row_no}: empty code after normalization")
        rows.append(
            IcdDiagnosis(
                patient_id=_require_str(row, row_no, "patient_id", p),
                code_system=_parse_code_system(_require_str(row, row_no, "code_system", p), row_no, p),
                code=code,
                admission_id=_optional_str(row.get("admission_id")),
                diagnosis_date=_parse_date(row.get("diagnosis_date"), row_no, "diagnosis_date", p, False),
            )
        )
    return rows


def write_diagnoses(diagnoses: Iterable[IcdDiagnosis], path, fmt: Optional[str] = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fmt = _detect_format(p, fmt)
    rows = [
        {
            "patient_id": d.patient_id,
            "admission_id": d.admission_id,
            "code_system": d.code_system.value,
            "code": d.code,
            "diagnosis_date": d.diagnosis_date.isoformat() if d.diagnosis_date else None,
        }
        for d in diagnoses
    ]
    _write_rows(p, fmt, DIAGNOSIS_FIELDS, rows)
    return p


def _write_rows(p: Path, fmt: str, fields: Sequence[str], rows: list[dict]) -> None:
    if fmt == "jsonl":
        with p.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    else:
        with p.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(fields))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ("" if v is None else v) for k, v in row.items()})


def select_window(
    notes: Iterable[ClinicalNote],
    patient_id: str,
    anchor: date,
    half_width_days: int,
) -> list[ClinicalNote]:
    """Notes of one patient dated within ``anchor +- half_width_days``.

    The interval is closed on both ends; results are sorted by
    (chart_date, note_id) for stable downstream ordering.
    """
    if half_width_days < 0:
        raise ValueError("half_width_days must be >= 0")
    delta = timedelta(days=half_width_days)
    lo, hi = anchor - delta, anchor + delta
    picked = [n for n in notes if n.patient_id == patient_id and lo <= n.chart_date <= hi]
    picked.sort(key=lambda n: (n.chart_date, n.note_id))
    return picked


def partition_cohort(
    diagnoses: Iterable[IcdDiagnosis],
    all_entities: Iterable[str],
    granularity: Granularity,
    prefixes: Optional[Mapping[CodeSystem, tuple[str, ...]]] = None,
) -> CohortPartition:
    """Split ``all_entities`` into code-positive and code-negative sets.

    An entity is positive when any of its diagnosis rows carries a
    metastasis code. At admission granularity every diagnosis row must
    carry an admission_id.
    """
    entity_set = frozenset(all_entities)
    positives = set()
    for dx in diagnoses:
        if granularity is Granularity.ADMISSION:
            if dx.admission_id is None:
                raise CorpusError(
                    "admission-level partition requires admission_id on every diagnosis row"
                )
            key = dx.admission_id
        else:
            key = dx.patient_id
        if key in entity_set and is_metastasis_code(dx.code_system, dx.code, prefixes):
            positives.add(key)
    return CohortPartition(
        granularity=granularity,
        positives=frozenset(positives),
        negatives=entity_set - positives,
    )


POSITIVE_LABEL = 1
NEGATIVE_LABEL = 2


@dataclass
class FinetuneSplit:
    """Labeled (text, label) pairs; labels are 1=positive, 2=negative."""

    train: list[tuple[str, int]]
    validation: list[tuple[str, int]]


def select_finetune_samples(
    notes: Iterable[ClinicalNote],
    lexicon: Lexicon,
    n_per_class: int = 50,
    split_fraction: float = 0.8,
    seed: int = 0,
) -> FinetuneSplit:
    """Draw a balanced labeled sample for fine-tuning exports.

    Candidate labels come from the deterministic keyword/negation rule
    oracle; notes it calls Unknown are skipped. Each class contributes
    ``n_per_class`` notes, split train/validation by ``split_fraction``
    (train count floored, at least 1). Same seed, same split.
    """
    from notepheno.llm import Label, oracle_classify

    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if not 0.0 <= split_fraction <= 1.0:
        raise ValueError("split_fraction must be within [0, 1]")
    positives: list[str] = []
    negatives: list[str] = []
    for note in notes:
        label = oracle_classify(note.text, lexicon)
        if label is Label.METASTASIS:
            positives.append(note.text)
        elif label is Label.NO_METASTASIS:
            negatives.append(note.text)
    if len(positives) < n_per_class or len(negatives) < n_per_class:
        raise CorpusError(
            f"need {n_per_class} notes per class, found "
            f"{len(positives)} positive / {len(negatives)} negative"
        )
    rng = random.Random(seed)
    rng.shuffle(positives)
    rng.shuffle(negatives)
    # +1e-9 guards against binary-float under-rounding, e.g. 100*0.29
    n_train = min(n_per_class, max(1, math.floor(n_per_class * split_fraction + 1e-9)))
    train = [(t, POSITIVE_LABEL) for t in positives[:n_train]]
    train += [(t, NEGATIVE_LABEL) for t in negatives[:n_train]]
    validation = [(t, POSITIVE_LABEL) for t in positives[n_train:n_per_class]]
    validation += [(t, NEGATIVE_LABEL) for t in negatives[n_train:n_per_class]]
    rng.shuffle(train)
    rng.shuffle(validation)
    return FinetuneSplit(train=train, validation=validation)


def write_finetune_split(split: FinetuneSplit, out_dir) -> tuple[Path, Path]:
    """Write train.jsonl and validation.jsonl with fields text and label."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = (out / "train.jsonl", out / "validation.jsonl")
    for path, rows in zip(paths, (split.train, split.validation)):
        with path.open("w", encoding="utf-8") as fh:
            for text, label in rows:
                fh.write(json.dumps({"text": text, "label": label}, ensure_ascii=False) + "\n")
    return paths
