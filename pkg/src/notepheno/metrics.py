"""Evaluation quantities and deterministic report rendering.

Accuracy over anchored review windows is reported as fractions of
evaluable cases (empty windows are excluded from the denominator but
counted separately). Cohort agreement against coded diagnoses is
reported as sensitivity and specificity over entity sets. Report files
carry no timestamps or absolute paths, so identical runs render
identical bytes.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from notepheno.aggregate import PredictedCohort, WindowOutcome, WindowResult
from notepheno.corpus import CohortPartition, Granularity
from notepheno.errors import MetricsError


@dataclass(frozen=True)
class EvaluationSummary:
    """Counts and fractions of window outcomes for one time range."""

    n_correct: int
    n_incorrect: int
    n_inconclusive: int
    frac_correct: float
    frac_incorrect: float
    frac_inconclusive: float
    n_excluded_no_notes: int

    @classmethod
    def from_counts(
        cls,
        n_correct: int,
        n_incorrect: int,
        n_inconclusive: int,
        n_excluded_no_notes: int = 0,
    ) -> "EvaluationSummary":
        if min(n_correct, n_incorrect, n_inconclusive, n_excluded_no_notes) < 0:
            raise ValueError("outcome counts must be non-negative")
        total = n_correct + n_incorrect + n_inconclusive
        if total == 0:
            raise MetricsError("no evaluable cases: every window was empty or absent")
        return cls(
            n_correct=n_correct,
            n_incorrect=n_incorrect,
            n_inconclusive=n_inconclusive,
            frac_correct=n_correct / total,
            frac_incorrect=n_incorrect / total,
            frac_inconclusive=n_inconclusive / total,
            n_excluded_no_notes=n_excluded_no_notes,
        )

    @property
    def n_cases(self) -> int:
        return self.n_correct + self.n_incorrect + self.n_inconclusive


def accuracy_summary(outcomes: Iterable[WindowOutcome]) -> EvaluationSummary:
    """Summarize window outcomes; NO_NOTES cases leave the denominator."""
    counts = Counter(o.outcome for o in outcomes)
    return EvaluationSummary.from_counts(
        counts[WindowResult.CORRECT],
        counts[WindowResult.INCORRECT],
        counts[WindowResult.INCONCLUSIVE],
        counts[WindowResult.NO_NOTES],
    )


def sensitivity(predicted: PredictedCohort, coded: CohortPartition) -> float:
    """Share of code-positive entities the classifier also called positive."""
    if not coded.positives:
        raise MetricsError("sensitivity undefined: no code-positive entities")
    return len(predicted.positives & coded.positives) / len(coded.positives)


def specificity(predicted: PredictedCohort, coded: CohortPartition) -> float:
    """Share of code-negative entities the classifier also called negative."""
    if not coded.negatives:
        raise MetricsError("specificity undefined: no code-negative entities")
    return len(predicted.negatives & coded.negatives) / len(coded.negatives)


@dataclass(frozen=True)
class CohortRates:
    """Sensitivity/specificity with their integer numerators/denominators."""

    granularity: Granularity
    sensitivity: float
    specificity: float
    sens_numerator: int
    sens_denominator: int
    spec_numerator: int
    spec_denominator: int


def cohort_rates(predicted: PredictedCohort, coded: CohortPartition) -> CohortRates:
    return CohortRates(
        granularity=coded.granularity,
        sensitivity=sensitivity(predicted, coded),
        specificity=specificity(predicted, coded),
        sens_numerator=len(predicted.positives & coded.positives),
        sens_denominator=len(coded.positives),
        spec_numerator=len(predicted.negatives & coded.negatives),
        spec_denominator=len(coded.negatives),
    )


ACCURACY_COLUMNS = (
    "time_range_days",
    "method",
    "preprocessing",
    "p_correct",
    "p_incorrect",
    "p_inconclusive",
    "n_cases",
    "n_excluded_no_notes",
)
COHORT_COLUMNS = ("method", "preprocessing", "metric", "patient", "admission")


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def accuracy_rows(
    summaries: Sequence[tuple[int, EvaluationSummary]],
    method: str,
    preprocessing: str,
) -> list[dict]:
    """CSV-ready accuracy rows; time range is the full window span in days."""
    rows = []
    for half_width, s in summaries:
        rows.append(
            {
                "time_range_days": 2 * half_width,
                "method": method,
                "preprocessing": preprocessing,
                "p_correct": _fmt(s.frac_correct),
                "p_incorrect": _fmt(s.frac_incorrect),
                "p_inconclusive": _fmt(s.frac_inconclusive),
                "n_cases": s.n_cases,
                "n_excluded_no_notes": s.n_excluded_no_notes,
            }
        )
    return rows


def cohort_rows(rates: Sequence[CohortRates], method: str, preprocessing: str) -> list[dict]:
    """CSV-ready cohort rows: one row per metric, granularities as columns."""
    by_granularity = {r.granularity: r for r in rates}
    rows = []
    for metric in ("sensitivity", "specificity"):
        row = {
            "method": method,
            "preprocessing": preprocessing,
            "metric": metric,
            "patient": "",
            "admission": "",
        }
        for granularity, column in (
            (Granularity.PATIENT, "patient"),
            (Granularity.ADMISSION, "admission"),
        ):
            r = by_granularity.get(granularity)
            if r is not None:
                row[column] = _fmt(getattr(r, metric))
        rows.append(row)
    return rows


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return p


def text_table(columns: Sequence[str], rows: Sequence[dict]) -> str:
    """Fixed-width table for the plain-text report."""
    widths = {c: len(c) for c in columns}
    for row in rows:
        for c in columns:
            widths[c] = max(widths[c], len(str(row.get(c, ""))))
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    rule = "  ".join("-" * widths[c] for c in columns)
    lines = [header, rule]
    for row in rows:
        lines.append("  ".join(str(row.get(c, "")).ljust(widths[c]) for c in columns))
    return "\n".join(lines)


def render_report(
    summaries: Sequence[tuple[int, EvaluationSummary]],
    rates: Sequence[CohortRates],
    run_metadata: Mapping,
    out_dir,
) -> dict[str, Path]:
    """Write accuracy.csv, cohort.csv, report.txt, and run_meta.json.

    ``summaries`` carries (window half-width, summary) pairs. All ratios
    render with 4 decimals; counts stay integers. Either table may be
    empty, in which case its CSV holds only the header.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    method = str(run_metadata.get("method", ""))
    preprocessing = str(run_metadata.get("preprocessing", ""))
    acc_rows = accuracy_rows(summaries, method, preprocessing)
    coh_rows = cohort_rows(rates, method, preprocessing) if rates else []
    paths = {
        "accuracy_csv": write_csv(out / "accuracy.csv", ACCURACY_COLUMNS, acc_rows),
        "cohort_csv": write_csv(out / "cohort.csv", COHORT_COLUMNS, coh_rows),
    }

    sections = ["Run summary", "===========", ""]
    for key in sorted(run_metadata):
        sections.append(f"{key}: {run_metadata[key]}")
    sections.append("")
    sections.append("Accuracy over review windows")
    sections.append("----------------------------")
    if acc_rows:
        sections.append(text_table(ACCURACY_COLUMNS, acc_rows))
    else:
        sections.append("(no anchored cases evaluated)")
    sections.append("")
    sections.append("Cohort agreement with coded diagnoses")
    sections.append("-------------------------------------")
    if coh_rows:
        sections.append(text_table(COHORT_COLUMNS, coh_rows))
    else:
        sections.append("(no cohort granularities evaluated)")
    sections.append("")
    report_txt = out / "report.txt"
    report_txt.write_text("\n".join(sections), encoding="utf-8")
    paths["report_txt"] = report_txt

    meta_path = out / "run_meta.json"
    meta_path.write_text(
        json.dumps(dict(run_metadata), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    paths["run_meta"] = meta_path
    return paths
