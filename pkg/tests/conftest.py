"""Shared fixtures plus the acceptance-summary reporter.

Every test in test_acceptance.py gets one ACCEPTANCE pass/fail line in
the terminal summary so the criteria can be audited at a glance.
"""

from datetime import date

import pytest

from notepheno.corpus import ClinicalNote
from notepheno.llm import Label, NoteVerdict

_ACCEPTANCE_RESULTS: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[-1]
    if report.when == "call":
        _ACCEPTANCE_RESULTS[name] = report.outcome
    elif report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE_RESULTS[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[name].upper()
        terminalreporter.write_line(f"ACCEPTANCE {name}: {outcome}")


def make_note(note_id="n1", patient="p1", day=1, text="", admission=None):
    return ClinicalNote(
        note_id=note_id,
        patient_id=patient,
        chart_date=date(2020, 1, day),
        text=text,
        admission_id=admission,
    )


def make_verdict(label, note_id="n1", backend_id="rule_oracle"):
    label = Label(label)
    return NoteVerdict(
        note_id=note_id,
        label=label,
        raw_response=f"({label.value})",
        parse_ok=True,
        backend_id=backend_id,
    )


@pytest.fixture
def note_factory():
    return make_note


@pytest.fixture
def verdict_factory():
    return make_verdict
