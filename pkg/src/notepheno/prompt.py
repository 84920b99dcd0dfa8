"""Prompt construction for zero-shot and few-shot classification.

The task templates live as golden text files under ``templates/`` so
their exact bytes stay auditable; rendering substitutes the placeholder
regions in a single left-to-right pass over the template and never
rescans substituted text, so a note containing a placeholder string is
inserted literally.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from notepheno.errors import CorpusError, PromptError

NOTES_PLACEHOLDER = "{INSERT CURRENT CLINICAL NOTES HERE}"
EXAMPLES_PLACEHOLDER = "{INSERT THE EXAMPLES HERE}"

# Class codes used in prompts and example pools.
POSITIVE_CODE = 1
NEGATIVE_CODE = 2
NEUTRAL_CODE = 3


class PromptMode(Enum):
    ZERO_SHOT = "zero_shot"
    FEW_SHOT = "few_shot"


@dataclass(frozen=True)
class PromptSpec:
    """How prompts for a run are built.

    ``shots_total`` counts all in-context examples; few-shot draws get
    split evenly across the three classes, so it must be a positive
    multiple of 3 (3 -> one example per class, 6 -> two).
    """

    mode: PromptMode = PromptMode.ZERO_SHOT
    shots_total: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mode is PromptMode.FEW_SHOT:
            if self.shots_total <= 0 or self.shots_total % 3 != 0:
                raise ValueError(
                    f"few-shot needs shots_total as a positive multiple of 3, got {self.shots_total}"
                )
        elif self.shots_total != 0:
            raise ValueError("zero-shot takes no in-context examples")


@dataclass(frozen=True)
class ExampleSet:
    """Texts per class for few-shot example rendering; equal class sizes."""

    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    neutrals: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.positives) == len(self.negatives) == len(self.neutrals)):
            raise ValueError("example classes must have equal sizes")

    @property
    def per_class(self) -> int:
        return len(self.positives)


def _load_template(name: str, template_dir=None) -> str:
    if template_dir is not None:
        return Path(template_dir, name).read_text(encoding="utf-8")
    return resources.files("notepheno").joinpath("templates").joinpath(name).read_text(
        encoding="utf-8"
    )


def zero_shot_template(template_dir=None) -> str:
    return _load_template("zero_shot.txt", template_dir)


def few_shot_template(template_dir=None) -> str:
    return _load_template("few_shot.txt", template_dir)


def _substitute(template: str, mapping: dict) -> str:
    # One pass over the template; replacement text is never rescanned.
    parts = []
    i = 0
    while i < len(template):
        nearest: Optional[tuple[int, str]] = None
        for placeholder in mapping:
            k = template.find(placeholder, i)
            if k != -1 and (nearest is None or k < nearest[0]):
                nearest = (k, placeholder)
        if nearest is None:
            parts.append(template[i:])
            break
        k, placeholder = nearest
        parts.append(template[i:k])
        parts.append(mapping[placeholder])
        i = k + len(placeholder)
    return "".join(parts)


def build_zero_shot(note_text: str, template_dir=None) -> str:
    """Render the zero-shot prompt for one note payload."""
    if not note_text:
        raise PromptError("note text is empty; nothing to classify")
    return _substitute(zero_shot_template(template_dir), {NOTES_PLACEHOLDER: note_text})


def render_examples(examples: ExampleSet) -> str:
    """Render examples in the template's list style, interleaving classes.

    Numbering is sequential; class order within each round is positive,
    negative, neutral, mirroring the built-in zero-shot examples.
    """
    ordered = []
    for i in range(examples.per_class):
        ordered.append((examples.positives[i], POSITIVE_CODE))
        ordered.append((examples.negatives[i], NEGATIVE_CODE))
        ordered.append((examples.neutrals[i], NEUTRAL_CODE))
    lines = [
        f'- Example {idx}: "{text}" - ({code})'
        for idx, (text, code) in enumerate(ordered, start=1)
    ]
    return "\n\n".join(lines)


def build_few_shot(note_text: str, examples: ExampleSet, template_dir=None) -> str:
    """Render the few-shot prompt for one note payload."""
    if not note_text:
        raise PromptError("note text is empty; nothing to classify")
    if examples.per_class == 0:
        raise PromptError("few-shot prompt needs at least one example per class")
    return _substitute(
        few_shot_template(template_dir),
        {EXAMPLES_PLACEHOLDER: render_examples(examples), NOTES_PLACEHOLDER: note_text},
    )


def load_example_pool(path) -> list[tuple[str, int]]:
    """Load a JSON Lines example pool with fields text and label (1|2|3)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"example pool not found: {p}")
    pool = []
    with p.open(encoding="utf-8") as fh:
        row_no = 0
        for line in fh:
            if not line.strip():
                continue
            row_no += 1
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{p}: row {row_no}: invalid JSON ({exc.msg})")
            if not isinstance(row, dict) or "text" not in row or "label" not in row:
                raise CorpusError(f"{p}: row {row_no}: expected fields text and label")
            text = str(row["text"]).strip()
            if not text:
                raise CorpusError(f"{p}: row {row_no}: empty text")
            try:
                label = int(row["label"])
            except (TypeError, ValueError):
                raise CorpusError(f"{p}: row {row_no}: label must be an integer")
            if label not in (POSITIVE_CODE, NEGATIVE_CODE, NEUTRAL_CODE):
                raise CorpusError(f"{p}: row {row_no}: label must be 1, 2, or 3")
            pool.append((text, label))
    return pool


def select_shots(
    pool: Union[Sequence[tuple[str, int]], str, Path],
    k: int,
    seed: int = 0,
) -> ExampleSet:
    """Draw k/3 examples per class from the pool, deterministically by seed.

    ``pool`` is either loaded (text, label) pairs or a path to a pool
    file. Raises PromptError when k is not a positive multiple of 3 or
    any class is too thin.
    """
    if k <= 0 or k % 3 != 0:
        raise PromptError(f"shot count must be a positive multiple of 3, got {k}")
    if isinstance(pool, (str, Path)):
        pool = load_example_pool(pool)
    per_class = k // 3
    by_label: dict[int, list[str]] = {POSITIVE_CODE: [], NEGATIVE_CODE: [], NEUTRAL_CODE: []}
    for text, label in pool:
        by_label[label].append(text)
    thin = sorted(lab for lab, texts in by_label.items() if len(texts) < per_class)
    if thin:
        raise PromptError(
            f"example pool too thin for class(es) {thin}: need {per_class} per class"
        )
    rng = random.Random(seed)
    picks = {lab: rng.sample(by_label[lab], per_class) for lab in sorted(by_label)}
    return ExampleSet(
        positives=tuple(picks[POSITIVE_CODE]),
        negatives=tuple(picks[NEGATIVE_CODE]),
        neutrals=tuple(picks[NEUTRAL_CODE]),
    )
