"""Keyword-anchored context extraction from clinical notes.

Splits a note into sentences, finds the ones mentioning lexicon phrases,
and keeps each hit together with its neighbors inside a configurable
radius, merging overlapping or adjacent windows into contiguous blocks.
The point is to hand a compact language model only the text surrounding
the phenotype vocabulary instead of the whole note.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from notepheno.errors import CorpusError

try:
    from notepheno._speedups import scan_sentence_spans as _scan_spans

    _KERNEL = "compiled"
except ImportError:  # extension not built; use the pure-Python twin
    from notepheno._scan_py import scan_sentence_spans as _scan_spans

    _KERNEL = "python"

DEFAULT_LEXICON_PHRASES = (
    "metastasis",
    "metastatic",
    "metastasize",
    "metastases",
    "metastasized",
    "dissemination",
    "distant spread",
    "metachronous",
    "hematogenous spread",
    "lymphatic spread",
    "micrometastases",
    "infiltration",
    "tumor spread",
    "extra-nodal extension",
)

DEFAULT_RADIUS = 1


def kernel_backend() -> str:
    """Active sentence-scan implementation: 'compiled' or 'python'."""
    return _KERNEL


class Sentence(NamedTuple):
    start: int
    end: int
    text: str


SentenceList = list[Sentence]


def split_sentences(text: str) -> SentenceList:
    """Segment ``text`` into ordered sentence spans over the original string."""
    return [Sentence(s, e, text[s:e]) for s, e in _scan_spans(text)]


def _phrase_regex(phrase: str) -> str:
    # [^\W_] is "alphanumeric": word chars minus underscore. The guards keep
    # matches from starting or ending inside a token, so "metastases" does
    # not match inside "micrometastases". Hyphens are literal; spaces in a
    # phrase match any whitespace run.
    body = r"\s+".join(re.escape(tok) for tok in phrase.split(" "))
    return rf"(?<![^\W_])(?:{body})(?![^\W_])"


class Lexicon:
    """Ordered list of lowercase keyword phrases with whole-word matching.

    Phrases are normalized to lowercase with collapsed inner whitespace;
    duplicates are dropped, first occurrence wins. Matching is
    case-insensitive.
    """

    def __init__(self, phrases: Iterable[str]):
        cleaned: list[str] = []
        seen: set[str] = set()
        for raw in phrases:
            phrase = " ".join(raw.lower().split())
            if phrase and phrase not in seen:
                seen.add(phrase)
                cleaned.append(phrase)
        if not cleaned:
            raise CorpusError("lexicon must contain at least one phrase")
        self.phrases: tuple[str, ...] = tuple(cleaned)
        self._pattern = re.compile(
            "|".join(_phrase_regex(p) for p in self.phrases), re.IGNORECASE
        )
        self._per_phrase = {
            p: re.compile(_phrase_regex(p), re.IGNORECASE) for p in self.phrases
        }

    @classmethod
    def default(cls) -> "Lexicon":
        return cls(DEFAULT_LEXICON_PHRASES)

    @classmethod
    def from_file(cls, path) -> "Lexicon":
        """Load one phrase per line; blank lines and '#' comments are ignored."""
        phrases = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                phrases.append(line)
        if not phrases:
            raise CorpusError(f"lexicon file {path} contains no phrases")
        return cls(phrases)

    def search(self, text: str):
        """First match of any phrase in ``text``, or None."""
        return self._pattern.search(text)

    def match_count(self, text: str) -> int:
        """Number of non-overlapping phrase matches in ``text``."""
        return sum(1 for _ in self._pattern.finditer(text))

    def matched_phrases(self, text: str) -> set[str]:
        return {p for p, rx in self._per_phrase.items() if rx.search(text)}

    def sha256(self) -> str:
        """Content hash recorded in run metadata."""
        return hashlib.sha256("\n".join(self.phrases).encode("utf-8")).hexdigest()

    def __len__(self) -> int:
        return len(self.phrases)

    def __eq__(self, other) -> bool:
        return isinstance(other, Lexicon) and self.phrases == other.phrases

    def __hash__(self) -> int:
        return hash(self.phrases)

    def __repr__(self) -> str:
        return f"Lexicon({len(self.phrases)} phrases)"


def contains_keyword(text: str, lexicon: Lexicon) -> bool:
    return lexicon.search(text) is not None


def find_keyword_sentences(sentences: SentenceList, lexicon: Lexicon) -> list[int]:
    """Indices of sentences containing at least one lexicon phrase."""
    return [i for i, s in enumerate(sentences) if lexicon.search(s.text)]


@dataclass
class PreprocessedNote:
    """Keyword-anchored excerpt of one note.

    ``blocks`` are merged context windows in document order, each a
    space-joined run of consecutive sentences. A note without hits has no
    blocks and is dropped from prompting downstream.
    """

    note_id: str
    blocks: list[str]
    matched_keywords: set[str]
    source_length: int
    extracted_length: int

    @property
    def prompt_text(self) -> str:
        """Blocks joined with newlines; empty string when there are no hits."""
        return "\n".join(self.blocks)

    def to_json_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "blocks": list(self.blocks),
            "matched_keywords": sorted(self.matched_keywords),
            "source_length": self.source_length,
            "extracted_length": self.extracted_length,
        }

    @classmethod
    def from_json_dict(cls, row: dict) -> "PreprocessedNote":
        return cls(
            note_id=str(row["note_id"]),
            blocks=[str(b) for b in row["blocks"]],
            matched_keywords=set(row["matched_keywords"]),
            source_length=int(row["source_length"]),
            extracted_length=int(row["extracted_length"]),
        )


def extract_contexts(
    text: str,
    lexicon: Lexicon,
    radius: int = DEFAULT_RADIUS,
    note_id: str = "",
) -> PreprocessedNote:
    """Extract merged keyword-context blocks from one note.

    Every sentence containing a lexicon phrase is kept along with up to
    ``radius`` neighbor sentences on each side (closed interval, clipped
    at the note edges); overlapping or adjacent windows merge into one
    block. Extraction never reorders or duplicates sentences, so the
    extracted text is never longer than the source.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    sentences = split_sentences(text)
    hits = find_keyword_sentences(sentences, lexicon)
    last = len(sentences) - 1
    merged: list[list[int]] = []
    for h in hits:
        a, b = max(0, h - radius), min(last, h + radius)
        if merged and a <= merged[-1][1] + 1:
            if b > merged[-1][1]:
                merged[-1][1] = b
        else:
            merged.append([a, b])
    blocks = [" ".join(s.text for s in sentences[a : b + 1]) for a, b in merged]
    return PreprocessedNote(
        note_id=note_id,
        blocks=blocks,
        matched_keywords=lexicon.matched_phrases(text),
        source_length=len(text),
        extracted_length=len("\n".join(blocks)),
    )


def write_preprocessed(records: Iterable[PreprocessedNote], path) -> Path:
    """Write PreprocessedNote records as JSON Lines."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), ensure_ascii=False) + "\n")
    return p


def read_preprocessed(path) -> list[PreprocessedNote]:
    """Read records written by :func:`write_preprocessed`."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"preprocessed file not found: {p}")
    records = []
    with p.open(encoding="utf-8") as fh:
        row_no = 0
        for line in fh:
            if not line.strip():
                continue
            row_no += 1
            try:
                records.append(PreprocessedNote.from_json_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"{p}: row {row_no}: bad record ({exc})") from exc
    return records
