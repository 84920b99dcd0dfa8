"""Pure-Python sentence-boundary scanner.

Fallback twin of the compiled kernel in ``_speedups.pyx``. The two must
return identical spans for every input (enforced by a property test), so
any rule change here must be mirrored there. The shared rule set:

* a sentence ends after '.', '!' or '?', plus any run of closing quotes
  or brackets, when the next character is whitespace;
* a '.' does not end a sentence when the token before it is a listed
  abbreviation or a single-letter initial;
* a whitespace run containing two or more newlines (a blank line) always
  ends the sentence at the last preceding non-space character;
* a final unterminated sentence ends at the last non-space character.

Spans never start or end on whitespace. This implementation jumps
between candidate characters with a regex instead of walking every
character, which keeps the fallback usable on large corpora.
"""

from __future__ import annotations

import re

TERMINATORS = ".!?"
CLOSERS = "\"')]}"
ABBREVIATIONS = frozenset(
    ("dr", "mr", "mrs", "ms", "prof", "vs", "e.g", "i.e", "etc", "fig", "no")
)

# Longest token (with embedded dots) we will scan back over before giving
# up on abbreviation detection.
MAX_ABBREV_SCAN = 12

_CANDIDATE = re.compile(r"[.!?\n]")


def abbrev_suppressed(text: str, dot: int) -> bool:
    """True when the '.' at index ``dot`` ends an abbreviation/initial."""
    k = dot - 1
    scanned = 0
    while k >= 0 and scanned < MAX_ABBREV_SCAN and (text[k].isalnum() or text[k] == "."):
        k -= 1
        scanned += 1
    if scanned == MAX_ABBREV_SCAN and k >= 0 and (text[k].isalnum() or text[k] == "."):
        return False  # token longer than any known abbreviation
    if scanned == 0:
        return False
    token = text[k + 1 : dot].lower()
    if len(token) == 1 and token.isalpha():
        return True
    return token in ABBREVIATIONS


def _rstrip_end(text: str, start: int, upto: int) -> int:
    while upto > start and text[upto - 1].isspace():
        upto -= 1
    return upto


def scan_sentence_spans(text: str) -> list:
    """Return (start, end) index pairs of sentences in ``text``, in order."""
    n = len(text)
    spans = []
    pos = 0
    while pos < n:
        while pos < n and text[pos].isspace():
            pos += 1
        if pos >= n:
            break
        start = pos
        search = pos
        while True:
            m = _CANDIDATE.search(text, search)
            if m is None:
                spans.append((start, _rstrip_end(text, start, n)))
                pos = n
                break
            i = m.start()
            c = text[i]
            if c == "\n":
                j = i
                newlines = 0
                while j < n and text[j].isspace():
                    if text[j] == "\n":
                        newlines += 1
                    j += 1
                if newlines >= 2:
                    spans.append((start, _rstrip_end(text, start, i)))
                    pos = j
                    break
                search = j
                continue
            j = i + 1
            while j < n and text[j] in CLOSERS:
                j += 1
            if j < n and text[j].isspace() and (c != "." or not abbrev_suppressed(text, i)):
                spans.append((start, j))
                pos = j
                break
            search = i + 1
    return spans
