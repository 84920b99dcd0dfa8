"""Three-way note classification backends.

Two interchangeable backends: an HTTP client speaking the common
chat-completions wire format against a locally hosted model server, and
a deterministic keyword/negation rule oracle used for offline tests,
baselines, and fine-tune labeling. Label parse failures never abort a
run; they map to Unknown with parse_ok=False. Transport failures, by
contrast, raise TransportError after retries are exhausted.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import requests

from notepheno.errors import CorpusError, TransportError
from notepheno.extract import Lexicon, split_sentences


class Label(IntEnum):
    METASTASIS = 1
    NO_METASTASIS = 2
    UNKNOWN = 3


# Cues that negate a keyword mention when they appear earlier in the same
# sentence. Order does not matter; all are matched lowercase.
NEGATION_CUES = (
    "no evidence of",
    "absence of",
    "absent",
    "negative for",
    "free of",
    "without",
    "no ",
)

_PAREN_CODE = re.compile(r"\(([123])\)")
_BARE_CODE = re.compile(r"(?<![0-9A-Za-z])([123])(?![0-9A-Za-z])")
_LEADING_WORD = re.compile(r"[A-Za-z]+")
_WORD_LABELS = {
    "yes": Label.METASTASIS,
    "no": Label.NO_METASTASIS,
    "unknown": Label.UNKNOWN,
}


def parse_label(raw_response: str) -> tuple[Label, bool]:
    """Parse a model response into a label; total, never raises.

    Tries in order: the first "(1)"/"(2)"/"(3)" anywhere in the text, the
    first standalone digit 1/2/3, then a leading yes/no/unknown word.
    Anything else is (UNKNOWN, False).
    """
    m = _PAREN_CODE.search(raw_response)
    if m:
        return Label(int(m.group(1))), True
    m = _BARE_CODE.search(raw_response)
    if m:
        return Label(int(m.group(1))), True
    m = _LEADING_WORD.match(raw_response.strip())
    if m:
        label = _WORD_LABELS.get(m.group(0).lower())
        if label is not None:
            return label, True
    return Label.UNKNOWN, False


@lru_cache(maxsize=1)
def _default_lexicon() -> Lexicon:
    return Lexicon.default()


def oracle_classify(text: str, lexicon: Optional[Lexicon] = None) -> Label:
    """Deterministic keyword/negation rule classifier over raw note text.

    A sentence containing a lexicon phrase with a negation cue earlier in
    the same sentence decides NO_METASTASIS; otherwise any phrase mention
    decides METASTASIS; no mention at all is UNKNOWN.
    """
    lex = lexicon if lexicon is not None else _default_lexicon()
    found = False
    for sentence in split_sentences(text):
        m = lex.search(sentence.text)
        if m is None:
            continue
        found = True
        lowered = sentence.text.lower()
        for cue in NEGATION_CUES:
            pos = lowered.find(cue)
            if 0 <= pos < m.start():
                return Label.NO_METASTASIS
    return Label.METASTASIS if found else Label.UNKNOWN


@dataclass(frozen=True)
class NoteVerdict:
    """One backend decision for one note."""

    note_id: str
    label: Label
    raw_response: str
    parse_ok: bool
    backend_id: str
    latency_ms: int = 0

    def __post_init__(self):
        if not self.parse_ok and self.label is not Label.UNKNOWN:
            raise ValueError("unparsed verdicts must carry the Unknown label")


class BackendKind(Enum):
    HTTP_CHAT = "http_chat"
    RULE_ORACLE = "rule_oracle"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.RULE_ORACLE
    base_url: Optional[str] = None
    model_name: Optional[str] = None
    temperature: float = 0.0
    max_tokens: int = 8
    timeout_ms: int = 30_000
    max_retries: int = 3
    max_in_flight: int = 4
    retry_backoff_ms: int = 250

    def __post_init__(self):
        if self.kind is BackendKind.HTTP_CHAT and not (self.base_url and self.model_name):
            raise ValueError("http_chat backend requires base_url and model_name")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.timeout_ms < 1:
            raise ValueError("timeout_ms must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retry_backoff_ms < 0:
            raise ValueError("retry_backoff_ms must be >= 0")

    @property
    def backend_id(self) -> str:
        if self.kind is BackendKind.RULE_ORACLE:
            return "rule_oracle"
        return f"http_chat:{self.model_name}"


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _completions_url(base_url: str) -> str:
    base = base_url.rstrip("/")
    if base.endswith("/v1"):
        return base + "/chat/completions"
    return base + "/v1/chat/completions"


_RETRYABLE_STATUS = frozenset((429, 500, 502, 503, 504))


def _request_completion(
    prompt: str,
    config: BackendConfig,
    session: Optional[requests.Session] = None,
) -> str:
    """POST one chat completion; retries transient failures with backoff."""
    payload = {
        "model": config.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    }
    url = _completions_url(config.base_url)
    post = session.post if session is not None else requests.post
    timeout = config.timeout_ms / 1000.0
    last_error = "no attempt made"
    for attempt in range(config.max_retries + 1):
        if attempt:
            time.sleep(config.retry_backoff_ms / 1000.0 * (2 ** (attempt - 1)))
        try:
            resp = post(url, json=payload, timeout=timeout)
        except requests.RequestException as exc:
            last_error = str(exc) or type(exc).__name__
            continue
        if resp.status_code in _RETRYABLE_STATUS:
            last_error = f"HTTP {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise TransportError(f"backend rejected request: HTTP {resp.status_code}")
        try:
            choice = resp.json()["choices"][0]
            content = choice["message"]["content"] if "message" in choice else choice["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed backend response: {exc!r}")
        if not isinstance(content, str):
            raise TransportError("malformed backend response: content is not text")
        return content
    raise TransportError(
        f"backend unreachable after {config.max_retries + 1} attempt(s): {last_error}"
    )


def classify(
    prompt: str,
    config: BackendConfig,
    lexicon: Optional[Lexicon] = None,
    note_id: str = "",
    session: Optional[requests.Session] = None,
) -> NoteVerdict:
    """Classify one rendered prompt (HTTP) or note payload (rule oracle)."""
    if config.kind is BackendKind.RULE_ORACLE:
        label = oracle_classify(prompt, lexicon)
        return NoteVerdict(
            note_id=note_id,
            label=label,
            raw_response=f"({label.value})",
            parse_ok=True,
            backend_id=config.backend_id,
            latency_ms=0,
        )
    started = time.monotonic()
    content = _request_completion(prompt, config, session)
    latency_ms = int((time.monotonic() - started) * 1000)
    label, parse_ok = parse_label(content)
    return NoteVerdict(
        note_id=note_id,
        label=label,
        raw_response=content,
        parse_ok=parse_ok,
        backend_id=config.backend_id,
        latency_ms=latency_ms,
    )


class VerdictCache:
    """Append-only JSONL verdict cache keyed by (backend_id, prompt hash).

    A torn final line (from a killed run) is ignored on load, which is
    what makes interrupted runs resumable. Single-writer by design: only
    the batch runner's collector thread appends.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._records: dict[tuple[str, str], NoteVerdict] = {}
        self._fh = None
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    key = (str(row["backend_id"]), str(row["prompt_sha256"]))
                    verdict = NoteVerdict(
                        note_id=str(row["note_id"]),
                        label=Label(int(row["label"])),
                        raw_response=str(row["raw_response"]),
                        parse_ok=bool(row["parse_ok"]),
                        backend_id=str(row["backend_id"]),
                        latency_ms=int(row.get("latency_ms", 0)),
                    )
                except (ValueError, KeyError, TypeError):
                    continue  # torn or foreign line
                self._records[key] = verdict

    def get(self, backend_id: str, prompt_hash: str) -> Optional[NoteVerdict]:
        return self._records.get((backend_id, prompt_hash))

    def put(self, prompt_hash: str, verdict: NoteVerdict) -> None:
        if self._fh is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("a", encoding="utf-8")
        row = {
            "backend_id": verdict.backend_id,
            "prompt_sha256": prompt_hash,
            "note_id": verdict.note_id,
            "label": int(verdict.label),
            "parse_ok": verdict.parse_ok,
            "raw_response": verdict.raw_response,
            "latency_ms": verdict.latency_ms,
        }
        self._fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        self._fh.flush()
        self._records[(verdict.backend_id, prompt_hash)] = verdict

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "VerdictCache":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def run_batch(
    items: Sequence[tuple[str, str]],
    config: BackendConfig,
    cache: Optional[VerdictCache] = None,
    lexicon: Optional[Lexicon] = None,
    progress: Optional[Callable[[NoteVerdict], None]] = None,
) -> dict[str, NoteVerdict]:
    """Classify (note_id, request_text) pairs, returning verdicts by note_id.

    Cached results are reused without a backend call. HTTP requests run
    on a bounded thread pool (config.max_in_flight); cache appends happen
    on the collector thread only. A TransportError cancels the rest of
    the batch and propagates with the failing note_id attached.
    """
    results: dict[str, NoteVerdict] = {}
    pending: list[tuple[str, str, str]] = []
    for note_id, request_text in items:
        h = prompt_sha256(request_text)
        cached = cache.get(config.backend_id, h) if cache is not None else None
        if cached is not None:
            results[note_id] = replace(cached, note_id=note_id)
            continue
        pending.append((note_id, request_text, h))

    if config.kind is BackendKind.RULE_ORACLE:
        for note_id, request_text, h in pending:
            verdict = classify(request_text, config, lexicon=lexicon, note_id=note_id)
            if cache is not None:
                cache.put(h, verdict)
            results[note_id] = verdict
            if progress is not None:
                progress(verdict)
        return results

    session = requests.Session()
    adapter = requests.adapters.HTTPAdapter(
        pool_connections=config.max_in_flight, pool_maxsize=config.max_in_flight
    )
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    try:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            futures = {
                pool.submit(classify, request_text, config, None, note_id, session): (note_id, h)
                for note_id, request_text, h in pending
            }
            for fut in as_completed(futures):
                note_id, h = futures[fut]
                try:
                    verdict = fut.result()
                except TransportError as exc:
                    for other in futures:
                        other.cancel()
                    raise TransportError(f"note {note_id}: {exc}", note_id=note_id) from exc
                if cache is not None:
                    cache.put(h, verdict)
                results[note_id] = verdict
                if progress is not None:
                    progress(verdict)
    finally:
        session.close()
    return results


def write_verdicts(verdicts: Iterable[NoteVerdict], path) -> Path:
    """Write the canonical verdict file: one JSON line per note, sorted by
    note_id. Latency lives in the cache only, so repeated or resumed runs
    of the same configuration produce byte-identical files."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(verdicts, key=lambda v: v.note_id)
    with p.open("w", encoding="utf-8") as fh:
        for v in rows:
            fh.write(
                json.dumps(
                    {
                        "note_id": v.note_id,
                        "label": int(v.label),
                        "parse_ok": v.parse_ok,
                        "backend_id": v.backend_id,
                        "raw_response": v.raw_response,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return p


def read_verdicts(path) -> list[NoteVerdict]:
    """Read a verdict file written by :func:`write_verdicts`."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"verdict file not found: {p}")
    verdicts = []
    with p.open(encoding="utf-8") as fh:
        row_no = 0
        for line in fh:
            if not line.strip():
                continue
            row_no += 1
            try:
                row = json.loads(line)
                verdicts.append(
                    NoteVerdict(
                        note_id=str(row["note_id"]),
                        label=Label(int(row["label"])),
                        raw_response=str(row["raw_response"]),
                        parse_ok=bool(row["parse_ok"]),
                        backend_id=str(row["backend_id"]),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusError(f"{p}: row {row_no}: bad verdict ({exc!r})") from exc
    return verdicts
