"""Command-line pipeline: synth -> extract -> classify -> evaluate -> report.

Configuration comes from a TOML file plus flag overrides; precedence is
flags > environment > config file > built-in defaults. The only
environment variable read is NOTEPHENO_BASE_URL (HTTP backend address).
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend
transport failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from notepheno import __version__, aggregate, corpus, extract, llm, metrics, prompt, synth
from notepheno.errors import (
    ConfigError,
    CorpusError,
    MetricsError,
    PromptError,
    TransportError,
)

BASE_URL_ENV = "NOTEPHENO_BASE_URL"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRANSPORT = 3

_DEFAULTS = {
    "notes": None,
    "diagnoses": None,
    "lexicon": None,
    "example_pool": None,
    "output_dir": "out",
    "template_dir": None,
    "prompt_mode": "zero_shot",
    "shots_total": 0,
    "shot_seed": 0,
    "backend_kind": "rule_oracle",
    "base_url": None,
    "model_name": None,
    "temperature": 0.0,
    "max_tokens": 8,
    "timeout_ms": 30_000,
    "max_retries": 3,
    "max_in_flight": 4,
    "retry_backoff_ms": 250,
    "preprocessing": "on",
    "radius": 1,
    "windows": [10, 15, 20],
    "granularities": ["patient", "admission"],
}

# (section, key) in the TOML file -> flat config key.
_TOML_KEYS = {
    ("paths", "notes"): "notes",
    ("paths", "diagnoses"): "diagnoses",
    ("paths", "lexicon"): "lexicon",
    ("paths", "example_pool"): "example_pool",
    ("paths", "output_dir"): "output_dir",
    ("paths", "template_dir"): "template_dir",
    ("prompt", "mode"): "prompt_mode",
    ("prompt", "shots_total"): "shots_total",
    ("prompt", "seed"): "shot_seed",
    ("backend", "kind"): "backend_kind",
    ("backend", "base_url"): "base_url",
    ("backend", "model_name"): "model_name",
    ("backend", "temperature"): "temperature",
    ("backend", "max_tokens"): "max_tokens",
    ("backend", "timeout_ms"): "timeout_ms",
    ("backend", "max_retries"): "max_retries",
    ("backend", "max_in_flight"): "max_in_flight",
    ("backend", "retry_backoff_ms"): "retry_backoff_ms",
    ("run", "preprocessing"): "preprocessing",
    ("run", "radius"): "radius",
    ("run", "windows"): "windows",
    ("run", "granularities"): "granularities",
}


@dataclass
class RunConfig:
    """Fully resolved configuration for one pipeline invocation."""

    notes: Optional[Path]
    diagnoses: Optional[Path]
    lexicon_path: Optional[Path]
    example_pool: Optional[Path]
    output_dir: Path
    template_dir: Optional[Path]
    preprocessing: bool
    radius: int
    windows: list[int]
    granularities: list[corpus.Granularity]
    prompt_spec: prompt.PromptSpec
    backend: llm.BackendConfig


class _Parser(argparse.ArgumentParser):
    """Raise ConfigError instead of argparse's default exit(2)."""

    def error(self, message):
        raise ConfigError(message)


def _apply_toml(values: dict, path: Path) -> None:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})")
    for section, entries in data.items():
        if not isinstance(entries, dict):
            raise ConfigError(f"{path}: top-level key {section!r} must be a section")
        for key, value in entries.items():
            flat = _TOML_KEYS.get((section, key))
            if flat is None:
                raise ConfigError(f"{path}: unknown config key [{section}].{key}")
            values[flat] = value


def _parse_int_list(value, name: str) -> list[int]:
    if isinstance(value, str):
        value = value.strip()
        if value.lower() in ("", "none"):
            return []
        value = [part for part in value.split(",") if part.strip()]
    try:
        parsed = [int(x) for x in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a comma-separated list of integers")
    if any(x < 0 for x in parsed):
        raise ConfigError(f"{name} entries must be >= 0")
    return parsed


def _parse_granularities(value) -> list[corpus.Granularity]:
    if isinstance(value, str):
        value = value.strip()
        if value.lower() in ("", "none"):
            return []
        value = [part.strip() for part in value.split(",") if part.strip()]
    try:
        return [corpus.Granularity(str(x).lower()) for x in value]
    except ValueError:
        raise ConfigError("granularities must list 'patient' and/or 'admission'")


def _parse_on_off(value, name: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("on", "off"):
        return value.lower() == "on"
    raise ConfigError(f"{name} must be 'on' or 'off'")


def _opt_path(value) -> Optional[Path]:
    return Path(value) if value else None


def resolve_config(args) -> RunConfig:
    values = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        _apply_toml(values, Path(config_path))
    env_url = os.environ.get(BASE_URL_ENV)
    if env_url:
        values["base_url"] = env_url
    for key in _DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value

    radius = int(values["radius"])
    if radius < 0:
        raise ConfigError("radius must be >= 0")
    try:
        mode = prompt.PromptMode(str(values["prompt_mode"]))
        spec = prompt.PromptSpec(
            mode=mode,
            shots_total=int(values["shots_total"]),
            seed=int(values["shot_seed"]),
        )
        kind = llm.BackendKind(str(values["backend_kind"]))
        backend = llm.BackendConfig(
            kind=kind,
            base_url=values["base_url"],
            model_name=values["model_name"],
            temperature=float(values["temperature"]),
            max_tokens=int(values["max_tokens"]),
            timeout_ms=int(values["timeout_ms"]),
            max_retries=int(values["max_retries"]),
            max_in_flight=int(values["max_in_flight"]),
            retry_backoff_ms=int(values["retry_backoff_ms"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    return RunConfig(
        notes=_opt_path(values["notes"]),
        diagnoses=_opt_path(values["diagnoses"]),
        lexicon_path=_opt_path(values["lexicon"]),
        example_pool=_opt_path(values["example_pool"]),
        output_dir=Path(values["output_dir"]),
        template_dir=_opt_path(values["template_dir"]),
        preprocessing=_parse_on_off(values["preprocessing"], "preprocessing"),
        radius=radius,
        windows=_parse_int_list(values["windows"], "windows"),
        granularities=_parse_granularities(values["granularities"]),
        prompt_spec=spec,
        backend=backend,
    )


def _load_lexicon(cfg: RunConfig) -> extract.Lexicon:
    if cfg.lexicon_path is not None:
        return extract.Lexicon.from_file(cfg.lexicon_path)
    return extract.Lexicon.default()


def _load_notes(cfg: RunConfig, args) -> list[corpus.ClinicalNote]:
    if cfg.notes is None:
        raise ConfigError("a notes file is required (--notes or [paths].notes)")
    return corpus.load_notes(cfg.notes, getattr(args, "format", None))


def cmd_synth(args) -> int:
    try:
        cfg = synth.SynthConfig(
            seed=args.seed,
            n_patients=args.patients,
            prevalence=args.prevalence,
            notes_per_patient=tuple(args.notes_per_patient),
            distractor_sentences_per_note=tuple(args.distractors),
            negation_rate=args.negation_rate,
            anchor_date_range=(
                date.fromisoformat(args.date_range[0]),
                date.fromisoformat(args.date_range[1]),
            ),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    paths = synth.generate_corpus(cfg, args.out)
    for p in (paths.notes, paths.diagnoses, paths.truth):
        print(f"wrote {p}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    notes = _load_notes(cfg, args)
    lex = _load_lexicon(cfg)
    records = [
        extract.extract_contexts(n.text, lex, cfg.radius, note_id=n.note_id) for n in notes
    ]
    out_path = Path(args.out) if args.out else cfg.output_dir / "preprocessed.jsonl"
    extract.write_preprocessed(records, out_path)
    n_hit = sum(1 for r in records if r.blocks)
    print(f"wrote {len(records)} records ({n_hit} with keyword blocks) -> {out_path}")
    return EXIT_OK


def _build_request_texts(cfg: RunConfig, notes, lex) -> tuple[dict, list]:
    """Split notes into immediate Unknown verdicts (no keywords) and
    (note_id, request_text) pairs for the backend."""
    examples = None
    spec = cfg.prompt_spec
    if spec.mode is prompt.PromptMode.FEW_SHOT:
        if cfg.example_pool is None:
            raise ConfigError("few-shot classification requires an example pool (--example-pool)")
        examples = prompt.select_shots(cfg.example_pool, spec.shots_total, spec.seed)
    oracle = cfg.backend.kind is llm.BackendKind.RULE_ORACLE
    filtered: dict[str, llm.NoteVerdict] = {}
    to_run: list[tuple[str, str]] = []
    for n in notes:
        if cfg.preprocessing:
            payload = extract.extract_contexts(n.text, lex, cfg.radius, n.note_id).prompt_text
        else:
            # preprocessing off still applies the cohort keyword filter
            payload = n.text if extract.contains_keyword(n.text, lex) else ""
        if not payload:
            filtered[n.note_id] = llm.NoteVerdict(
                note_id=n.note_id,
                label=llm.Label.UNKNOWN,
                raw_response="",
                parse_ok=False,
                backend_id=cfg.backend.backend_id,
                latency_ms=0,
            )
            continue
        if oracle:
            # the rule oracle reads the note payload itself; wrapping it in
            # the chat template would hand it the template's own examples
            request_text = payload
        elif spec.mode is prompt.PromptMode.FEW_SHOT:
            request_text = prompt.build_few_shot(payload, examples, cfg.template_dir)
        else:
            request_text = prompt.build_zero_shot(payload, cfg.template_dir)
        to_run.append((n.note_id, request_text))
    return filtered, to_run


def cmd_classify(args) -> int:
    cfg = resolve_config(args)
    notes = _load_notes(cfg, args)
    lex = _load_lexicon(cfg)
    verdicts, to_run = _build_request_texts(cfg, notes, lex)
    n_filtered = len(verdicts)
    cache_path = Path(args.cache) if args.cache else cfg.output_dir / "verdict_cache.jsonl"
    with llm.VerdictCache(cache_path) as cache:
        n_cached = sum(
            1
            for _, text in to_run
            if cache.get(cfg.backend.backend_id, llm.prompt_sha256(text)) is not None
        )
        verdicts.update(llm.run_batch(to_run, cfg.backend, cache=cache, lexicon=lex))
    out_path = Path(args.out) if args.out else cfg.output_dir / "verdicts.jsonl"
    llm.write_verdicts(verdicts.values(), out_path)
    print(
        f"classified {len(to_run)} note(s) ({n_cached} from cache, "
        f"{n_filtered} keyword-free -> Unknown) -> {out_path}"
    )
    return EXIT_OK


def _run_metadata(cfg: RunConfig, lex: extract.Lexicon, verdict_by_note: dict) -> dict:
    spec = cfg.prompt_spec
    method = (
        "zero-shot" if spec.mode is prompt.PromptMode.ZERO_SHOT else f"{spec.shots_total}-shot"
    )
    return {
        "method": method,
        "preprocessing": "on" if cfg.preprocessing else "off",
        "shots_total": spec.shots_total,
        "shot_seed": spec.seed,
        "radius": cfg.radius,
        "windows_half_width_days": list(cfg.windows),
        "granularities": [g.value for g in cfg.granularities],
        "lexicon_sha256": lex.sha256(),
        "configured_backend": cfg.backend.backend_id,
        "observed_backends": sorted({v.backend_id for v in verdict_by_note.values()}),
        "tool_version": __version__,
    }


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    notes = _load_notes(cfg, args)
    if cfg.diagnoses is None:
        raise ConfigError("evaluate requires a diagnoses file (--diagnoses or [paths].diagnoses)")
    diagnoses = corpus.load_diagnoses(cfg.diagnoses, getattr(args, "format", None))
    verdict_path = Path(args.verdicts) if args.verdicts else cfg.output_dir / "verdicts.jsonl"
    verdict_by_note = {v.note_id: v for v in llm.read_verdicts(verdict_path)}
    lex = _load_lexicon(cfg)
    kw_notes = [n for n in notes if extract.contains_keyword(n.text, lex)]

    cases = sorted(
        {
            (dx.patient_id, dx.diagnosis_date)
            for dx in diagnoses
            if dx.diagnosis_date is not None
            and corpus.is_metastasis_code(dx.code_system, dx.code)
        }
    )
    if cfg.windows and not cases:
        raise MetricsError(
            "no dated metastasis codes found; cannot anchor review windows "
            "(set windows to 'none' to evaluate cohort agreement only)"
        )
    outcomes: list[aggregate.WindowOutcome] = []
    summaries: list[tuple[int, metrics.EvaluationSummary]] = []
    for half_width in cfg.windows:
        per_width = []
        for patient_id, anchor in cases:
            window_notes = corpus.select_window(notes, patient_id, anchor, half_width)
            vs = [
                verdict_by_note[n.note_id]
                for n in window_notes
                if n.note_id in verdict_by_note
            ]
            per_width.append(aggregate.vote_window(vs, patient_id, anchor, half_width))
        outcomes.extend(per_width)
        summaries.append((half_width, metrics.accuracy_summary(per_width)))

    rates: list[metrics.CohortRates] = []
    entity_classes: list[aggregate.EntityClass] = []
    for granularity in cfg.granularities:
        if granularity is corpus.Granularity.PATIENT:
            ids = sorted({n.patient_id for n in kw_notes})
            key = lambda n: n.patient_id
        else:
            ids = sorted({n.admission_id for n in kw_notes if n.admission_id is not None})
            key = lambda n: n.admission_id
        groups: dict[str, list] = {eid: [] for eid in ids}
        for n in notes:
            eid = key(n)
            if eid in groups and n.note_id in verdict_by_note:
                groups[eid].append(verdict_by_note[n.note_id])
        classes = [
            aggregate.classify_entity(eid, granularity, vs) for eid, vs in groups.items()
        ]
        predicted = aggregate.partition_by_prediction(classes)
        coded = corpus.partition_cohort(diagnoses, groups.keys(), granularity)
        rates.append(metrics.cohort_rates(predicted, coded))
        entity_classes.extend(classes)

    out_dir = Path(args.out) if args.out else cfg.output_dir
    aggregate.write_outcomes(outcomes, out_dir / "outcomes.jsonl")
    aggregate.write_entity_classes(entity_classes, out_dir / "entity_classes.jsonl")
    metrics.render_report(summaries, rates, _run_metadata(cfg, lex, verdict_by_note), out_dir)
    print(
        f"evaluated {len(cases)} anchored case(s) x {len(cfg.windows)} window(s), "
        f"{len(entity_classes)} entities -> {out_dir}"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    acc_rows: list[dict] = []
    coh_rows: list[dict] = []
    run_lines: list[str] = []
    for run_dir in args.runs:
        run = Path(run_dir)
        acc, coh = run / "accuracy.csv", run / "cohort.csv"
        if not acc.exists() or not coh.exists():
            raise CorpusError(f"run directory {run} is missing accuracy.csv or cohort.csv")
        with acc.open(encoding="utf-8", newline="") as fh:
            acc_rows.extend(csv.DictReader(fh))
        with coh.open(encoding="utf-8", newline="") as fh:
            coh_rows.extend(csv.DictReader(fh))
        meta_path = run / "run_meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            run_lines.append(
                f"{run.name}: method={meta.get('method', '?')} "
                f"preprocessing={meta.get('preprocessing', '?')} "
                f"backend={meta.get('configured_backend', '?')}"
            )
        else:
            run_lines.append(f"{run.name}: (no run_meta.json)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(out / "accuracy.csv", metrics.ACCURACY_COLUMNS, acc_rows)
    metrics.write_csv(out / "cohort.csv", metrics.COHORT_COLUMNS, coh_rows)
    sections = ["Combined report", "===============", ""]
    sections.extend(run_lines)
    sections.append("")
    sections.append("Accuracy over review windows")
    sections.append("----------------------------")
    sections.append(
        metrics.text_table(metrics.ACCURACY_COLUMNS, acc_rows) if acc_rows else "(no rows)"
    )
    sections.append("")
    sections.append("Cohort agreement with coded diagnoses")
    sections.append("-------------------------------------")
    sections.append(
        metrics.text_table(metrics.COHORT_COLUMNS, coh_rows) if coh_rows else "(no rows)"
    )
    sections.append("")
    (out / "report.txt").write_text("\n".join(sections), encoding="utf-8")
    print(f"merged {len(args.runs)} run(s) -> {out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = resolve_config(args)
    notes = _load_notes(cfg, args)
    lex = _load_lexicon(cfg)
    split = corpus.select_finetune_samples(
        notes, lex, n_per_class=args.per_class, split_fraction=args.split_fraction, seed=args.seed
    )
    out_dir = Path(args.out) if args.out else cfg.output_dir / "finetune"
    corpus.write_finetune_split(split, out_dir)
    print(
        f"wrote {len(split.train)} train / {len(split.validation)} validation samples -> {out_dir}"
    )
    return EXIT_OK


def _add_common(p) -> None:
    p.add_argument("--config", metavar="FILE", help="TOML run configuration file")
    p.add_argument("--output-dir", dest="output_dir", metavar="DIR", help="default output directory")
    p.add_argument(
        "--format",
        choices=("jsonl", "csv"),
        help="input corpus format (default: inferred from extension)",
    )
    p.add_argument("--notes", metavar="FILE", help="clinical notes file")
    p.add_argument("--lexicon", metavar="FILE", help="phrase-per-line lexicon (default: built-in)")


def _add_backend_opts(p) -> None:
    p.add_argument("--backend", dest="backend_kind", choices=("http_chat", "rule_oracle"))
    p.add_argument("--base-url", dest="base_url", metavar="URL")
    p.add_argument("--model", dest="model_name", metavar="NAME")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--timeout-ms", dest="timeout_ms", type=int)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.add_argument("--retry-backoff-ms", dest="retry_backoff_ms", type=int)


def _add_prompt_opts(p) -> None:
    p.add_argument("--prompt-mode", dest="prompt_mode", choices=("zero_shot", "few_shot"))
    p.add_argument("--shots", dest="shots_total", type=int, help="total in-context examples")
    p.add_argument("--shot-seed", dest="shot_seed", type=int)
    p.add_argument("--example-pool", dest="example_pool", metavar="FILE")
    p.add_argument("--template-dir", dest="template_dir", metavar="DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="notepheno",
        description="Keyword-anchored phenotyping of clinical notes with compact chat models.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus with planted truth")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patients", type=int, default=50)
    p.add_argument("--prevalence", type=float, default=0.3)
    p.add_argument("--notes-per-patient", dest="notes_per_patient", type=int, nargs=2,
                   default=(2, 5), metavar=("LO", "HI"))
    p.add_argument("--distractors", type=int, nargs=2, default=(3, 8), metavar=("LO", "HI"))
    p.add_argument("--negation-rate", dest="negation_rate", type=float, default=1.0)
    p.add_argument("--date-range", dest="date_range", nargs=2,
                   default=("2019-01-01", "2020-12-31"), metavar=("START", "END"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write keyword-anchored context blocks per note")
    _add_common(p)
    p.add_argument("--radius", type=int, help="neighbor sentences kept on each side of a hit")
    p.add_argument("--out", metavar="FILE", help="output JSONL (default: OUTPUT_DIR/preprocessed.jsonl)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("classify", help="classify notes with an LLM backend or the rule oracle")
    _add_common(p)
    p.add_argument("--radius", type=int)
    p.add_argument("--preprocessing", choices=("on", "off"))
    _add_prompt_opts(p)
    _add_backend_opts(p)
    p.add_argument("--cache", metavar="FILE", help="verdict cache (default: OUTPUT_DIR/verdict_cache.jsonl)")
    p.add_argument("--out", metavar="FILE", help="verdict file (default: OUTPUT_DIR/verdicts.jsonl)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score verdicts against coded diagnoses")
    _add_common(p)
    p.add_argument("--diagnoses", metavar="FILE")
    p.add_argument("--verdicts", metavar="FILE", help="default: OUTPUT_DIR/verdicts.jsonl")
    p.add_argument("--windows", metavar="DAYS[,DAYS...]",
                   help="window half-widths in days, or 'none' to skip window accuracy")
    p.add_argument("--granularities", metavar="LIST",
                   help="comma list of patient,admission (or 'none')")
    p.add_argument("--radius", type=int)
    p.add_argument("--preprocessing", choices=("on", "off"))
    _add_prompt_opts(p)
    _add_backend_opts(p)
    p.add_argument("--out", metavar="DIR", help="report directory (default: OUTPUT_DIR)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge evaluate outputs from several runs")
    p.add_argument("--runs", nargs="+", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("finetune", help="export balanced labeled samples for fine-tuning")
    _add_common(p)
    p.add_argument("--per-class", dest="per_class", type=int, default=50)
    p.add_argument("--split-fraction", dest="split_fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="DIR", help="default: OUTPUT_DIR/finetune")
    p.set_defaults(func=cmd_finetune)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (CorpusError, PromptError, MetricsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
