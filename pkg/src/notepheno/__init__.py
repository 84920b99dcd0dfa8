"""Keyword-anchored phenotyping of clinical notes with compact chat models.

Pipeline stages: corpus loading, keyword-context extraction, prompt
construction, pluggable three-way classification backends, window and
entity-level vote aggregation, and cohort metrics, plus a seeded
synthetic corpus generator for closed-loop testing.
"""

__version__ = "0.1.0"

from notepheno.aggregate import (
    EntityClass,
    EntityLabel,
    PredictedCohort,
    WindowOutcome,
    WindowResult,
    classify_entity,
    partition_by_prediction,
    vote_window,
)
from notepheno.corpus import (
    ClinicalNote,
    CodeSystem,
    CohortPartition,
    Granularity,
    IcdDiagnosis,
    is_metastasis_code,
    load_diagnoses,
    load_notes,
    normalize_code,
    partition_cohort,
    select_finetune_samples,
    select_window,
)
from notepheno.extract import (
    Lexicon,
    PreprocessedNote,
    Sentence,
    contains_keyword,
    extract_contexts,
    find_keyword_sentences,
    kernel_backend,
    split_sentences,
)
from notepheno.llm import (
    BackendConfig,
    BackendKind,
    Label,
    NoteVerdict,
    VerdictCache,
    classify,
    oracle_classify,
    parse_label,
    run_batch,
)
from notepheno.metrics import (
    CohortRates,
    EvaluationSummary,
    accuracy_summary,
    cohort_rates,
    render_report,
    sensitivity,
    specificity,
)
from notepheno.prompt import (
    ExampleSet,
    PromptMode,
    PromptSpec,
    build_few_shot,
    build_zero_shot,
    select_shots,
)
from notepheno.synth import SynthConfig, generate_corpus

__all__ = [
    "__version__",
    "BackendConfig",
    "BackendKind",
    "ClinicalNote",
    "CodeSystem",
    "CohortPartition",
    "CohortRates",
    "EntityClass",
    "EntityLabel",
    "EvaluationSummary",
    "ExampleSet",
    "Granularity",
    "IcdDiagnosis",
    "Label",
    "Lexicon",
    "NoteVerdict",
    "PredictedCohort",
    "PreprocessedNote",
    "PromptMode",
    "PromptSpec",
    "Sentence",
    "SynthConfig",
    "VerdictCache",
    "WindowOutcome",
    "WindowResult",
    "accuracy_summary",
    "build_few_shot",
    "build_zero_shot",
    "classify",
    "classify_entity",
    "cohort_rates",
    "contains_keyword",
    "extract_contexts",
    "find_keyword_sentences",
    "generate_corpus",
    "is_metastasis_code",
    "kernel_backend",
    "load_diagnoses",
    "load_notes",
    "normalize_code",
    "oracle_classify",
    "parse_label",
    "partition_by_prediction",
    "partition_cohort",
    "render_report",
    "run_batch",
    "select_finetune_samples",
    "select_shots",
    "select_window",
    "sensitivity",
    "specificity",
    "split_sentences",
    "vote_window",
]
