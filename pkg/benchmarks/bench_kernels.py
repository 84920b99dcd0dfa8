#!/usr/bin/env python3
"""Benchmark the compiled sentence-scan kernel against the pure-Python twin.

Generates a synthetic corpus, times both scanners over every note text,
and reports throughput plus the end-to-end context extraction time with
whichever kernel is active.
"""

import argparse
import tempfile
import time

from notepheno import _scan_py
from notepheno.corpus import load_notes
from notepheno.extract import Lexicon, extract_contexts, kernel_backend
from notepheno.synth import SynthConfig, generate_corpus

try:
    from notepheno import _speedups
except ImportError:
    _speedups = None


def time_scanner(scan, texts, repeats):
    best = None
    sentences = 0
    for _ in range(repeats):
        start = time.perf_counter()
        sentences = sum(len(scan(t)) for t in texts)
        elapsed = time.perf_counter() - start
        best = elapsed if best is None else min(best, elapsed)
    return best, sentences


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--patients", type=int, default=300)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    config = SynthConfig(
        seed=args.seed,
        n_patients=args.patients,
        notes_per_patient=(3, 6),
        distractor_sentences_per_note=(10, 25),
    )
    with tempfile.TemporaryDirectory() as tmp:
        paths = generate_corpus(config, tmp)
        texts = [n.text for n in load_notes(paths.notes)]
    chars = sum(len(t) for t in texts)
    print(f"{len(texts)} notes, {chars} characters; active kernel: {kernel_backend()}")

    py_time, py_sentences = time_scanner(_scan_py.scan_sentence_spans, texts, args.repeats)
    print(
        f"pure python : {py_time:.4f}s best of {args.repeats} "
        f"({chars / py_time / 1e6:.1f} MB/s, {py_sentences} sentences)"
    )
    if _speedups is None:
        print("compiled    : not built (pip install -e . with Cython available)")
        return
    cy_time, cy_sentences = time_scanner(_speedups.scan_sentence_spans, texts, args.repeats)
    print(
        f"compiled    : {cy_time:.4f}s best of {args.repeats} "
        f"({chars / cy_time / 1e6:.1f} MB/s, {cy_sentences} sentences)"
    )
    if cy_sentences != py_sentences:
        raise SystemExit("kernel outputs disagree; run the equivalence tests")
    print(f"speedup     : {py_time / cy_time:.1f}x")

    lex = Lexicon.default()
    start = time.perf_counter()
    for i, text in enumerate(texts):
        extract_contexts(text, lex, note_id=str(i))
    elapsed = time.perf_counter() - start
    print(f"extract_contexts end-to-end ({kernel_backend()} kernel): {elapsed:.4f}s")


if __name__ == "__main__":
    main()
