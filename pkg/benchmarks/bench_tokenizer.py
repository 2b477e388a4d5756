#!/usr/bin/env python3
"""Benchmark the two WordPiece matching backends.

Trains a vocabulary on a generated corpus, then times greedy longest-match
segmentation of the same word stream through the compiled kernel
(kusent._fastmatch) and the pure-Python fallback (kusent._pymatch), checking
that both produce identical output.

Usage: python benchmarks/bench_tokenizer.py [--words 200000] [--vocab-size 2000]
"""

import argparse
import time

import numpy as np

from kusent import _pymatch
from kusent.wordpiece import MAX_WORD_CHARS, train_wordpiece

try:
    from kusent import _fastmatch
except ImportError:
    _fastmatch = None

SYLLABLES = [
    c + v for c in "bdghjklmnprstwz" for v in ["a", "e", "i", "o", "u", "aa", "ee"]
]


def generate_words(n, seed=0):
    rng = np.random.default_rng(seed)
    words = []
    for _ in range(n):
        n_syl = int(rng.integers(1, 5))
        words.append("".join(rng.choice(SYLLABLES) for _ in range(n_syl)))
    return words


def run_backend(backend, words, vocab, repeats):
    args = (
        vocab._initial,
        vocab._cont,
        vocab.continuation_prefix,
        vocab._max_init,
        vocab._max_cont,
        MAX_WORD_CHARS,
    )
    best = float("inf")
    out = None
    for _ in range(repeats):
        started = time.perf_counter()
        out = backend.segment_words(words, *args)
        best = min(best, time.perf_counter() - started)
    return out, best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--words", type=int, default=200_000)
    parser.add_argument("--vocab-size", type=int, default=2000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    print(f"training vocabulary (size {args.vocab_size}) ...")
    corpus_words = generate_words(20_000, seed=1)
    corpus = [" ".join(corpus_words[i : i + 8]) for i in range(0, len(corpus_words), 8)]
    vocab = train_wordpiece(corpus, vocab_size=args.vocab_size)
    words = generate_words(args.words, seed=2)
    total_chars = sum(len(w) for w in words)
    print(f"segmenting {len(words):,} words ({total_chars:,} chars), best of {args.repeats}\n")

    py_out, py_time = run_backend(_pymatch, words, vocab, args.repeats)
    print(f"python backend:  {py_time:8.3f}s  {len(words) / py_time:12,.0f} words/s")

    if _fastmatch is None:
        print("cython backend:  not built (pip install -e . with Cython available)")
        return

    cy_out, cy_time = run_backend(_fastmatch, words, vocab, args.repeats)
    print(f"cython backend:  {cy_time:8.3f}s  {len(words) / cy_time:12,.0f} words/s")
    print(f"\nspeedup: {py_time / cy_time:.2f}x")
    if cy_out != py_out:
        raise SystemExit("BACKENDS DISAGREE: outputs are not identical")
    print("outputs identical across backends")


if __name__ == "__main__":
    main()
