"""Pure-Python greedy longest-match kernel for WordPiece segmentation.

Fallback twin of the compiled ``kusent._fastmatch`` extension; both must
produce identical output for identical input (enforced by tests).
"""

from __future__ import annotations

BACKEND = "python"


def segment_word(
    word: str,
    initial: dict[str, int],
    cont: dict[str, int],
    prefix: str,
    max_init: int,
    max_cont: int,
    max_word_chars: int,
) -> list[str] | None:
    """Split one whitespace word into vocabulary pieces, longest match first.

    ``initial`` holds word-initial pieces; ``cont`` holds continuation pieces
    keyed without their prefix. Returns None when no full segmentation exists
    or the word exceeds ``max_word_chars`` (caller substitutes UNK).
    """
    n = len(word)
    if n > max_word_chars:
        return None
    pieces: list[str] = []
    start = 0
    while start < n:
        if start == 0:
            table, cap = initial, max_init
        else:
            table, cap = cont, max_cont
        end = min(n, start + cap)
        match_end = 0
        while end > start:
            if word[start:end] in table:
                match_end = end
                break
            end -= 1
        if match_end == 0:
            return None
        piece = word[start:match_end]
        pieces.append(piece if start == 0 else prefix + piece)
        start = match_end
    return pieces


def segment_words(
    words: list[str],
    initial: dict[str, int],
    cont: dict[str, int],
    prefix: str,
    max_init: int,
    max_cont: int,
    max_word_chars: int,
) -> list[list[str] | None]:
    return [
        segment_word(w, initial, cont, prefix, max_init, max_cont, max_word_chars)
        for w in words
    ]
