# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled greedy longest-match kernel for WordPiece segmentation.

Twin of kusent._pymatch; must stay byte-for-byte equivalent (tests compare
the two backends on random vocabularies and words).
"""

BACKEND = "cython"


def segment_word(
    str word,
    dict initial,
    dict cont,
    str prefix,
    Py_ssize_t max_init,
    Py_ssize_t max_cont,
    Py_ssize_t max_word_chars,
):
    cdef Py_ssize_t n = len(word)
    cdef Py_ssize_t start = 0
    cdef Py_ssize_t end, match_end, cap
    cdef dict table
    cdef str cand, piece
    if n > max_word_chars:
        return None
    cdef list pieces = []
    while start < n:
        if start == 0:
            table = initial
            cap = max_init
        else:
            table = cont
            cap = max_cont
        end = start + cap
        if end > n:
            end = n
        match_end = 0
        while end > start:
            cand = word[start:end]
            if cand in table:
                match_end = end
                break
            end -= 1
        if match_end == 0:
            return None
        piece = word[start:match_end]
        if start == 0:
            pieces.append(piece)
        else:
            pieces.append(prefix + piece)
        start = match_end
    return pieces


def segment_words(
    list words,
    dict initial,
    dict cont,
    str prefix,
    Py_ssize_t max_init,
    Py_ssize_t max_cont,
    Py_ssize_t max_word_chars,
):
    cdef list out = []
    for w in words:
        out.append(
            segment_word(w, initial, cont, prefix, max_init, max_cont, max_word_chars)
        )
    return out
