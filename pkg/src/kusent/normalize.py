"""Character-level cleaning and unification of Central Kurdish text.

Arabic-script Kurdish text in the wild mixes Arabic and Farsi code points for
the same letters (Kaf/Yeh), carries tatweel and diacritics, and uses three
digit systems. The normalizer applies a deterministic rule table so that
downstream tokenization sees one spelling per word.

The default table covers the uncontroversial unifications only; the full rule
inventory is site-specific, so rules load from a plain-text file and callers
can override everything.
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator

DIGIT_POLICIES = ("ascii", "arabic", "keep")

_ASCII_DIGITS = "0123456789"
_ARABIC_INDIC_DIGITS = "".join(chr(0x0660 + i) for i in range(10))
_EXT_ARABIC_INDIC_DIGITS = "".join(chr(0x06F0 + i) for i in range(10))

RULES_VERSION = 1

# Stripping can make previously separated code points adjacent, and NFC may
# then compose them into a new character; normalization therefore iterates to
# a fixpoint. Converges in 2 passes for anything non-pathological.
_MAX_PASSES = 10


def _default_char_map() -> dict[str, str]:
    return {
        "ي": "ی",  # Arabic Yeh -> Farsi Yeh
        "ك": "ک",  # Arabic Kaf -> Keheh
    }


def _default_strip_set() -> set[str]:
    strip = {"ـ", "‌"}  # tatweel, zero-width non-joiner
    strip.update(chr(c) for c in range(0x064B, 0x0653))  # Arabic diacritics
    strip.add("​")  # zero-width space
    strip.add("﻿")  # BOM
    # C0 controls except tab/newline/CR, which whitespace collapse absorbs
    strip.update(chr(c) for c in range(0x00, 0x20) if chr(c) not in "\t\n\r")
    return strip


@dataclass(frozen=True)
class NormalizationRules:
    """One character-rewrite rule set: map, strip, digit policy, whitespace collapse.

    ``final_heh_to_ae`` optionally rewrites word-final U+0647 to U+06D5 (the
    Kurdish AE vowel). It is context-sensitive and off by default.
    """

    char_map: dict[str, str] = field(default_factory=_default_char_map)
    strip_set: set[str] = field(default_factory=_default_strip_set)
    digit_policy: str = "ascii"
    final_heh_to_ae: bool = False
    version: int = RULES_VERSION

    def __post_init__(self) -> None:
        if self.digit_policy not in DIGIT_POLICIES:
            raise ValueError(
                f"digit_policy must be one of {DIGIT_POLICIES}, got {self.digit_policy!r}"
            )
        for src in self.char_map:
            if len(src) != 1:
                raise ValueError(f"char_map source must be a single code point, got {src!r}")
        effective = dict(self.char_map)
        effective.update(self._digit_map())
        if self.final_heh_to_ae:
            effective["ه"] = "ە"
        # No replacement may reintroduce a mapped source or a stripped code
        # point: guarantees the rule pass itself is one-pass idempotent.
        for src, repl in effective.items():
            for ch in repl:
                if ch in effective:
                    raise ValueError(
                        f"replacement for U+{ord(src):04X} contains mapped source U+{ord(ch):04X}"
                    )
                if ch in self.strip_set:
                    raise ValueError(
                        f"replacement for U+{ord(src):04X} contains stripped code point U+{ord(ch):04X}"
                    )
        # The word-final heh rule is context-sensitive and applied separately;
        # the translate table holds only position-independent rewrites.
        table: dict[int, str | None] = {ord(c): None for c in self.strip_set}
        for src, repl in self.char_map.items():
            table[ord(src)] = repl
        for src, repl in self._digit_map().items():
            table[ord(src)] = repl
        object.__setattr__(self, "_table", table)

    def _digit_map(self) -> dict[str, str]:
        if self.digit_policy == "keep":
            return {}
        if self.digit_policy == "ascii":
            target = _ASCII_DIGITS
            sources = (_ARABIC_INDIC_DIGITS, _EXT_ARABIC_INDIC_DIGITS)
        else:  # arabic
            target = _ARABIC_INDIC_DIGITS
            sources = (_ASCII_DIGITS, _EXT_ARABIC_INDIC_DIGITS)
        out: dict[str, str] = {}
        for src in sources:
            for s, t in zip(src, target):
                out[s] = t
        return out


@dataclass(frozen=True)
class NormalizedText:
    """Normalized UTF-8 text plus a provenance hash of the raw input."""

    text: str
    source_hash: str


def default_rules() -> NormalizationRules:
    return NormalizationRules()


def _one_pass(text: str, rules: NormalizationRules) -> str:
    text = unicodedata.normalize("NFC", text)
    text = text.translate(rules._table)  # type: ignore[attr-defined]
    text = " ".join(text.split())
    if rules.final_heh_to_ae and "ه" in text:
        text = " ".join(
            w[:-1] + "ە" if w.endswith("ه") else w for w in text.split(" ")
        )
    return text


def normalize_text(raw: str, rules: NormalizationRules | None = None) -> NormalizedText:
    """Normalize one string: NFC, rule table, digit policy, whitespace collapse."""
    if rules is None:
        rules = default_rules()
    source_hash = hashlib.sha256(raw.encode("utf-8")).hexdigest()
    text = _one_pass(raw, rules)
    for _ in range(_MAX_PASSES - 1):
        nxt = _one_pass(text, rules)
        if nxt == text:
            return NormalizedText(text=text, source_hash=source_hash)
        text = nxt
    raise ValueError("normalization did not converge; rule table is pathological")


def normalize_stream(
    lines: Iterable[str], rules: NormalizationRules | None = None
) -> Iterator[str]:
    """Normalize a line sequence, dropping lines that normalize to empty."""
    if rules is None:
        rules = default_rules()
    for lineno, line in enumerate(lines, start=1):
        try:
            out = normalize_text(line, rules).text
        except Exception as exc:  # surface the offending line
            raise ValueError(f"normalization failed at line {lineno}: {exc}") from exc
        if out:
            yield out


def load_rules(path: str) -> NormalizationRules:
    """Parse a rules file: `map <hex> <hex...>`, `strip <hex>`, `digits ascii|arabic|keep`.

    Lines starting with `#` are comments. Later `map` lines override earlier
    ones for the same source.
    """
    char_map: dict[str, str] = {}
    strip_set: set[str] = set()
    digit_policy = "ascii"
    with open(path, encoding="utf-8") as fh:
        for lineno, raw_line in enumerate(fh, start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            directive = parts[0]
            try:
                if directive == "map":
                    if len(parts) < 3:
                        raise ValueError("map needs a source and at least one target")
                    src = chr(int(parts[1], 16))
                    repl = "".join(chr(int(p, 16)) for p in parts[2:])
                    char_map[src] = repl
                elif directive == "strip":
                    if len(parts) != 2:
                        raise ValueError("strip needs exactly one code point")
                    strip_set.add(chr(int(parts[1], 16)))
                elif directive == "digits":
                    if len(parts) != 2 or parts[1] not in DIGIT_POLICIES:
                        raise ValueError(f"digits needs one of {DIGIT_POLICIES}")
                    digit_policy = parts[1]
                else:
                    raise ValueError(f"unknown directive {directive!r}")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return NormalizationRules(
        char_map=char_map, strip_set=strip_set, digit_policy=digit_policy
    )


def save_rules(rules: NormalizationRules, path: str) -> None:
    lines = [f"# normalization rules, version {rules.version}"]
    for src, repl in rules.char_map.items():
        targets = " ".join(f"{ord(c):04X}" for c in repl)
        lines.append(f"map {ord(src):04X} {targets}")
    for ch in sorted(rules.strip_set):
        lines.append(f"strip {ord(ch):04X}")
    lines.append(f"digits {rules.digit_policy}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
