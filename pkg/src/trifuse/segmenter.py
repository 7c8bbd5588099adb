"""Rule-based decomposition of a reasoning trace into minimal semantic units.

The algorithm is fixed so that two runs over the same text always yield the
same boundaries:

1. split at sentence terminators ``. ! ?`` followed by whitespace or end of
   text, keeping the terminator with the preceding unit; terminators inside
   decimal numbers or after a known abbreviation do not split;
2. within each sentence, split immediately before each connector-lexicon
   match (case-insensitive, longest match first, word-boundary anchored),
   keeping the connector with the following unit;
3. merge units shorter than ``min_unit_tokens`` whitespace tokens into their
   predecessor (the first unit merges forward instead);
4. truncate to ``m_max`` units by merging the overflow into the last one.

Boundaries partition the source text completely: inter-unit whitespace
belongs to the preceding unit, so concatenating the raw spans reproduces the
source byte-for-byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyInput, MalformedLine

DEFAULT_MIN_UNIT_TOKENS = 3
DEFAULT_MAX_UNITS = 32

SENTENCE_TERMINATORS = ".!?"

# Small and fixed: trailing periods of these tokens never end a sentence.
ABBREVIATIONS = ("e.g.", "i.e.", "etc.", "mr.", "dr.", "vs.")

CONNECTOR_CATEGORIES = ("logical", "causal", "sequential", "fact_intro")

_DEFAULT_ENTRIES = [
    ("therefore", "logical"),
    ("thus", "logical"),
    ("hence", "logical"),
    ("so", "logical"),
    ("consequently", "logical"),
    ("it follows that", "logical"),
    ("because", "causal"),
    ("since", "causal"),
    ("as a result", "causal"),
    ("due to", "causal"),
    ("first", "sequential"),
    ("second", "sequential"),
    ("third", "sequential"),
    ("next", "sequential"),
    ("then", "sequential"),
    ("finally", "sequential"),
    ("step", "sequential"),
    ("we know that", "fact_intro"),
    ("note that", "fact_intro"),
    ("recall that", "fact_intro"),
    ("given that", "fact_intro"),
]


@dataclass
class ConnectorLexicon:
    """Connector phrases that open a new reasoning unit."""

    entries: list[tuple[str, str]]

    def __post_init__(self) -> None:
        seen = set()
        for phrase, category in self.entries:
            if not phrase.strip():
                raise MalformedLine(0, "lexicon phrases must be nonempty")
            if category not in CONNECTOR_CATEGORIES:
                raise MalformedLine(0, f"unknown connector category {category!r}")
            key = phrase.lower()
            if key in seen:
                raise MalformedLine(0, f"duplicate lexicon phrase {phrase!r}")
            seen.add(key)
        # Longest phrase first so the regex alternation prefers long matches.
        ordered = sorted(self.entries, key=lambda e: (-len(e[0]), e[0]))
        pattern = "|".join(re.escape(phrase) for phrase, _ in ordered)
        self._regex = re.compile(rf"\b(?:{pattern})\b", re.IGNORECASE)
        self._categories = {phrase.lower(): category for phrase, category in self.entries}

    def finditer(self, text: str):
        return self._regex.finditer(text)

    def category_of(self, phrase: str) -> str | None:
        return self._categories.get(phrase.lower())


def default_lexicon() -> ConnectorLexicon:
    return ConnectorLexicon(list(_DEFAULT_ENTRIES))


def load_lexicon(path: str | Path) -> ConnectorLexicon:
    """Read a lexicon file: one ``phrase<TAB>category`` per line."""
    entries: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n")
            if not stripped.strip():
                continue
            if "\t" not in stripped:
                raise MalformedLine(lineno, "expected phrase<TAB>category")
            phrase, _, category = stripped.partition("\t")
            entries.append((phrase.strip(), category.strip()))
    return ConnectorLexicon(entries)


@dataclass
class SemanticTrajectoryList:
    """Ordered minimal reasoning units extracted from a trace."""

    units: list[str]
    source: str
    boundaries: list[tuple[int, int]]

    @property
    def length(self) -> int:
        return len(self.units)


def _is_decimal_point(text: str, i: int) -> bool:
    return (
        text[i] == "."
        and 0 < i < len(text) - 1
        and text[i - 1].isdigit()
        and text[i + 1].isdigit()
    )


def _ends_abbreviation(text: str, i: int) -> bool:
    """True when the token ending at the period ``text[i]`` is a known abbreviation."""
    start = i
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    token = text[start : i + 1].lower()
    return any(token.endswith(abbr) for abbr in ABBREVIATIONS)


def _sentence_starts(text: str) -> list[int]:
    """Start offsets of sentences; position 0 is always a start."""
    starts = [0]
    n = len(text)
    for i, ch in enumerate(text):
        if ch not in SENTENCE_TERMINATORS:
            continue
        if i + 1 < n and not text[i + 1].isspace():
            continue
        if _is_decimal_point(text, i):
            continue
        if ch == "." and _ends_abbreviation(text, i):
            continue
        j = i + 1
        while j < n and text[j].isspace():
            j += 1
        if j < n:
            starts.append(j)
    return starts


def segment_cot(
    text: str,
    lexicon: ConnectorLexicon | None = None,
    min_unit_tokens: int = DEFAULT_MIN_UNIT_TOKENS,
    m_max: int = DEFAULT_MAX_UNITS,
) -> SemanticTrajectoryList:
    """Deterministically segment a reasoning trace into its unit list."""
    if not text.strip():
        raise EmptyInput()
    if m_max < 1:
        raise EmptyInput(f"m_max must be >= 1, got {m_max}")
    lexicon = lexicon if lexicon is not None else default_lexicon()
    n = len(text)

    sentence_starts = _sentence_starts(text)

    # Unit start offsets: every sentence start, plus every connector match
    # that does not open its unit (a split there would leave an empty span).
    starts: list[int] = []
    for k, s_start in enumerate(sentence_starts):
        s_end = sentence_starts[k + 1] if k + 1 < len(sentence_starts) else n
        starts.append(s_start)
        cursor = s_start
        for match in lexicon.finditer(text[s_start:s_end]):
            p = s_start + match.start()
            if text[cursor:p].strip():
                starts.append(p)
                cursor = p

    boundaries = [
        (start, starts[k + 1] if k + 1 < len(starts) else n)
        for k, start in enumerate(starts)
    ]

    # Merge short units into their predecessor; the first merges forward.
    def token_count(span: tuple[int, int]) -> int:
        return len(text[span[0] : span[1]].split())

    merged: list[tuple[int, int]] = []
    for span in boundaries:
        if merged and token_count(span) < min_unit_tokens:
            merged[-1] = (merged[-1][0], span[1])
        else:
            merged.append(span)
    while len(merged) > 1 and token_count(merged[0]) < min_unit_tokens:
        merged = [(merged[0][0], merged[1][1])] + merged[2:]

    # Truncate: overflow folds into unit m_max.
    if len(merged) > m_max:
        merged = merged[: m_max - 1] + [(merged[m_max - 1][0], merged[-1][1])]

    units = [text[start:end].strip() for start, end in merged]
    return SemanticTrajectoryList(units=units, source=text, boundaries=merged)


# --- STL file IO (id -> units mapping) ---------------------------------------------

def save_stl_file(stls: dict[str, SemanticTrajectoryList], path: str | Path) -> None:
    from .ioutil import write_jsonl

    write_jsonl(
        path,
        (
            {"id": record_id, "units": stl.units, "boundaries": [list(b) for b in stl.boundaries]}
            for record_id, stl in stls.items()
        ),
    )


def load_stl_units(path: str | Path) -> dict[str, list[str]]:
    from .ioutil import iter_jsonl

    out: dict[str, list[str]] = {}
    for lineno, obj in iter_jsonl(path):
        if "id" not in obj or "units" not in obj:
            raise MalformedLine(lineno, "STL line needs id and units")
        out[obj["id"]] = list(obj["units"])
    return out
