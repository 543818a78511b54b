"""Concept vocabulary, tokenization, and BIO tag handling.

Everything downstream (generation, tagging, memory, evaluation) speaks in
terms of the types defined here: concept labels, token sequences, spans,
and tagged utterances. All containers are immutable and safe to share.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

BASE_TYPES: tuple[str, ...] = (
    "recipe_type",
    "ingredient",
    "preparation_technique",
    "origin",
    "origin_adjective",
    "meal",
    "event",
    "other_category",
)

NEGATIVE_PREFIX = "negative_"

#: The 16 labels a concept can carry: each base type plus its negative variant.
ALL_TYPES: tuple[str, ...] = BASE_TYPES + tuple(NEGATIVE_PREFIX + t for t in BASE_TYPES)

_BASE_SET = frozenset(BASE_TYPES)
_ALL_SET = frozenset(ALL_TYPES)

OUTSIDE = "O"

#: Fixed tag inventory; "O" first so an all-zero model defaults to it.
TAGSET: tuple[str, ...] = (OUTSIDE,) + tuple(
    prefix + label for label in ALL_TYPES for prefix in ("B-", "I-")
)


class ConceptTypeError(ValueError):
    """Raised for labels outside the 16-type vocabulary."""


def is_negative(label: str) -> bool:
    return label.startswith(NEGATIVE_PREFIX)


def base_type(label: str) -> str:
    """Strip a negative prefix, returning the base type."""
    return label[len(NEGATIVE_PREFIX):] if is_negative(label) else label


def negate(label: str) -> str:
    """Flip polarity: ingredient <-> negative_ingredient."""
    if label not in _ALL_SET:
        raise ConceptTypeError(f"unknown concept type: {label!r}")
    if is_negative(label):
        return label[len(NEGATIVE_PREFIX):]
    return NEGATIVE_PREFIX + label


def require_base_type(label: str) -> str:
    if label not in _BASE_SET:
        raise ConceptTypeError(f"expected one of the 8 base types, got {label!r}")
    return label


def require_type(label: str) -> str:
    if label not in _ALL_SET:
        raise ConceptTypeError(f"unknown concept type: {label!r}")
    return label


# Negative context: a cue within this window before a mention flips its
# polarity (shared by the query-labeling rule and the tagger's features).
NEGATION_CUES: tuple[tuple[str, ...], ...] = (
    ("without",),
    ("no",),
    ("don't",),
    ("not",),
    ("allergic", "to"),
)
NEGATION_WINDOW = 3


def has_negation_cue(tokens: Sequence[str], position: int) -> bool:
    """True iff a negation cue occurs in the window before ``position``."""
    window = tuple(tokens[max(0, position - NEGATION_WINDOW) : position])
    for cue in NEGATION_CUES:
        n = len(cue)
        if any(window[i : i + n] == cue for i in range(len(window) - n + 1)):
            return True
    return False


# Tokens are lowercased words (apostrophes kept, so "don't" survives) or
# single punctuation marks. Uniform across resources, generation, and
# user utterances.
_TOKEN_RE = re.compile(r"[a-z0-9_']+|[^\sa-z0-9_']")


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercasing, punctuation-separating tokenizer."""
    return tuple(_TOKEN_RE.findall(text.lower()))


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class Concept:
    """A typed mention: (concept type, surface tokens, token span).

    ``span`` is a half-open [start, end) index range into the utterance the
    concept was extracted from; ``mention`` always equals tokens[start:end].
    """

    label: str
    mention: tuple[str, ...]
    span: tuple[int, int]

    def __post_init__(self) -> None:
        require_type(self.label)
        start, end = self.span
        if not (0 <= start < end):
            raise ValueError(f"empty or negative span {self.span}")
        if end - start != len(self.mention):
            raise ValueError("span length does not match mention length")

    @property
    def negative(self) -> bool:
        return is_negative(self.label)

    @property
    def base(self) -> str:
        return base_type(self.label)

    def key(self) -> tuple[str, tuple[str, ...]]:
        """Identity used for user-satisfaction comparison: type + mention."""
        return (self.label, self.mention)


class BioError(ValueError):
    """Raised for tag sequences that are not legal BIO."""


def validate_bio(tags: Sequence[str]) -> None:
    """Reject sequences with unknown tags or dangling I- continuations."""
    prev = OUTSIDE
    for i, tag in enumerate(tags):
        if tag not in TAGSET:
            raise BioError(f"unknown tag {tag!r} at position {i}")
        if tag.startswith("I-"):
            label = tag[2:]
            if prev not in (f"B-{label}", f"I-{label}"):
                raise BioError(f"I-{label} at position {i} has no open chunk")
        prev = tag


def bio_decode(tags: Sequence[str], tokens: Sequence[str]) -> list[Concept]:
    """Extract concepts from a BIO tag sequence.

    Lenient: an I- tag without a compatible open chunk starts a new chunk,
    so model output never needs repair before decoding.
    """
    if len(tags) != len(tokens):
        raise ValueError(f"{len(tags)} tags for {len(tokens)} tokens")
    concepts: list[Concept] = []
    start: int | None = None
    label = ""

    def close(end: int) -> None:
        nonlocal start
        if start is not None:
            concepts.append(Concept(label, tuple(tokens[start:end]), (start, end)))
            start = None

    for i, tag in enumerate(tags):
        if tag == OUTSIDE:
            close(i)
        elif tag.startswith("B-"):
            close(i)
            start, label = i, tag[2:]
        else:  # I-
            if start is None or tag[2:] != label:
                close(i)
                start, label = i, tag[2:]
    close(len(tags))
    return concepts


def bio_encode(concepts: Iterable[Concept], length: int) -> tuple[str, ...]:
    """Render concepts back into a BIO tag sequence of the given length.

    Overlapping concepts are resolved defensively: longer spans win, then
    earlier start; losers are dropped. Legal concept lists round-trip
    losslessly through bio_decode.
    """
    tags = [OUTSIDE] * length
    taken = [False] * length
    ordered = sorted(concepts, key=lambda c: (-(c.span[1] - c.span[0]), c.span[0]))
    for concept in ordered:
        start, end = concept.span
        if end > length or any(taken[start:end]):
            continue
        tags[start] = "B-" + concept.label
        for i in range(start + 1, end):
            tags[i] = "I-" + concept.label
        for i in range(start, end):
            taken[i] = True
    return tuple(tags)


@dataclass(frozen=True)
class Provenance:
    """Where a tagged utterance came from, for audit and isolation scans.

    ``pattern_split`` / ``mention_splits`` carry resource split labels
    (INITIAL / LEARN / UNKNOWN / ACQUIRED); literal template mentions take
    their pattern's split.
    """

    source: str = "generated"  # generated | acquired | external
    pattern_id: str | None = None
    pattern_split: str | None = None
    mention_splits: tuple[tuple[str, str], ...] = ()  # (surface text, split)
    new_pattern: bool = False
    new_mention: bool = False
    dialogue_index: int | None = None

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "pattern_id": self.pattern_id,
            "pattern_split": self.pattern_split,
            "mention_splits": [list(pair) for pair in self.mention_splits],
            "new_pattern": self.new_pattern,
            "new_mention": self.new_mention,
            "dialogue_index": self.dialogue_index,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Provenance":
        return cls(
            source=d.get("source", "generated"),
            pattern_id=d.get("pattern_id"),
            pattern_split=d.get("pattern_split"),
            mention_splits=tuple(
                (surface, split) for surface, split in d.get("mention_splits", ())
            ),
            new_pattern=bool(d.get("new_pattern", False)),
            new_mention=bool(d.get("new_mention", False)),
            dialogue_index=d.get("dialogue_index"),
        )


@dataclass(frozen=True)
class TaggedUtterance:
    """A tokenized utterance with a legal BIO tagging."""

    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    provenance: Provenance = field(default=Provenance(), compare=False)

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.tags):
            raise BioError(
                f"{len(self.tokens)} tokens but {len(self.tags)} tags in "
                f"{detokenize(self.tokens)!r}"
            )
        validate_bio(self.tags)

    @property
    def concepts(self) -> list[Concept]:
        return bio_decode(self.tags, self.tokens)

    @property
    def text(self) -> str:
        return detokenize(self.tokens)

    @classmethod
    def from_concepts(
        cls,
        tokens: Sequence[str],
        concepts: Iterable[Concept],
        provenance: Provenance | None = None,
    ) -> "TaggedUtterance":
        return cls(
            tokens=tuple(tokens),
            tags=bio_encode(concepts, len(tokens)),
            provenance=provenance or Provenance(),
        )


# ---------------------------------------------------------------------------
# Token-aligned lexicon matching (shared by KB gazetteer features and the
# short-term memory lookup)
# ---------------------------------------------------------------------------


class SurfaceIndex:
    """Surface-tuple -> label map indexed by first token for fast matching."""

    def __init__(self, entries: Iterable[tuple[tuple[str, ...], str]] = ()) -> None:
        self._by_first: dict[str, list[tuple[tuple[str, ...], str]]] = {}
        self._size = 0
        for surface, label in entries:
            self.add(surface, label)

    def add(self, surface: tuple[str, ...], label: str) -> None:
        if not surface:
            raise ValueError("empty surface")
        bucket = self._by_first.setdefault(surface[0], [])
        for i, (existing, _) in enumerate(bucket):
            if existing == surface:
                bucket[i] = (surface, label)
                return
        bucket.append((surface, label))
        self._size += 1

    def __len__(self) -> int:
        return self._size

    def candidates(self, first_token: str) -> list[tuple[tuple[str, ...], str]]:
        return self._by_first.get(first_token, [])

    def __iter__(self) -> Iterator[tuple[tuple[str, ...], str]]:
        for bucket in self._by_first.values():
            yield from bucket


def find_surface_matches(tokens: Sequence[str], index: SurfaceIndex) -> list[Concept]:
    """All maximal occurrences of indexed surfaces in ``tokens``.

    Longest-match-first, non-overlapping: occurrences are ranked by length
    (descending) then position, and accepted greedily. Matching is
    token-aligned; no partial-token matches.
    """
    occurrences: list[tuple[int, int, str, tuple[str, ...]]] = []
    n = len(tokens)
    for i in range(n):
        for surface, label in index.candidates(tokens[i]):
            end = i + len(surface)
            if end <= n and tuple(tokens[i:end]) == surface:
                occurrences.append((i, end, label, surface))
    occurrences.sort(key=lambda m: (-(m[1] - m[0]), m[0]))
    used = [False] * n
    chosen: list[Concept] = []
    for start, end, label, surface in occurrences:
        if any(used[start:end]):
            continue
        for j in range(start, end):
            used[j] = True
        chosen.append(Concept(label, surface, (start, end)))
    chosen.sort(key=lambda c: c.span)
    return chosen
