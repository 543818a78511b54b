"""Generation resources: slotted patterns, typed mentions, and the KB.

File formats (line-oriented text, ``#`` comments and blank lines ignored):

* patterns:  ``id<TAB>template`` where the template contains placeholders
  ``$<base-type>`` (positive slot), ``$negative_<base-type>`` (negative
  slot), or ``$<base-type>=surface`` (a fixed literal mention that renders
  as-is but is tagged; multi-token literals join tokens with ``+``).
* mentions:  ``surface<TAB>type<TAB>frequency``.

Slot types always reference one of the 8 base concept types; polarity is a
property of the slot (the surrounding template context), never of the
mention.
"""

from __future__ import annotations

import dataclasses
import random
import re
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .concepts import (
    BASE_TYPES,
    NEGATIVE_PREFIX,
    SurfaceIndex,
    require_base_type,
    tokenize,
)
from .errors import DataError

SPLIT_INITIAL = "INITIAL"
SPLIT_LEARN = "LEARN"
SPLIT_UNKNOWN = "UNKNOWN"
SPLIT_ACQUIRED = "ACQUIRED"

_PLACEHOLDER_RE = re.compile(r"^\$(negative_)?([a-z_]+)(?:=([a-z0-9'+]+))?$")


@dataclass(frozen=True)
class Slot:
    """One placeholder in a pattern template."""

    position: int  # index into the template token sequence
    base_type: str
    negative: bool = False
    literal: tuple[str, ...] | None = None  # fixed surface, consumes no binding

    @property
    def label(self) -> str:
        return NEGATIVE_PREFIX + self.base_type if self.negative else self.base_type


def parse_placeholder(token: str) -> tuple[str, bool, tuple[str, ...] | None] | None:
    """Return (base_type, negative, literal) for a placeholder token, else None."""
    m = _PLACEHOLDER_RE.match(token)
    if not m:
        return None
    neg, name, literal = m.group(1), m.group(2), m.group(3)
    if name not in BASE_TYPES:
        return None
    surface = tuple(literal.split("+")) if literal else None
    return name, bool(neg), surface


def tokenize_template(text: str) -> tuple[str, ...]:
    """Tokenize a template, keeping ``$...`` placeholders as single tokens."""
    out: list[str] = []
    for chunk in text.lower().split():
        if chunk.startswith("$"):
            # trailing punctuation after a placeholder becomes its own token
            m = re.match(r"^(\$[a-z_]+(?:=[a-z0-9'+]+)?)(.*)$", chunk)
            if m:
                out.append(m.group(1))
                if m.group(2):
                    out.extend(tokenize(m.group(2)))
                continue
        out.extend(tokenize(chunk))
    return tuple(out)


@dataclass(frozen=True)
class Pattern:
    """A slotted utterance template."""

    id: str
    template: tuple[str, ...]
    split: str | None = None

    @property
    def slots(self) -> tuple[Slot, ...]:
        slots = []
        for i, token in enumerate(self.template):
            parsed = parse_placeholder(token)
            if parsed is not None:
                base, negative, literal = parsed
                slots.append(Slot(i, base, negative, literal))
        return tuple(slots)

    @property
    def open_slots(self) -> tuple[Slot, ...]:
        """Slots that consume a mention binding (non-literal)."""
        return tuple(s for s in self.slots if s.literal is None)

    def extraction_key(self) -> tuple[str, ...]:
        """Canonical template form for novelty checks.

        Literal-bound placeholders degrade to plain ones, because a pattern
        re-extracted from a rendered utterance can never recover the
        literal binding.
        """
        out = []
        for token in self.template:
            parsed = parse_placeholder(token)
            if parsed is not None:
                base, negative, _ = parsed
                out.append(f"${NEGATIVE_PREFIX if negative else ''}{base}")
            else:
                out.append(token)
        return tuple(out)

    def with_split(self, split: str) -> "Pattern":
        return dataclasses.replace(self, split=split)


@dataclass(frozen=True)
class Mention:
    """A typed surface string from the lexicon."""

    surface: tuple[str, ...]
    concept_type: str
    frequency: int = 1
    split: str | None = None

    def __post_init__(self) -> None:
        require_base_type(self.concept_type)
        if not self.surface:
            raise ValueError("empty mention surface")

    @property
    def text(self) -> str:
        return " ".join(self.surface)

    def with_split(self, split: str) -> "Mention":
        return dataclasses.replace(self, split=split)


def validate_pattern(pattern: Pattern, path: str = "<pattern>", line: int = 0) -> None:
    if not pattern.slots:
        raise DataError(f"{path}:{line}: pattern {pattern.id!r} has no slot placeholder")
    for token in pattern.template:
        if token.startswith("$") and parse_placeholder(token) is None:
            raise DataError(
                f"{path}:{line}: pattern {pattern.id!r} has malformed placeholder {token!r}"
            )


def load_patterns(path: str | Path, limit: int | None = None) -> list[Pattern]:
    patterns: list[Pattern] = []
    seen_ids: set[str] = set()
    path = Path(path)
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'id<TAB>template', got {raw!r}")
        pid, template = parts
        if pid in seen_ids:
            raise DataError(f"{path}:{lineno}: duplicate pattern id {pid!r}")
        seen_ids.add(pid)
        pattern = Pattern(id=pid, template=tokenize_template(template))
        validate_pattern(pattern, str(path), lineno)
        patterns.append(pattern)
        if limit is not None and len(patterns) >= limit:
            break
    if not patterns:
        raise DataError(f"{path}: no patterns found")
    return patterns


def load_mentions(path: str | Path, limit: int | None = None) -> list[Mention]:
    mentions: list[Mention] = []
    seen: dict[tuple[str, ...], tuple[str, int]] = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(
                f"{path}:{lineno}: expected 'surface<TAB>type<TAB>frequency', got {raw!r}"
            )
        surface_text, ctype, freq_text = parts
        if ctype not in BASE_TYPES:
            raise DataError(f"{path}:{lineno}: unknown concept type {ctype!r}")
        try:
            freq = int(freq_text)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad frequency {freq_text!r}") from None
        surface = tokenize(surface_text)
        if not surface:
            raise DataError(f"{path}:{lineno}: empty mention surface")
        if surface in seen:
            prev_type, prev_line = seen[surface]
            raise DataError(
                f"{path}:{lineno}: surface {surface_text!r} already defined as "
                f"{prev_type} on line {prev_line}; one type per surface"
            )
        seen[surface] = (ctype, lineno)
        mentions.append(Mention(surface=surface, concept_type=ctype, frequency=freq))
        if limit is not None and len(mentions) >= limit:
            break
    if not mentions:
        raise DataError(f"{path}: no mentions found")
    return mentions


def bundled_path(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(str(importlib_resources.files("slotlab").joinpath("data").joinpath(name)))


# ---------------------------------------------------------------------------
# Knowledge base
# ---------------------------------------------------------------------------


class KnowledgeBase:
    """Typed lexicon of mention surfaces with harness-side ablation.

    Each surface maps to exactly one base type (ambiguity is a hard error
    at construction). Ablated entries are invisible to ``lookup`` until
    completed; completion also accepts brand-new entries.
    """

    def __init__(self, mentions: Iterable[Mention] = ()) -> None:
        self._entries: dict[tuple[str, ...], str] = {}
        self._frequencies: dict[tuple[str, ...], int] = {}
        self._ablated: dict[tuple[str, ...], None] = {}
        self.completion_count = 0
        for m in mentions:
            self.add(m.surface, m.concept_type, m.frequency)

    def add(self, surface: tuple[str, ...], concept_type: str, frequency: int = 1) -> None:
        require_base_type(concept_type)
        existing = self._entries.get(surface)
        if existing is not None and existing != concept_type:
            raise DataError(
                f"KB ambiguity: surface {' '.join(surface)!r} mapped to both "
                f"{existing} and {concept_type}"
            )
        self._entries[surface] = concept_type
        self._frequencies[surface] = frequency

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, surface: tuple[str, ...]) -> bool:
        return self.lookup(surface) is not None

    def lookup(self, surface: Sequence[str]) -> str | None:
        """Visible-entry lookup; ablated and unknown surfaces return None."""
        key = tuple(surface)
        if key in self._ablated:
            return None
        return self._entries.get(key)

    def holds(self, surface: Sequence[str]) -> bool:
        """Whether the surface exists at all, ablated or not."""
        return tuple(surface) in self._entries

    def type_of(self, surface: Sequence[str]) -> str | None:
        """Entry type regardless of ablation (harness-side view)."""
        return self._entries.get(tuple(surface))

    def ablate(self, surfaces: Iterable[tuple[str, ...]]) -> int:
        count = 0
        for surface in surfaces:
            if surface in self._entries and surface not in self._ablated:
                self._ablated[surface] = None
                count += 1
        return count

    def complete(self, surface: Sequence[str], concept_type: str, frequency: int = 1) -> None:
        """Make a surface visible: un-ablate it, or add a new entry."""
        key = tuple(surface)
        if key in self._ablated:
            del self._ablated[key]
        else:
            self.add(key, concept_type, frequency)
        self.completion_count += 1

    def is_ablated(self, surface: Sequence[str]) -> bool:
        return tuple(surface) in self._ablated

    @property
    def ablated_count(self) -> int:
        return len(self._ablated)

    @property
    def ablated_surfaces(self) -> list[tuple[str, ...]]:
        return list(self._ablated)

    def frequency_of(self, surface: Sequence[str]) -> int:
        return self._frequencies.get(tuple(surface), 0)

    def visible_entries(self) -> Iterator[tuple[tuple[str, ...], str]]:
        for surface, ctype in self._entries.items():
            if surface not in self._ablated:
                yield surface, ctype

    def entries(self) -> Iterator[tuple[tuple[str, ...], str]]:
        yield from self._entries.items()

    def visible_index(self) -> SurfaceIndex:
        """Gazetteer over visible entries, for feature extraction."""
        return SurfaceIndex(self.visible_entries())

    def visible_surfaces(self) -> set[tuple[str, ...]]:
        return {surface for surface, _ in self.visible_entries()}

    def save(self, path: str | Path) -> None:
        lines = ["# surface\ttype\tfrequency\tablated"]
        for surface, ctype in self._entries.items():
            flag = 1 if surface in self._ablated else 0
            lines.append(
                f"{' '.join(surface)}\t{ctype}\t{self._frequencies[surface]}\t{flag}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        kb = cls()
        ablated = []
        path = Path(path)
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            surface = tokenize(parts[0])
            kb.add(surface, parts[1], int(parts[2]))
            if parts[3] == "1":
                ablated.append(surface)
        kb.ablate(ablated)
        return kb


# ---------------------------------------------------------------------------
# Synthetic mention inventories (configurable corpus size without scraping)
# ---------------------------------------------------------------------------

_ONSETS = ("b", "br", "c", "ch", "cr", "d", "f", "fl", "g", "gr", "k", "l",
           "m", "n", "p", "pl", "r", "s", "sh", "st", "t", "tr", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou", "oa")
_CODAS = ("", "l", "m", "n", "r", "s", "sh", "t", "la", "ne", "ra", "to")


def synthesize_mentions(
    counts: Mapping[str, int],
    seed: int,
    multi_token_share: float = 0.2,
) -> list[Mention]:
    """Generate a synthetic lexicon with pronounceable nonce surfaces.

    Surfaces are globally unique, frequency follows a rank power law, and
    roughly ``multi_token_share`` of each type are two-token surfaces.
    Useful for scaling experiments past the bundled fixture lexicon.
    """
    rng = random.Random(seed)
    taken: set[tuple[str, ...]] = set()
    out: list[Mention] = []

    def word() -> str:
        return "".join(
            rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS)
            for _ in range(rng.randint(1, 2))
        )

    for ctype in BASE_TYPES:
        n = counts.get(ctype, 0)
        made = 0
        while made < n:
            if rng.random() < multi_token_share:
                surface = (word(), word())
            else:
                surface = (word(),)
            if surface in taken:
                continue
            taken.add(surface)
            made += 1
            frequency = max(1, int(1000 / made**0.8))
            out.append(Mention(surface=surface, concept_type=ctype, frequency=frequency))
    return out
