"""Knowledge acquisition from dialogue: error detection, rephrase-based
labeling of the initial query, KB completion, and the store of newly
collected mentions, patterns, and training examples.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .concepts import (
    Concept,
    NEGATIVE_PREFIX,
    Provenance,
    SurfaceIndex,
    TaggedUtterance,
    base_type,
    find_surface_matches,
    has_negation_cue,
)
from .errors import SlotLabError
from .memory import ShortTermMemory
from .resources import SPLIT_ACQUIRED, KnowledgeBase, Mention, Pattern, bundled_path


class AcquisitionError(SlotLabError):
    """Extraction contract violations (e.g. pattern from a concept-free utterance)."""


# ---------------------------------------------------------------------------
# Misunderstanding detection
# ---------------------------------------------------------------------------

MISUNDERSTANDING_MARKERS: tuple[str, ...] = ("wrong", "not what i", "misunderstood")


def detect_misunderstanding(
    tokens: Sequence[str],
    markers: Sequence[str] = MISUNDERSTANDING_MARKERS,
) -> bool:
    """True iff the utterance matches a configured complaint marker."""
    text = " ".join(tokens)
    return any(marker in text for marker in markers)


# ---------------------------------------------------------------------------
# Common-chunk comparison of initial query and rephrase
# ---------------------------------------------------------------------------


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    p = Path(path) if path is not None else bundled_path("stopwords.txt")
    return frozenset(w for w in p.read_text().split() if w)


def common_chunks(
    initial: Sequence[str],
    paraphrase: Sequence[str],
    stopwords: frozenset[str],
) -> list[tuple[str, ...]]:
    """Maximal shared content chunks of the two utterances.

    Stopwords are removed from both sides first; a chunk is a maximal run
    of remaining tokens that is contiguous in BOTH original utterances
    (matching is exact, no stemming, so 'recipes' never matches 'recipe').
    Chunks are ordered by their position in the initial query.
    """
    a = [(i, tok) for i, tok in enumerate(initial) if tok not in stopwords]
    b = [(j, tok) for j, tok in enumerate(paraphrase) if tok not in stopwords]
    if not a or not b:
        return []

    # longest-common-substring style DP with original-adjacency required
    runs: list[tuple[int, int, int]] = []  # (length, a_index_start, a_filtered_start)
    length = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        ai, atok = a[i - 1]
        for j in range(1, len(b) + 1):
            bj, btok = b[j - 1]
            if atok != btok:
                continue
            prev = length[i - 1][j - 1]
            contiguous = (
                prev > 0
                and a[i - 2][0] == ai - 1
                and b[j - 2][0] == bj - 1
            )
            length[i][j] = prev + 1 if contiguous else 1

    candidates = []
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            k = length[i][j]
            if k == 0:
                continue
            extended = (
                i < len(a)
                and j < len(b)
                and length[i + 1][j + 1] == k + 1
            )
            if not extended:
                start = i - k  # filtered index of run start in a
                candidates.append((k, a[start][0], start))

    # non-overlapping cover of the initial query, longest chunks first
    candidates.sort(key=lambda c: (-c[0], c[1]))
    taken: set[int] = set()
    chosen: list[tuple[int, tuple[str, ...]]] = []
    for k, a_start, f_start in candidates:
        positions = [a[f_start + off][0] for off in range(k)]
        if any(p in taken for p in positions):
            continue
        taken.update(positions)
        chosen.append((a_start, tuple(tok for _, tok in a[f_start : f_start + k])))
    chosen.sort(key=lambda c: c[0])

    seen: set[tuple[str, ...]] = set()
    out: list[tuple[str, ...]] = []
    for _, chunk in chosen:
        if chunk not in seen:
            seen.add(chunk)
            out.append(chunk)
    return out


# ---------------------------------------------------------------------------
# Labeling the initial query
# ---------------------------------------------------------------------------

class OracleView(Protocol):
    """Harness-held full-lexicon view used to simulate KB completion."""

    def type_of(self, surface: Sequence[str]) -> str | None: ...


def kb_complete(kb: KnowledgeBase, surface: Sequence[str], oracle: OracleView) -> str | None:
    """Simulated KB completion for a surface the system cannot see.

    If the surface is already visible this is a no-op returning its type;
    if the oracle knows it, the entry is made visible (un-ablated or
    added) and its type returned; otherwise None.
    """
    key = tuple(surface)
    visible = kb.lookup(key)
    if visible is not None:
        return visible
    known = oracle.type_of(key)
    if known is None:
        return None
    kb.complete(key, known)
    return known


@dataclass
class CorrectionAttempt:
    """One self-correction pass after a detected misunderstanding."""

    initial: tuple[str, ...]
    paraphrase: tuple[str, ...]
    chunks: list[tuple[str, ...]]
    outcome: str  # labeled | kb_miss | no_chunks | user_abandoned
    labeled: TaggedUtterance | None = None
    failed_chunk: tuple[str, ...] | None = None
    completions: list[tuple[str, str]] = field(default_factory=list)

    def reject(self) -> None:
        """The user turned the correction down: nothing may be learned."""
        self.outcome = "user_abandoned"
        self.labeled = None


def label_query(
    initial: Sequence[str],
    chunks: Sequence[tuple[str, ...]],
    kb: KnowledgeBase,
    oracle: OracleView,
    paraphrase: Sequence[str] = (),
    dialogue_index: int | None = None,
) -> CorrectionAttempt:
    """Type every chunk via the KB (completing it at most once per chunk)
    and tag the initial query, flipping polarity under a negation cue.
    """
    attempt = CorrectionAttempt(
        initial=tuple(initial),
        paraphrase=tuple(paraphrase),
        chunks=list(chunks),
        outcome="no_chunks",
    )
    if not chunks:
        return attempt

    types: dict[tuple[str, ...], str] = {}
    for chunk in chunks:
        ctype = kb.lookup(chunk)
        if ctype is None:
            was_hidden = not kb.holds(chunk) or kb.is_ablated(chunk)
            ctype = kb_complete(kb, chunk, oracle)
            if ctype is not None and was_hidden:
                attempt.completions.append((" ".join(chunk), ctype))
        if ctype is None:
            attempt.outcome = "kb_miss"
            attempt.failed_chunk = chunk
            return attempt
        types[chunk] = ctype

    index = SurfaceIndex((chunk, types[chunk]) for chunk in types)
    concepts = []
    for match in find_surface_matches(initial, index):
        label = match.label
        if has_negation_cue(initial, match.span[0]):
            label = NEGATIVE_PREFIX + label
        concepts.append(Concept(label, match.mention, match.span))
    attempt.outcome = "labeled"
    attempt.labeled = TaggedUtterance.from_concepts(
        initial,
        concepts,
        provenance=Provenance(source="acquired", dialogue_index=dialogue_index),
    )
    return attempt


# ---------------------------------------------------------------------------
# Pattern extraction and the knowledge store
# ---------------------------------------------------------------------------


def extract_pattern(labeled: TaggedUtterance) -> Pattern:
    """Generalize a labeled utterance into a slotted template.

    Concept spans become typed placeholders (negative concepts yield
    negative-polarity slots); the template inherits the utterance's
    normalized tokens, so equal queries up to mentions collapse to one
    pattern.
    """
    concepts = labeled.concepts
    if not concepts:
        raise AcquisitionError("cannot extract a pattern from an utterance with no concepts")
    by_start = {c.span[0]: c for c in concepts}
    template: list[str] = []
    i = 0
    while i < len(labeled.tokens):
        concept = by_start.get(i)
        if concept is None:
            template.append(labeled.tokens[i])
            i += 1
            continue
        template.append("$" + concept.label)
        i = concept.span[1]
    pattern_id = "acq-" + hashlib.sha1(" ".join(template).encode()).hexdigest()[:10]
    return Pattern(id=pattern_id, template=tuple(template), split=SPLIT_ACQUIRED)


@dataclass
class AcquisitionDelta:
    new_mentions: int = 0
    new_patterns: int = 0
    new_examples: int = 0
    added_mentions: list[Mention] = field(default_factory=list)
    added_pattern: Pattern | None = None

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.new_mentions, self.new_patterns, self.new_examples)


class KnowledgeStore:
    """New knowledge collected since the last model adaptation.

    Novelty baselines: mentions are new relative to the lexicon visible at
    run start plus everything already collected; patterns are new relative
    to the system's own generation patterns plus prior extractions.
    """

    def __init__(
        self,
        known_patterns: Iterable[Pattern] = (),
        known_mention_surfaces: Iterable[tuple[str, ...]] = (),
    ) -> None:
        self.known_pattern_keys: set[tuple[str, ...]] = {
            p.extraction_key() for p in known_patterns
        }
        self.known_mentions: set[tuple[str, ...]] = set(known_mention_surfaces)
        self.new_mentions: dict[tuple[str, ...], Mention] = {}
        self.new_patterns: dict[tuple[str, ...], Pattern] = {}
        self.new_examples: list[TaggedUtterance] = []

    @property
    def counters(self) -> tuple[int, int, int]:
        return (len(self.new_mentions), len(self.new_patterns), len(self.new_examples))

    def record(
        self,
        labeled: TaggedUtterance,
        stm: ShortTermMemory,
        dialogue_index: int = 0,
    ) -> AcquisitionDelta:
        """Fold one labeled query into the store.

        Unseen mentions are collected and pushed into the STM; the
        extracted pattern is collected if unseen, otherwise the utterance
        itself becomes a new training example.
        """
        delta = AcquisitionDelta()
        for concept in labeled.concepts:
            surface = concept.mention
            if surface in self.known_mentions or surface in self.new_mentions:
                continue
            mention = Mention(
                surface=surface, concept_type=base_type(concept.label), split=SPLIT_ACQUIRED
            )
            self.new_mentions[surface] = mention
            stm.add(surface, mention.concept_type, dialogue_index)
            delta.added_mentions.append(mention)
            delta.new_mentions += 1

        pattern = extract_pattern(labeled)
        key = pattern.extraction_key()
        if key in self.known_pattern_keys or key in self.new_patterns:
            self.new_examples.append(labeled)
            delta.new_examples += 1
        else:
            self.new_patterns[key] = pattern
            delta.added_pattern = pattern
            delta.new_patterns += 1
        return delta

    def reset_on_adaptation(self) -> tuple[list[Pattern], list[Mention], list[TaggedUtterance]]:
        """Counters drop to zero; acquisitions become known history."""
        patterns = list(self.new_patterns.values())
        mentions = list(self.new_mentions.values())
        examples = list(self.new_examples)
        self.known_pattern_keys.update(self.new_patterns.keys())
        self.known_mentions.update(self.new_mentions.keys())
        self.new_patterns.clear()
        self.new_mentions.clear()
        self.new_examples.clear()
        return patterns, mentions, examples
