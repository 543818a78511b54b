"""Short-term memory: immediately usable mention knowledge between fine-tunes.

The STM stores only mentions and their (positive) concept types. Its
matches are merged with model predictions so corrections from past
dialogues take effect before the model itself has been adapted; the whole
store is cleared whenever the model is fine-tuned.
"""

from __future__ import annotations

from typing import Sequence

from .concepts import (
    Concept,
    SurfaceIndex,
    find_surface_matches,
    is_negative,
    negate,
    require_base_type,
)
from .resources import KnowledgeBase


class ShortTermMemory:
    """surface -> base concept type map with per-entry dialogue indices."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, ...], tuple[str, int]] = {}
        self._index = SurfaceIndex()
        #: bumped on every mutation; lets evaluators cache merged output
        self.state_version = 0

    def add(self, surface: Sequence[str], concept_type: str, dialogue_index: int = 0) -> None:
        """Store a mention; re-adding overwrites type and timestamp."""
        require_base_type(concept_type)
        key = tuple(surface)
        if not key:
            raise ValueError("empty STM surface")
        self._entries[key] = (concept_type, dialogue_index)
        self._index.add(key, concept_type)
        self.state_version += 1

    def clear(self) -> None:
        self._entries.clear()
        self._index = SurfaceIndex()
        self.state_version += 1

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, surface: Sequence[str]) -> bool:
        return tuple(surface) in self._entries

    def type_of(self, surface: Sequence[str]) -> str | None:
        entry = self._entries.get(tuple(surface))
        return entry[0] if entry else None

    def lookup(self, tokens: Sequence[str]) -> list[Concept]:
        """All maximal, non-overlapping occurrences of stored surfaces."""
        if not self._entries:
            return []
        return find_surface_matches(tokens, self._index)

    def entries_snapshot(self) -> list[dict]:
        return [
            {"surface": " ".join(surface), "type": ctype, "added_at": added}
            for surface, (ctype, added) in self._entries.items()
        ]


def _spans_overlap(a: Concept, b: Concept) -> bool:
    return a.span[0] < b.span[1] and b.span[0] < a.span[1]


def _mention_inside(inner: Concept, outer: Concept) -> bool:
    """Token-subsequence containment, required to overlap in the utterance.

    Containment is token-aligned (no partial-word matches) and includes
    equality; the earlier branches of the merge catch the equal cases that
    need different handling.
    """
    if not _spans_overlap(inner, outer):
        return False
    n, m = len(inner.mention), len(outer.mention)
    if n > m:
        return False
    return any(outer.mention[i : i + n] == inner.mention for i in range(m - n + 1))


def merge(
    model_concepts: Sequence[Concept],
    stm_concepts: Sequence[Concept],
    kb: KnowledgeBase,
) -> list[Concept]:
    """Combine model output with STM matches over the same token sequence.

    For each model concept, against each STM match:
      * same mention and same type: keep the model concept;
      * same mention, model type negative: the STM type wins but the
        negative context is preserved (emit the negated STM type);
      * model mention inside the STM mention: the STM's longer match wins;
      * STM mention inside the model mention: keep the model concept if
        its mention is a visible KB entry, otherwise trust the STM;
      * no STM match relates to it: the model concept passes through.

    STM matches overlapping no model concept are appended, so the memory
    can inject mentions the model missed entirely. With an empty STM the
    model output is returned unchanged. The result is deduplicated by
    span, first emission wins.
    """
    if not stm_concepts:
        return list(model_concepts)
    out: list[Concept] = []
    for cm in model_concepts:
        added = False
        for cs in stm_concepts:
            if cm.mention == cs.mention and cm.label == cs.label:
                out.append(cm)
                added = True
            elif cm.mention == cs.mention and is_negative(cm.label):
                out.append(Concept(negate(cs.label), cs.mention, cs.span))
                added = True
            elif _mention_inside(cm, cs):
                out.append(cs)
                added = True
            elif _mention_inside(cs, cm):
                out.append(cm if kb.lookup(cm.mention) is not None else cs)
                added = True
        if not added:
            out.append(cm)
    for cs in stm_concepts:
        if not any(_spans_overlap(cs, cm) for cm in model_concepts):
            out.append(cs)
    seen: set[tuple[int, int]] = set()
    result: list[Concept] = []
    for concept in out:
        if concept.span not in seen:
            seen.add(concept.span)
            result.append(concept)
    return result
