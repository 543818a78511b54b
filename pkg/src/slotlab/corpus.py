"""Dataset machinery: resource splits, pattern rendering, corpus generation.

A run starts from a SplitBundle (disjoint INITIAL / LEARN / UNKNOWN pattern
and mention sets, derived deterministically from a seed), from which every
dataset is rendered: pure-pool test sets, mixed simulation/dev sets, and
the initial training corpus.
"""

from __future__ import annotations

import bisect
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .concepts import (
    BASE_TYPES,
    NEGATIVE_PREFIX,
    Provenance,
    TaggedUtterance,
    tokenize,
)
from .errors import ConfigError, DataError, SlotLabError
from .resources import (
    SPLIT_INITIAL,
    SPLIT_LEARN,
    SPLIT_UNKNOWN,
    KnowledgeBase,
    Mention,
    Pattern,
    parse_placeholder,
)


class RenderError(SlotLabError):
    """A pattern could not be rendered with the given bindings."""


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

SPLIT_NAMES = (SPLIT_INITIAL, SPLIT_LEARN, SPLIT_UNKNOWN)


@dataclass(frozen=True)
class SplitBundle:
    """Disjoint three-way split of patterns and mentions."""

    patterns: dict[str, tuple[Pattern, ...]]
    mentions: dict[str, tuple[Mention, ...]]
    seed: int

    def pattern_pool(self, *splits: str) -> list[Pattern]:
        pool: list[Pattern] = []
        for split in splits:
            pool.extend(self.patterns[split])
        return pool

    def mention_pool(self, *splits: str) -> list[Mention]:
        pool: list[Mention] = []
        for split in splits:
            pool.extend(self.mentions[split])
        return pool


def _cut(n: int, ratios: Sequence[float]) -> tuple[int, int]:
    c1 = int(round(n * ratios[0]))
    c2 = int(round(n * (ratios[0] + ratios[1])))
    return c1, c2


def _check_ratios(ratios: Sequence[float], what: str) -> None:
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"{what} ratios must be three non-negative fractions")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"{what} ratios must sum to 1, got {ratios}")


def split_resources(
    patterns: Sequence[Pattern],
    mentions: Sequence[Mention],
    pattern_ratios: Sequence[float],
    mention_ratios: Sequence[float] | None = None,
    seed: int = 0,
) -> SplitBundle:
    """Deterministic disjoint INITIAL/LEARN/UNKNOWN split.

    Patterns are shuffled as one list; mentions are shuffled within each
    concept type so every split keeps coverage of all 8 types.
    """
    if not patterns:
        raise ConfigError("cannot split an empty pattern set")
    if not mentions:
        raise ConfigError("cannot split an empty mention set")
    mention_ratios = mention_ratios or pattern_ratios
    _check_ratios(pattern_ratios, "pattern")
    _check_ratios(mention_ratios, "mention")

    rng = random.Random(seed)
    shuffled = list(patterns)
    rng.shuffle(shuffled)
    c1, c2 = _cut(len(shuffled), pattern_ratios)
    pattern_splits = {
        SPLIT_INITIAL: tuple(p.with_split(SPLIT_INITIAL) for p in shuffled[:c1]),
        SPLIT_LEARN: tuple(p.with_split(SPLIT_LEARN) for p in shuffled[c1:c2]),
        SPLIT_UNKNOWN: tuple(p.with_split(SPLIT_UNKNOWN) for p in shuffled[c2:]),
    }

    mention_splits: dict[str, list[Mention]] = {s: [] for s in SPLIT_NAMES}
    for ctype in BASE_TYPES:
        typed = [m for m in mentions if m.concept_type == ctype]
        rng.shuffle(typed)
        c1, c2 = _cut(len(typed), mention_ratios)
        mention_splits[SPLIT_INITIAL].extend(m.with_split(SPLIT_INITIAL) for m in typed[:c1])
        mention_splits[SPLIT_LEARN].extend(m.with_split(SPLIT_LEARN) for m in typed[c1:c2])
        mention_splits[SPLIT_UNKNOWN].extend(m.with_split(SPLIT_UNKNOWN) for m in typed[c2:])

    return SplitBundle(
        patterns=pattern_splits,
        mentions={s: tuple(v) for s, v in mention_splits.items()},
        seed=seed,
    )


def split_in_two(
    patterns: Sequence[Pattern],
    mentions: Sequence[Mention],
    first_fraction: float,
    seed: int,
) -> tuple[tuple[list[Pattern], list[Mention]], tuple[list[Pattern], list[Mention]]]:
    """Split one pool into two disjoint halves (stratified for mentions).

    Used to hold part of INITIAL out of initial training so the dev set
    mixes seen and unseen resources.
    """
    if not (0 < first_fraction < 1):
        raise ConfigError("first_fraction must be in (0, 1)")
    rng = random.Random(seed)
    shuffled_p = list(patterns)
    rng.shuffle(shuffled_p)
    cut_p = max(1, int(round(len(shuffled_p) * first_fraction)))
    first_m: list[Mention] = []
    second_m: list[Mention] = []
    for ctype in BASE_TYPES:
        typed = [m for m in mentions if m.concept_type == ctype]
        rng.shuffle(typed)
        cut = max(1, int(round(len(typed) * first_fraction))) if typed else 0
        first_m.extend(typed[:cut])
        second_m.extend(typed[cut:])
    return (shuffled_p[:cut_p], first_m), (shuffled_p[cut_p:], second_m)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_pattern(
    pattern: Pattern,
    bindings: Mapping[int, Mention],
    dialogue_index: int | None = None,
    new_pattern: bool = False,
    new_mention: bool = False,
) -> TaggedUtterance:
    """Instantiate a pattern: placeholders become tagged mention surfaces.

    ``bindings`` maps template positions of open slots to mentions of the
    slot's base type; literal slots render their fixed surface and consume
    no binding.
    """
    tokens: list[str] = []
    tags: list[str] = []
    mention_splits: list[tuple[str, str]] = []
    for i, token in enumerate(pattern.template):
        parsed = parse_placeholder(token)
        if parsed is None:
            tokens.append(token)
            tags.append("O")
            continue
        base, negative, literal = parsed
        label = NEGATIVE_PREFIX + base if negative else base
        if literal is not None:
            surface: tuple[str, ...] = literal
            split = pattern.split or ""
        else:
            mention = bindings.get(i)
            if mention is None:
                raise RenderError(f"pattern {pattern.id!r}: no binding for slot at {i}")
            if mention.concept_type != base:
                raise RenderError(
                    f"pattern {pattern.id!r}: slot at {i} wants {base}, "
                    f"binding is {mention.concept_type} ({mention.text!r})"
                )
            surface = mention.surface
            split = mention.split or ""
        tags.append("B-" + label)
        tags.extend(["I-" + label] * (len(surface) - 1))
        tokens.extend(surface)
        mention_splits.append((" ".join(surface), split))
    return TaggedUtterance(
        tokens=tuple(tokens),
        tags=tuple(tags),
        provenance=Provenance(
            source="generated",
            pattern_id=pattern.id,
            pattern_split=pattern.split,
            mention_splits=tuple(mention_splits),
            new_pattern=new_pattern,
            new_mention=new_mention,
            dialogue_index=dialogue_index,
        ),
    )


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


class _WeightedPool:
    """Frequency-weighted sampler over mentions of one type."""

    def __init__(self, mentions: Sequence[Mention]):
        self.mentions = list(mentions)
        self.cumulative: list[float] = []
        total = 0.0
        for m in self.mentions:
            total += max(1, m.frequency)
            self.cumulative.append(total)
        self.total = total

    def draw(self, rng: random.Random) -> Mention:
        x = rng.random() * self.total
        return self.mentions[bisect.bisect_left(self.cumulative, x)]


@dataclass(frozen=True)
class Composition:
    """What a generated dataset is made of.

    Base draws are frequency-weighted (everyday vocabulary dominates);
    the per-utterance novelty draw picks uniformly from the new pool so
    rare learnable items actually surface.
    """

    name: str
    base_patterns: tuple[Pattern, ...]
    base_mentions: tuple[Mention, ...]
    new_patterns: tuple[Pattern, ...] = ()
    new_mentions: tuple[Mention, ...] = ()
    p_new_pattern: float = 0.0
    p_new_mention: float = 0.0


def _by_type(mentions: Iterable[Mention]) -> dict[str, list[Mention]]:
    pools: dict[str, list[Mention]] = {}
    for m in mentions:
        pools.setdefault(m.concept_type, []).append(m)
    return pools


def generate_dataset(
    composition: Composition,
    size: int,
    seed: int,
) -> list[TaggedUtterance]:
    """Render ``size`` utterances per the composition, deterministically."""
    if not composition.base_patterns and composition.p_new_pattern < 1.0:
        raise ConfigError(f"{composition.name}: empty base pattern pool")
    if composition.p_new_pattern > 0.0 and not composition.new_patterns:
        raise ConfigError(f"{composition.name}: empty new pattern pool")
    if composition.p_new_mention > 0.0 and not composition.new_mentions:
        raise ConfigError(f"{composition.name}: empty new mention pool")

    rng = random.Random(seed)
    base_by_type = {t: _WeightedPool(ms) for t, ms in _by_type(composition.base_mentions).items()}
    new_by_type = _by_type(composition.new_mentions)

    out: list[TaggedUtterance] = []
    for _ in range(size):
        use_new_pattern = (
            composition.p_new_pattern > 0.0 and rng.random() < composition.p_new_pattern
        )
        pattern = rng.choice(
            list(composition.new_patterns) if use_new_pattern else list(composition.base_patterns)
        )
        open_slots = pattern.open_slots
        new_slot_pos = -1
        if composition.p_new_mention > 0.0 and rng.random() < composition.p_new_mention:
            eligible = [s for s in open_slots if new_by_type.get(s.base_type)]
            if eligible:
                new_slot_pos = rng.choice(eligible).position
        bindings: dict[int, Mention] = {}
        for slot in open_slots:
            if slot.position == new_slot_pos:
                bindings[slot.position] = rng.choice(new_by_type[slot.base_type])
                continue
            pool = base_by_type.get(slot.base_type)
            if pool is None:
                raise ConfigError(
                    f"{composition.name}: no base mention of type {slot.base_type} "
                    f"for pattern {pattern.id!r}"
                )
            bindings[slot.position] = pool.draw(rng)
        out.append(
            render_pattern(
                pattern,
                bindings,
                new_pattern=use_new_pattern,
                new_mention=new_slot_pos >= 0,
            )
        )
    return out


# Standard compositions ------------------------------------------------------


def simulation_composition(bundle: SplitBundle, p_new_pattern: float, p_new_mention: float) -> Composition:
    return Composition(
        name="simulation",
        base_patterns=bundle.patterns[SPLIT_INITIAL],
        base_mentions=bundle.mentions[SPLIT_INITIAL],
        new_patterns=bundle.patterns[SPLIT_LEARN],
        new_mentions=bundle.mentions[SPLIT_LEARN],
        p_new_pattern=p_new_pattern,
        p_new_mention=p_new_mention,
    )


def initial_test_composition(bundle: SplitBundle) -> Composition:
    return Composition(
        name="test_initial",
        base_patterns=bundle.patterns[SPLIT_INITIAL],
        base_mentions=bundle.mentions[SPLIT_INITIAL],
    )


def learn_test_composition(bundle: SplitBundle, p_new_pattern: float, p_new_mention: float) -> Composition:
    return Composition(
        name="test_learn",
        base_patterns=bundle.patterns[SPLIT_INITIAL],
        base_mentions=bundle.mentions[SPLIT_INITIAL],
        new_patterns=bundle.patterns[SPLIT_LEARN],
        new_mentions=bundle.mentions[SPLIT_LEARN],
        p_new_pattern=p_new_pattern,
        p_new_mention=p_new_mention,
    )


def unknown_test_composition(bundle: SplitBundle) -> Composition:
    return Composition(
        name="test_unknown",
        base_patterns=bundle.patterns[SPLIT_UNKNOWN],
        base_mentions=bundle.mentions[SPLIT_UNKNOWN],
    )


# ---------------------------------------------------------------------------
# KB ablation
# ---------------------------------------------------------------------------


def ablate_kb(
    kb: KnowledgeBase,
    fraction: float,
    frequencies: Mapping[tuple[str, ...], int] | None = None,
) -> KnowledgeBase:
    """Mark the ``fraction`` least-frequent ingredient entries ablated.

    Only ingredient-typed entries are touched; fraction 0 is a no-op. The
    entry count actually removed is available as ``kb.ablated_count``.
    """
    if not (0 <= fraction < 1):
        raise ConfigError(f"ablation fraction must be in [0, 1), got {fraction}")
    if fraction == 0:
        return kb
    ingredients = [s for s, t in kb.entries() if t == "ingredient"]

    def freq(surface: tuple[str, ...]) -> int:
        if frequencies is not None:
            return frequencies.get(surface, 0)
        return kb.frequency_of(surface)

    ingredients.sort(key=lambda s: (freq(s), s))
    k = int(round(len(ingredients) * fraction))
    kb.ablate(ingredients[:k])
    return kb


# ---------------------------------------------------------------------------
# Dataset files: CoNLL two-column blocks + provenance sidecar
# ---------------------------------------------------------------------------


def provenance_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".prov.jsonl")


def save_dataset(utterances: Sequence[TaggedUtterance], path: str | Path) -> None:
    path = Path(path)
    blocks = []
    for utt in utterances:
        blocks.append("\n".join(f"{tok}\t{tag}" for tok, tag in zip(utt.tokens, utt.tags)))
    path.write_text("\n\n".join(blocks) + "\n")
    with open(provenance_path(path), "w") as fh:
        for i, utt in enumerate(utterances):
            record = {"index": i, **utt.provenance.to_dict()}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path: str | Path, require_provenance: bool = False) -> list[TaggedUtterance]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: dataset file not found")
    provenances: list[Provenance] = []
    prov_file = provenance_path(path)
    if prov_file.exists():
        for lineno, line in enumerate(prov_file.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                provenances.append(Provenance.from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise DataError(f"{prov_file}:{lineno}: bad provenance record: {exc}") from exc
    elif require_provenance:
        raise DataError(f"{prov_file}: provenance sidecar missing")

    utterances: list[TaggedUtterance] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush(lineno: int) -> None:
        if not tokens:
            return
        prov = (
            provenances[len(utterances)]
            if len(utterances) < len(provenances)
            else Provenance(source="external")
        )
        try:
            utterances.append(
                TaggedUtterance(tokens=tuple(tokens), tags=tuple(tags), provenance=prov)
            )
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        tokens.clear()
        tags.clear()

    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.rstrip()
        if not line:
            flush(lineno)
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'token<TAB>tag', got {raw!r}")
        tokens.append(parts[0])
        tags.append(parts[1])
    flush(lineno if utterances or tokens else 0)
    if provenances and len(provenances) != len(utterances):
        raise DataError(
            f"{prov_file}: {len(provenances)} provenance records for "
            f"{len(utterances)} utterances"
        )
    return utterances


def scan_forbidden_splits(
    utterances: Iterable[TaggedUtterance],
    forbidden: frozenset[str] = frozenset({SPLIT_UNKNOWN}),
) -> list[str]:
    """Provenance-based isolation check; returns human-readable violations."""
    violations = []
    for i, utt in enumerate(utterances):
        prov = utt.provenance
        if prov.pattern_split in forbidden:
            violations.append(f"utterance {i}: pattern {prov.pattern_id} is {prov.pattern_split}")
        for surface, split in prov.mention_splits:
            if split in forbidden:
                violations.append(f"utterance {i}: mention {surface!r} is {split}")
    return violations
