"""Model adaptation: trigger policy, replay-based training-set synthesis,
fine-tuning, and the bookkeeping around it (STM clearing, history growth).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .acquisition import KnowledgeStore
from .concepts import TaggedUtterance
from .corpus import _WeightedPool, render_pattern
from .errors import ConfigError
from .memory import ShortTermMemory
from .resources import KnowledgeBase, Mention, Pattern
from .tagger import TaggerModel, TrainConfig, fine_tune

REPLAY_MODES = ("RPM", "RM")


@dataclass(frozen=True)
class AdaptationPolicy:
    """When to fine-tune and how to compose the adaptation set.

    A threshold of None disables that condition; at least one must be
    active. ``generation_budget`` examples are rendered per adaptation,
    on top of the verbatim collected examples.
    """

    min_new_mentions: int | None = 5
    min_new_patterns: int | None = 10
    min_new_examples: int | None = 50
    replay_mode: str = "RPM"
    generation_budget: int = 1000
    p_new_mention: float = 0.5

    def __post_init__(self) -> None:
        if self.replay_mode not in REPLAY_MODES:
            raise ConfigError(f"unknown replay mode {self.replay_mode!r}")
        if self.generation_budget < 1:
            raise ConfigError("generation budget must be >= 1")
        if all(
            t is None
            for t in (self.min_new_mentions, self.min_new_patterns, self.min_new_examples)
        ):
            raise ConfigError("at least one adaptation threshold must be set")


def should_adapt(store: KnowledgeStore, policy: AdaptationPolicy) -> bool:
    """Pure threshold check over the store's counters."""
    mentions, patterns, examples = store.counters
    return bool(fired_conditions(mentions, patterns, examples, policy))


def fired_conditions(
    mentions: int, patterns: int, examples: int, policy: AdaptationPolicy
) -> list[str]:
    fired = []
    if policy.min_new_mentions is not None and mentions >= policy.min_new_mentions:
        fired.append("new_mentions")
    if policy.min_new_patterns is not None and patterns >= policy.min_new_patterns:
        fired.append("new_patterns")
    if policy.min_new_examples is not None and examples >= policy.min_new_examples:
        fired.append("new_examples")
    return fired


class ReplayHistory:
    """Patterns and mentions from initial training and past adaptations."""

    def __init__(self, patterns: Iterable[Pattern], mentions: Iterable[Mention]):
        self.patterns: list[Pattern] = list(patterns)
        self.mentions: list[Mention] = list(mentions)
        self._pools: dict[str, _WeightedPool] | None = None

    def extend(self, patterns: Iterable[Pattern], mentions: Iterable[Mention]) -> None:
        self.patterns.extend(patterns)
        self.mentions.extend(mentions)
        self._pools = None

    def mention_pools(self) -> dict[str, _WeightedPool]:
        if self._pools is None:
            grouped: dict[str, list[Mention]] = {}
            for m in self.mentions:
                grouped.setdefault(m.concept_type, []).append(m)
            self._pools = {t: _WeightedPool(ms) for t, ms in grouped.items()}
        return self._pools


def _group_by_type(mentions: Iterable[Mention]) -> dict[str, list[Mention]]:
    grouped: dict[str, list[Mention]] = {}
    for m in mentions:
        grouped.setdefault(m.concept_type, []).append(m)
    return grouped


def build_train_learn(
    store: KnowledgeStore,
    history: ReplayHistory,
    policy: AdaptationPolicy,
    rng: random.Random,
) -> list[TaggedUtterance]:
    """Compose the adaptation set: generated replay plus collected examples.

    RM (replay on mentions): every example uses a pattern drawn uniformly
    from history plus new patterns, and each type-compatible slot draws a
    new mention with probability ``p_new_mention``.

    RPM (replay on patterns and mentions): the same novelty budget is
    split between patterns and mentions — half the examples showcase a
    new pattern filled purely from history, the other half follow the RM
    slot rule on a history pattern. A single new mention therefore shows
    up about half as often as under RM.
    """
    new_patterns = list(store.new_patterns.values())
    new_by_type = _group_by_type(store.new_mentions.values())
    history_pools = history.mention_pools()
    rm_pattern_pool = history.patterns + new_patterns
    if not rm_pattern_pool:
        raise ConfigError("no pattern available to generate the adaptation set")
    if not history.patterns:
        raise ConfigError("empty replay history: no initial patterns")

    def draw_mention(slot_type: str, allow_new: bool) -> Mention:
        if allow_new:
            pool = new_by_type.get(slot_type)
            if pool and rng.random() < policy.p_new_mention:
                return rng.choice(pool)
        hist = history_pools.get(slot_type)
        if hist is None:
            new_pool = new_by_type.get(slot_type)
            if new_pool:
                return rng.choice(new_pool)
            raise ConfigError(f"no mention of type {slot_type} available for replay")
        return hist.draw(rng)

    out: list[TaggedUtterance] = []
    for _ in range(policy.generation_budget):
        if policy.replay_mode == "RM":
            pattern = rng.choice(rm_pattern_pool)
            allow_new = True
        else:  # RPM
            if rng.random() < 0.5:
                # pattern-novelty half: new pattern (when one exists),
                # slots filled from history only
                pattern = rng.choice(new_patterns or history.patterns)
                allow_new = False
            else:
                pattern = rng.choice(history.patterns)
                allow_new = True
        bindings = {
            slot.position: draw_mention(slot.base_type, allow_new)
            for slot in pattern.open_slots
        }
        out.append(render_pattern(pattern, bindings))
    out.extend(store.new_examples)
    return out


@dataclass(frozen=True)
class AdaptationEvent:
    """One fine-tuning of the long-term model."""

    index: int
    trigger: str
    dialogue_index: int
    train_size: int
    generated: int
    collected_examples: int
    new_mention_utterances: int
    new_pattern_utterances: int
    stm_cleared: int
    pre_dev_f1: float
    post_dev_f1: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "trigger": self.trigger,
            "dialogue_index": self.dialogue_index,
            "train_size": self.train_size,
            "generated": self.generated,
            "collected_examples": self.collected_examples,
            "new_mention_utterances": self.new_mention_utterances,
            "new_pattern_utterances": self.new_pattern_utterances,
            "stm_cleared": self.stm_cleared,
            "pre_dev_f1": round(self.pre_dev_f1, 6),
            "post_dev_f1": round(self.post_dev_f1, 6),
        }


def adapt(
    model: TaggerModel,
    stm: ShortTermMemory,
    store: KnowledgeStore,
    dev: Sequence[TaggedUtterance],
    policy: AdaptationPolicy,
    history: ReplayHistory,
    config: TrainConfig,
    kb: KnowledgeBase,
    rng: random.Random,
    dialogue_index: int,
    pre_dev_f1: float,
) -> tuple[TaggerModel, AdaptationEvent, list[TaggedUtterance]]:
    """Fine-tune on a freshly composed adaptation set and reset short-term state.

    Returns the new model, the event record, and the adaptation set (for
    optional audit dumps). The STM is cleared; store counters reset with
    the acquired resources moving into the replay history.
    """
    mentions, patterns, examples = store.counters
    trigger = "+".join(fired_conditions(mentions, patterns, examples, policy)) or "forced"
    new_surfaces = set(store.new_mentions.keys())
    new_pattern_ids = {p.id for p in store.new_patterns.values()}

    train_set = build_train_learn(store, history, policy, rng)
    generated = policy.generation_budget
    with_new_mention = 0
    with_new_pattern = 0
    for utt in train_set[:generated]:
        surfaces = {tuple(s.split(" ")) for s, _ in utt.provenance.mention_splits}
        if surfaces & new_surfaces:
            with_new_mention += 1
        if utt.provenance.pattern_id in new_pattern_ids:
            with_new_pattern += 1

    new_model, report = fine_tune(model, train_set, dev, config, kb=kb)
    stm_size = len(stm)
    stm.clear()
    acquired_patterns, acquired_mentions, _examples = store.reset_on_adaptation()
    history.extend(acquired_patterns, acquired_mentions)

    event = AdaptationEvent(
        index=new_model.version,
        trigger=trigger,
        dialogue_index=dialogue_index,
        train_size=len(train_set),
        generated=generated,
        collected_examples=len(train_set) - generated,
        new_mention_utterances=with_new_mention,
        new_pattern_utterances=with_new_pattern,
        stm_cleared=stm_size,
        pre_dev_f1=pre_dev_f1,
        post_dev_f1=report["dev_f1"],
    )
    return new_model, event, train_set
