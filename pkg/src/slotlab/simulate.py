"""Rule-based simulated user and the dialogue loop of the production phase.

Each dialogue follows the fixed scenario: the user asks for a recipe with
some criteria; the system answers and reports the concepts it detected;
on a mismatch the user rephrases once ("You misunderstood me. I want a
recipe with ..."), the system tries to correct itself from the rephrase,
and the user either accepts (implicit confirmation) or says goodbye.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .acquisition import (
    CorrectionAttempt,
    KnowledgeStore,
    OracleView,
    common_chunks,
    detect_misunderstanding,
    label_query,
)
from .adaptation import (
    AdaptationEvent,
    AdaptationPolicy,
    ReplayHistory,
    adapt,
    should_adapt,
)
from .concepts import Concept, Provenance, TaggedUtterance, is_negative
from .corpus import save_dataset
from .evaluation import CheckpointEvaluator, EvalRecord, chunk_f1, delta_analysis, save_records
from .memory import ShortTermMemory, merge
from .resources import KnowledgeBase
from .tagger import TaggerModel, TrainConfig

MODES = ("RPM", "RM", "STM_ONLY", "SIMU_UPPER")

CLOSING_TOKENS: tuple[str, ...] = ("great", ",", "thanks")
GOODBYE_TOKENS: tuple[str, ...] = ("goodbye",)
ANSWER_TOKENS: tuple[str, ...] = ("here", "are", "some", "matching", "recipes")

#: dev-F1 drop beyond this (in points) after a fine-tune gets flagged in the log
WARM_START_GUARD = 2.0


@dataclass(frozen=True)
class UserGoal:
    """What the simulated user wants: the gold criteria of its first query."""

    criteria: tuple[Concept, ...]
    utterance: TaggedUtterance

    @classmethod
    def from_utterance(cls, utterance: TaggedUtterance) -> "UserGoal":
        return cls(criteria=tuple(utterance.concepts), utterance=utterance)


@dataclass(frozen=True)
class Turn:
    speaker: str  # "user" | "system"
    tokens: tuple[str, ...]
    concepts: tuple[Concept, ...] | None = None


@dataclass
class DialogueTranscript:
    index: int
    turns: list[Turn]
    outcome: str  # understood_first_try | corrected | abandoned
    attempt: CorrectionAttempt | None = None


@dataclass
class SystemState:
    """Everything the dialogue loop owns and mutates in dialogue order."""

    model: TaggerModel
    stm: ShortTermMemory
    kb: KnowledgeBase
    oracle: OracleView
    store: KnowledgeStore
    stopwords: frozenset[str]

    def understand(self, tokens: Sequence[str]) -> list[Concept]:
        """Model prediction merged with short-term-memory matches."""
        return merge(self.model.predict(tokens), self.stm.lookup(tokens), self.kb)


def verbalize_criteria(criteria: Sequence[Concept]) -> tuple[str, ...]:
    """The user's fixed rephrase with criteria in natural language.

    Positive criteria render as their mention, negative ones as
    "without <mention>", all joined with "and".
    """
    if not criteria:
        raise ValueError("cannot verbalize empty criteria")
    parts: list[list[str]] = []
    for concept in criteria:
        if is_negative(concept.label):
            parts.append(["without", *concept.mention])
        else:
            parts.append(list(concept.mention))
    tokens = "you misunderstood me . i want a recipe with".split()
    body = parts[0]
    for part in parts[1:]:
        body += ["and"] + part
    return tuple(tokens + body + ["."])


def _criteria_keys(concepts: Sequence[Concept]) -> set[tuple[str, tuple[str, ...]]]:
    return {c.key() for c in concepts}


def run_dialogue(
    state: SystemState, goal: UserGoal, index: int = 0
) -> tuple[DialogueTranscript, TaggedUtterance | None]:
    """Play one dialogue; returns the transcript and, when the dialogue
    confirmed an understanding, the labeled initial query to learn from.

    The user's satisfaction test is exact set equality of (type, mention)
    pairs; any mismatch (missing or extra) triggers the rephrase.
    """
    initial = goal.utterance.tokens
    goal_keys = _criteria_keys(goal.criteria)
    reported = state.understand(initial)
    turns = [
        Turn("user", initial),
        Turn("system", ANSWER_TOKENS, tuple(reported)),
    ]

    if _criteria_keys(reported) == goal_keys:
        turns.append(Turn("user", CLOSING_TOKENS))
        labeled = TaggedUtterance.from_concepts(
            initial, reported, Provenance(source="acquired", dialogue_index=index)
        )
        return DialogueTranscript(index, turns, "understood_first_try"), labeled

    rephrase = verbalize_criteria(goal.criteria)
    turns.append(Turn("user", rephrase))
    assert detect_misunderstanding(rephrase)
    chunks = common_chunks(initial, rephrase, state.stopwords)
    attempt = label_query(
        initial, chunks, state.kb, state.oracle, paraphrase=rephrase, dialogue_index=index
    )

    if attempt.outcome == "labeled":
        assert attempt.labeled is not None
        corrected = attempt.labeled.concepts
        turns.append(Turn("system", ANSWER_TOKENS, tuple(corrected)))
        if _criteria_keys(corrected) == goal_keys:
            turns.append(Turn("user", CLOSING_TOKENS))
            return DialogueTranscript(index, turns, "corrected", attempt), attempt.labeled
        attempt.reject()
        turns.append(Turn("user", GOODBYE_TOKENS))
        return DialogueTranscript(index, turns, "abandoned", attempt), None

    # nothing to propose: repeat the first answer, the user gives up
    turns.append(Turn("system", ANSWER_TOKENS, tuple(reported)))
    turns.append(Turn("user", GOODBYE_TOKENS))
    return DialogueTranscript(index, turns, "abandoned", attempt), None


# ---------------------------------------------------------------------------
# The simulated production run
# ---------------------------------------------------------------------------


@dataclass
class RunArtifacts:
    out_dir: Path
    records: list[EvalRecord]
    adaptation_events: list[AdaptationEvent]
    summary: dict
    model: TaggerModel


def _dev_f1(model: TaggerModel, dev: Sequence[TaggedUtterance]) -> float:
    return chunk_f1(dev, [model.predict(u.tokens) for u in dev])


class _EventLog:
    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w")

    def emit(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()


def run_simulation(
    state: SystemState,
    goals: Sequence[UserGoal],
    dev: Sequence[TaggedUtterance],
    evaluator: CheckpointEvaluator,
    policy: AdaptationPolicy,
    train_config: TrainConfig,
    history: ReplayHistory,
    out_dir: str | Path,
    mode: str = "RPM",
    seed: int = 0,
    checkpoint_every: int = 1,
    dump_train_sets: bool = True,
    run_header: dict | None = None,
) -> RunArtifacts:
    """Simulate production: dialogues, acquisition, adaptation, evaluation.

    Fully deterministic for a given (state, goals, seed). Each checkpoint
    emits two evaluation records (model-only view and STM-merged view).
    Partial logs survive crashes: the event log is closed in any case.
    """
    if mode not in ("RPM", "RM", "STM_ONLY"):
        raise ValueError(f"run_simulation cannot execute mode {mode!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    events = _EventLog(out_dir / "events.jsonl")
    records: list[EvalRecord] = []
    adaptation_events: list[AdaptationEvent] = []
    outcomes: Counter[str] = Counter()
    correction_outcomes: Counter[str] = Counter()
    rng = random.Random(seed)
    pre_dev_f1: float | None = None

    def checkpoint(idx: int) -> None:
        for flag in (False, True):
            records.append(
                evaluator.checkpoint(state.model, state.stm, flag, idx, len(adaptation_events))
            )

    try:
        events.emit(
            {
                "event": "run_start",
                "mode": mode,
                "seed": seed,
                "dialogues": len(goals),
                **(run_header or {}),
            }
        )
        checkpoint(0)
        for i, goal in enumerate(goals, start=1):
            transcript, labeled = run_dialogue(state, goal, i)
            outcomes[transcript.outcome] += 1
            events.emit(
                {
                    "event": "dialogue",
                    "index": i,
                    "outcome": transcript.outcome,
                    "turns": len(transcript.turns),
                }
            )
            if transcript.attempt is not None:
                attempt = transcript.attempt
                correction_outcomes[attempt.outcome] += 1
                events.emit(
                    {
                        "event": "correction",
                        "index": i,
                        "outcome": attempt.outcome,
                        "chunks": [" ".join(c) for c in attempt.chunks],
                        "completions": [list(c) for c in attempt.completions],
                        "failed_chunk": " ".join(attempt.failed_chunk)
                        if attempt.failed_chunk
                        else None,
                    }
                )
            if labeled is not None:
                delta = state.store.record(labeled, state.stm, i)
                for mention in delta.added_mentions:
                    events.emit(
                        {
                            "event": "stm_add",
                            "index": i,
                            "surface": mention.text,
                            "type": mention.concept_type,
                        }
                    )
                events.emit(
                    {
                        "event": "acquisition",
                        "index": i,
                        "delta": list(delta.as_tuple()),
                        "counters": list(state.store.counters),
                        "new_pattern": delta.added_pattern.id if delta.added_pattern else None,
                    }
                )
            if mode != "STM_ONLY" and should_adapt(state.store, policy):
                if pre_dev_f1 is None:
                    pre_dev_f1 = _dev_f1(state.model, dev)
                new_model, event, train_set = adapt(
                    state.model,
                    state.stm,
                    state.store,
                    dev,
                    policy,
                    history,
                    train_config,
                    state.kb,
                    rng,
                    i,
                    pre_dev_f1,
                )
                state.model = new_model
                pre_dev_f1 = event.post_dev_f1
                adaptation_events.append(event)
                events.emit({"event": "adaptation", **event.to_dict()})
                if event.post_dev_f1 < event.pre_dev_f1 - WARM_START_GUARD:
                    events.emit(
                        {
                            "event": "dev_regression",
                            "index": i,
                            "drop": round(event.pre_dev_f1 - event.post_dev_f1, 6),
                            "guard": WARM_START_GUARD,
                        }
                    )
                if dump_train_sets:
                    dump_dir = out_dir / "train_learn"
                    dump_dir.mkdir(exist_ok=True)
                    save_dataset(train_set, dump_dir / f"{event.index:03d}.conll")
            if i % checkpoint_every == 0 or i == len(goals):
                checkpoint(i)

        n_correction_dialogues = sum(correction_outcomes.values())
        summary = {
            "mode": mode,
            "seed": seed,
            "dialogues": len(goals),
            "outcomes": dict(sorted(outcomes.items())),
            "correction_outcomes": dict(sorted(correction_outcomes.items())),
            "annotation_success_rate": (
                correction_outcomes.get("labeled", 0) / n_correction_dialogues
                if n_correction_dialogues
                else None
            ),
            "adaptations": len(adaptation_events),
            "final_model_version": state.model.version,
            "stm_size_final": len(state.stm),
            "kb_completions": state.kb.completion_count,
        }
        if run_header:
            summary.update(run_header)
        events.emit({"event": "run_end", **summary})
    finally:
        events.close()

    analysis = delta_analysis(records, [e.dialogue_index for e in adaptation_events])
    _finalize_run(out_dir, records, state.model, summary, analysis)
    return RunArtifacts(out_dir, records, adaptation_events, summary, state.model)


def run_simulation_upper(
    state: SystemState,
    simulation_gold: Sequence[TaggedUtterance],
    dev: Sequence[TaggedUtterance],
    evaluator: CheckpointEvaluator,
    train_config: TrainConfig,
    out_dir: str | Path,
    seed: int = 0,
    run_header: dict | None = None,
    training_kb: KnowledgeBase | None = None,
) -> RunArtifacts:
    """Oracle upper bound: one fine-tune on the full gold simulation data.

    No dialogues are played; the run produces an initial and a final
    checkpoint plus exactly one adaptation event. ``training_kb`` lets the
    caller hand the oracle the fully completed lexicon view: perfect
    knowledge extraction includes every KB completion the dialogues could
    have made.
    """
    from .tagger import fine_tune  # local import keeps module deps one-way

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    events = _EventLog(out_dir / "events.jsonl")
    records: list[EvalRecord] = []
    try:
        events.emit(
            {
                "event": "run_start",
                "mode": "SIMU_UPPER",
                "seed": seed,
                "dialogues": 0,
                **(run_header or {}),
            }
        )
        for flag in (False, True):
            records.append(evaluator.checkpoint(state.model, state.stm, flag, 0, 0))
        pre_dev = _dev_f1(state.model, dev)
        new_model, report = fine_tune(
            state.model, simulation_gold, dev, train_config,
            kb=training_kb if training_kb is not None else state.kb,
        )
        state.model = new_model
        event = AdaptationEvent(
            index=new_model.version,
            trigger="full_simulation",
            dialogue_index=len(simulation_gold),
            train_size=len(simulation_gold),
            generated=0,
            collected_examples=len(simulation_gold),
            new_mention_utterances=0,
            new_pattern_utterances=0,
            stm_cleared=0,
            pre_dev_f1=pre_dev,
            post_dev_f1=report["dev_f1"],
        )
        events.emit({"event": "adaptation", **event.to_dict()})
        final_index = len(simulation_gold)
        for flag in (False, True):
            records.append(evaluator.checkpoint(state.model, state.stm, flag, final_index, 1))
        summary = {
            "mode": "SIMU_UPPER",
            "seed": seed,
            "dialogues": 0,
            "outcomes": {},
            "correction_outcomes": {},
            "annotation_success_rate": None,
            "adaptations": 1,
            "final_model_version": new_model.version,
            "stm_size_final": len(state.stm),
        }
        if run_header:
            summary.update(run_header)
        events.emit({"event": "run_end", **summary})
    finally:
        events.close()

    analysis = delta_analysis(records, [event.dialogue_index])
    _finalize_run(out_dir, records, state.model, summary, analysis)
    return RunArtifacts(out_dir, records, [event], summary, state.model)


def _finalize_run(
    out_dir: Path,
    records: list[EvalRecord],
    model: TaggerModel,
    summary: dict,
    analysis: dict,
) -> None:
    save_records(records, out_dir / "eval_records.csv")
    model.save(out_dir / "model_final.json.gz")
    final = {r.with_stm: r for r in records[-2:]}
    summary = dict(summary)
    summary["final_f1"] = {
        "model": {
            "f1_initial": final[False].f1_initial,
            "f1_learn": final[False].f1_learn,
            "f1_unknown": final[False].f1_unknown,
            "f1_weighted": final[False].f1_weighted,
        },
        "with_stm": {
            "f1_initial": final[True].f1_initial,
            "f1_learn": final[True].f1_learn,
            "f1_unknown": final[True].f1_unknown,
            "f1_weighted": final[True].f1_weighted,
        },
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out_dir / "delta_analysis.json").write_text(
        json.dumps(analysis, indent=2, sort_keys=True) + "\n"
    )
