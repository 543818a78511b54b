from __future__ import annotations

import json

import pytest

from conftest import concept, mention, pattern, tagged
from slotlab.acquisition import KnowledgeStore, common_chunks, load_stopwords
from slotlab.adaptation import AdaptationPolicy, ReplayHistory
from slotlab.concepts import tokenize
from slotlab.evaluation import CheckpointEvaluator
from slotlab.memory import ShortTermMemory
from slotlab.resources import KnowledgeBase
from slotlab.simulate import (
    SystemState,
    UserGoal,
    run_dialogue,
    run_simulation,
    verbalize_criteria,
)
from slotlab.tagger import TrainConfig


class ScriptedModel:
    """Deterministic stand-in satisfying the learner contract
    (predict + version + checkpoint serialization)."""

    def __init__(self, answers=None, version=0):
        self.answers = answers or {}
        self.version = version

    def predict(self, tokens):
        return list(self.answers.get(tuple(tokens), []))

    def save(self, path):
        import gzip

        with gzip.open(path, "wt") as fh:
            fh.write(json.dumps({"format": "scripted", "version": self.version}))


def make_state(answers=None, kb_entries=(), known_surfaces=()):
    kb = KnowledgeBase(list(kb_entries))
    return SystemState(
        model=ScriptedModel(answers),
        stm=ShortTermMemory(),
        kb=kb,
        oracle=kb,
        store=KnowledgeStore(known_mention_surfaces=known_surfaces),
        stopwords=load_stopwords(),
    )


def test_verbalize_single_positive_criterion():
    criteria = [concept("ingredient", "pasta", 6)]
    assert verbalize_criteria(criteria) == tokenize(
        "You misunderstood me. I want a recipe with pasta."
    )


def test_verbalize_mixed_polarity_criteria():
    criteria = [concept("recipe_type", "cake", 3), concept("negative_ingredient", "eggs", 7)]
    assert verbalize_criteria(criteria) == tokenize(
        "You misunderstood me. I want a recipe with cake and without eggs."
    )


def test_verbalize_two_positives_joined_with_and():
    criteria = [concept("ingredient", "pasta", 3), concept("ingredient", "eggs", 5)]
    text = " ".join(verbalize_criteria(criteria))
    assert text.endswith("with pasta and eggs .")


def test_verbalize_rejects_empty_criteria():
    with pytest.raises(ValueError):
        verbalize_criteria([])


def test_rephrase_round_trips_through_common_chunks():
    # every criterion mention is recoverable as a chunk of the rephrase
    goal = tagged("find me a [cake|recipe_type] without [eggs|negative_ingredient] tonight")
    rephrase = verbalize_criteria(goal.concepts)
    chunks = common_chunks(goal.tokens, rephrase, load_stopwords())
    assert set(chunks) >= {("cake",), ("eggs",)}


def test_dialogue_understood_first_try_records_imitation():
    goal_utt = tagged("i want recipes with [pasta|ingredient]")
    goal = UserGoal.from_utterance(goal_utt)
    state = make_state({tuple(goal_utt.tokens): goal_utt.concepts})
    transcript, labeled = run_dialogue(state, goal, index=5)
    assert transcript.outcome == "understood_first_try"
    assert labeled is not None
    assert labeled.concepts == goal_utt.concepts
    assert len(transcript.turns) == 3
    assert transcript.attempt is None


def test_dialogue_corrected_after_successful_labeling():
    goal_utt = tagged("i want recipes with [pasta|ingredient]")
    goal = UserGoal.from_utterance(goal_utt)
    state = make_state(
        answers={tuple(goal_utt.tokens): []},  # the model misses everything
        kb_entries=[mention("pasta", "ingredient", 5)],
    )
    transcript, labeled = run_dialogue(state, goal, index=2)
    assert transcript.outcome == "corrected"
    assert labeled is not None
    assert [(c.label, c.mention) for c in labeled.concepts] == [
        ("ingredient", ("pasta",))
    ]
    assert transcript.attempt.outcome == "labeled"
    assert len(transcript.turns) == 5


def test_dialogue_abandoned_when_correction_fails():
    goal_utt = tagged("i want recipes with [zorgl|ingredient]")
    goal = UserGoal.from_utterance(goal_utt)
    state = make_state(answers={tuple(goal_utt.tokens): []})  # KB knows nothing
    transcript, labeled = run_dialogue(state, goal, index=2)
    assert transcript.outcome == "abandoned"
    assert labeled is None
    assert transcript.attempt.outcome == "kb_miss"
    assert len(transcript.turns) == 5


def test_dialogue_abandoned_when_user_rejects_wrong_correction():
    # labeling succeeds but recovers only part of the criteria
    goal_utt = tagged("i want [pasta|ingredient] and [zorgl|ingredient]")
    goal = UserGoal.from_utterance(goal_utt)
    state = make_state(
        answers={tuple(goal_utt.tokens): []},
        kb_entries=[mention("pasta", "ingredient", 5)],
    )
    transcript, labeled = run_dialogue(state, goal, index=1)
    assert transcript.outcome == "abandoned"
    assert labeled is None
    assert transcript.attempt.outcome == "kb_miss" or transcript.attempt.outcome == "user_abandoned"


def test_extra_detected_concept_counts_as_mismatch():
    goal_utt = tagged("i want recipes with [pasta|ingredient]")
    goal = UserGoal.from_utterance(goal_utt)
    over = goal_utt.concepts + [concept("recipe_type", "recipes", 2)]
    state = make_state(
        answers={tuple(goal_utt.tokens): over},
        kb_entries=[mention("pasta", "ingredient", 5)],
    )
    transcript, _ = run_dialogue(state, goal, index=1)
    assert transcript.outcome != "understood_first_try"


def test_dialogues_never_exceed_five_turns():
    for answers, kb_entries in (
        ({}, []),
        ({}, [mention("pasta", "ingredient", 5)]),
    ):
        goal_utt = tagged("i want recipes with [pasta|ingredient]")
        state = make_state(answers=answers, kb_entries=kb_entries)
        transcript, _ = run_dialogue(state, UserGoal.from_utterance(goal_utt), 1)
        assert len(transcript.turns) <= 5


def _tiny_eval_setup():
    tests = {
        "test_initial": [tagged("i want recipes with [pasta|ingredient]")],
        "test_learn": [tagged("i want recipes with [seitan|ingredient]")],
        "test_unknown": [tagged("i want recipes with [zorgl|ingredient]")],
    }
    kb = KnowledgeBase([mention("pasta", "ingredient", 5)])
    return tests, kb


def test_zero_dialogue_run_emits_only_the_initial_checkpoint(tmp_path):
    tests, kb = _tiny_eval_setup()
    state = make_state(kb_entries=[mention("pasta", "ingredient", 5)])
    artifacts = run_simulation(
        state,
        goals=[],
        dev=[tagged("i want recipes with [pasta|ingredient]")],
        evaluator=CheckpointEvaluator(tests, kb),
        policy=AdaptationPolicy(),
        train_config=TrainConfig(epochs=1, seed=0),
        history=ReplayHistory([pattern("h", "x $ingredient")], [mention("pasta", "ingredient")]),
        out_dir=tmp_path / "run",
        mode="STM_ONLY",
    )
    per_view = [r for r in artifacts.records if not r.with_stm]
    assert len(per_view) == 1
    assert per_view[0].dialogue_index == 0
    assert (tmp_path / "run" / "eval_records.csv").exists()
    assert (tmp_path / "run" / "events.jsonl").exists()
    assert (tmp_path / "run" / "summary.json").exists()


def test_progressivity_learning_only_from_confirmed_dialogues(tmp_path):
    # one goal the model nails, one it cannot even correct
    ok = tagged("i want recipes with [pasta|ingredient]")
    bad = tagged("i want recipes with [zorgl|ingredient]")
    tests, kb_eval = _tiny_eval_setup()
    state = make_state(
        answers={tuple(ok.tokens): ok.concepts, tuple(bad.tokens): []},
        kb_entries=[mention("pasta", "ingredient", 5)],
        known_surfaces=[("pasta",)],
    )
    artifacts = run_simulation(
        state,
        goals=[UserGoal.from_utterance(ok), UserGoal.from_utterance(bad)],
        dev=[ok],
        evaluator=CheckpointEvaluator(tests, kb_eval),
        policy=AdaptationPolicy(),
        train_config=TrainConfig(epochs=1, seed=0),
        history=ReplayHistory([pattern("h", "x $ingredient")], [mention("pasta", "ingredient")]),
        out_dir=tmp_path / "run",
        mode="STM_ONLY",
    )
    events = [
        json.loads(line) for line in (tmp_path / "run" / "events.jsonl").read_text().splitlines()
    ]
    acquisitions = [e for e in events if e["event"] == "acquisition"]
    dialogues = {e["index"]: e for e in events if e["event"] == "dialogue"}
    assert dialogues[1]["outcome"] == "understood_first_try"
    assert dialogues[2]["outcome"] == "abandoned"
    assert {e["index"] for e in acquisitions} == {1}
    assert artifacts.summary["outcomes"] == {"abandoned": 1, "understood_first_try": 1}


def test_simulation_mode_validation(tmp_path):
    tests, kb = _tiny_eval_setup()
    state = make_state()
    with pytest.raises(ValueError):
        run_simulation(
            state, [], [], CheckpointEvaluator(tests, kb), AdaptationPolicy(),
            TrainConfig(epochs=1, seed=0), ReplayHistory([], []), tmp_path, mode="SIMU_UPPER",
        )
