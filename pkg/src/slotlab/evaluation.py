"""Chunk-level evaluation and per-dialogue checkpointing.

Scoring follows the classic chunking-evaluation convention: a predicted
chunk counts as correct only when both its span and its type match a gold
chunk exactly; precision/recall/F1 are micro-averaged over the corpus and
reported as percentages.
"""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .concepts import Concept, TaggedUtterance
from .errors import ConfigError
from .memory import ShortTermMemory, merge
from .resources import KnowledgeBase

WEIGHTS = {"initial": 0.2, "learn": 0.4, "unknown": 0.4}

REQUIRED_TEST_SETS = ("test_initial", "test_learn", "test_unknown")


def chunk_counts(
    gold: Sequence[TaggedUtterance],
    predictions: Sequence[Sequence[Concept]],
) -> tuple[int, int, int]:
    """(correct, predicted, gold) chunk counts over an aligned corpus."""
    if len(gold) != len(predictions):
        raise ValueError(f"{len(gold)} gold utterances vs {len(predictions)} predictions")
    correct = n_pred = n_gold = 0
    for utt, pred in zip(gold, predictions):
        gold_set = {(c.label, c.span) for c in utt.concepts}
        pred_set = {(c.label, c.span) for c in pred}
        correct += len(gold_set & pred_set)
        n_pred += len(pred_set)
        n_gold += len(gold_set)
    return correct, n_pred, n_gold


def prf_from_counts(correct: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    if n_pred == 0 and n_gold == 0:
        # degenerate empty-vs-empty corpus: perfect by definition
        return 100.0, 100.0, 100.0
    precision = 100.0 * correct / n_pred if n_pred else 0.0
    recall = 100.0 * correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def chunk_prf(
    gold: Sequence[TaggedUtterance],
    predictions: Sequence[Sequence[Concept]],
) -> tuple[float, float, float]:
    """Micro precision/recall/F1 (x100), exact span-and-type matching."""
    return prf_from_counts(*chunk_counts(gold, predictions))


def chunk_f1(gold: Sequence[TaggedUtterance], predictions: Sequence[Sequence[Concept]]) -> float:
    return chunk_prf(gold, predictions)[2]


def weighted_f1(f1_initial: float, f1_learn: float, f1_unknown: float) -> float:
    """Fixed 0.2 / 0.4 / 0.4 combination of the three test-set scores."""
    return (
        WEIGHTS["initial"] * f1_initial
        + WEIGHTS["learn"] * f1_learn
        + WEIGHTS["unknown"] * f1_unknown
    )


# ---------------------------------------------------------------------------
# Checkpoint records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    """One evaluation view at one dialogue checkpoint."""

    dialogue_index: int
    model_version: int
    with_stm: bool
    f1_initial: float
    f1_learn: float
    f1_unknown: float
    f1_weighted: float
    stm_size: int
    adaptation_count: int
    f1_real: float | None = None

    CSV_FIELDS = (
        "dialogue_index",
        "model_version",
        "with_stm",
        "f1_initial",
        "f1_learn",
        "f1_unknown",
        "f1_weighted",
        "f1_real",
        "stm_size",
        "adaptation_count",
    )

    def to_row(self) -> list[str]:
        return [
            str(self.dialogue_index),
            str(self.model_version),
            "1" if self.with_stm else "0",
            f"{self.f1_initial:.6f}",
            f"{self.f1_learn:.6f}",
            f"{self.f1_unknown:.6f}",
            f"{self.f1_weighted:.6f}",
            "" if self.f1_real is None else f"{self.f1_real:.6f}",
            str(self.stm_size),
            str(self.adaptation_count),
        ]

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "EvalRecord":
        return cls(
            dialogue_index=int(row["dialogue_index"]),
            model_version=int(row["model_version"]),
            with_stm=row["with_stm"] == "1",
            f1_initial=float(row["f1_initial"]),
            f1_learn=float(row["f1_learn"]),
            f1_unknown=float(row["f1_unknown"]),
            f1_weighted=float(row["f1_weighted"]),
            f1_real=float(row["f1_real"]) if row.get("f1_real") else None,
            stm_size=int(row["stm_size"]),
            adaptation_count=int(row["adaptation_count"]),
        )


def save_records(records: Iterable[EvalRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EvalRecord.CSV_FIELDS)
        for record in records:
            writer.writerow(record.to_row())


def load_records(path: str | Path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        return [EvalRecord.from_row(row) for row in csv.DictReader(fh)]


class Predictor(Protocol):
    version: int

    def predict(self, tokens: Sequence[str]) -> list[Concept]: ...


def _check_test_sets(test_sets: Mapping[str, Sequence[TaggedUtterance]]) -> None:
    for name in REQUIRED_TEST_SETS:
        if name not in test_sets or not test_sets[name]:
            raise ConfigError(f"missing test set {name!r}")


def evaluate_checkpoint(
    model: Predictor,
    stm: ShortTermMemory,
    kb: KnowledgeBase,
    test_sets: Mapping[str, Sequence[TaggedUtterance]],
    with_stm: bool,
    dialogue_index: int = 0,
    adaptation_count: int = 0,
) -> EvalRecord:
    """Score the current system on the frozen test sets.

    Side-effect free: predictions go through the model, optionally merged
    with the short-term memory; the test sets are never mutated.
    """
    _check_test_sets(test_sets)
    scores: dict[str, float] = {}
    for name in REQUIRED_TEST_SETS + ("test_real",):
        utterances = test_sets.get(name)
        if not utterances:
            continue
        predictions = []
        for utt in utterances:
            concepts = model.predict(utt.tokens)
            if with_stm:
                concepts = merge(concepts, stm.lookup(utt.tokens), kb)
            predictions.append(concepts)
        scores[name] = chunk_f1(utterances, predictions)
    return EvalRecord(
        dialogue_index=dialogue_index,
        model_version=model.version,
        with_stm=with_stm,
        f1_initial=scores["test_initial"],
        f1_learn=scores["test_learn"],
        f1_unknown=scores["test_unknown"],
        f1_weighted=weighted_f1(
            scores["test_initial"], scores["test_learn"], scores["test_unknown"]
        ),
        f1_real=scores.get("test_real"),
        stm_size=len(stm),
        adaptation_count=adaptation_count,
    )


class CheckpointEvaluator:
    """Per-dialogue evaluator with version-keyed caching.

    Model predictions on a frozen test set only change when the model
    version changes, and merged output only changes when model or STM
    state changes; caching those makes per-dialogue checkpointing cheap
    without altering any result.
    """

    def __init__(self, test_sets: Mapping[str, Sequence[TaggedUtterance]], kb: KnowledgeBase):
        _check_test_sets(test_sets)
        self.test_sets = {
            name: list(utts) for name, utts in test_sets.items() if utts
        }
        self.kb = kb
        self._raw: dict[tuple[str, int], list[list[Concept]]] = {}
        self._raw_f1: dict[tuple[str, int], float] = {}
        self._merged_f1: dict[tuple[str, int, int], float] = {}

    def _raw_predictions(self, name: str, model: Predictor) -> list[list[Concept]]:
        key = (name, model.version)
        if key not in self._raw:
            self._raw[key] = [model.predict(utt.tokens) for utt in self.test_sets[name]]
        return self._raw[key]

    def _f1(self, name: str, model: Predictor, stm: ShortTermMemory, with_stm: bool) -> float:
        raw_key = (name, model.version)
        if not with_stm or len(stm) == 0:
            if raw_key not in self._raw_f1:
                self._raw_f1[raw_key] = chunk_f1(
                    self.test_sets[name], self._raw_predictions(name, model)
                )
            return self._raw_f1[raw_key]
        merged_key = (name, model.version, stm.state_version)
        if merged_key not in self._merged_f1:
            merged = [
                merge(pred, stm.lookup(utt.tokens), self.kb)
                for utt, pred in zip(self.test_sets[name], self._raw_predictions(name, model))
            ]
            self._merged_f1[merged_key] = chunk_f1(self.test_sets[name], merged)
        return self._merged_f1[merged_key]

    def checkpoint(
        self,
        model: Predictor,
        stm: ShortTermMemory,
        with_stm: bool,
        dialogue_index: int,
        adaptation_count: int,
    ) -> EvalRecord:
        scores = {
            name: self._f1(name, model, stm, with_stm) for name in self.test_sets
        }
        return EvalRecord(
            dialogue_index=dialogue_index,
            model_version=model.version,
            with_stm=with_stm,
            f1_initial=scores["test_initial"],
            f1_learn=scores["test_learn"],
            f1_unknown=scores["test_unknown"],
            f1_weighted=weighted_f1(
                scores["test_initial"], scores["test_learn"], scores["test_unknown"]
            ),
            f1_real=scores.get("test_real"),
            stm_size=len(stm),
            adaptation_count=adaptation_count,
        )


# ---------------------------------------------------------------------------
# Post-hoc delta analysis
# ---------------------------------------------------------------------------

_DELTA_FIELDS = ("f1_initial", "f1_learn", "f1_unknown", "f1_weighted")


def _window_stats(deltas: Sequence[float]) -> dict[str, float]:
    if not deltas:
        return {"max": 0.0, "min": 0.0, "mean": 0.0, "median": 0.0, "count": 0}
    return {
        "max": max(deltas),
        "min": min(deltas),
        "mean": statistics.fmean(deltas),
        "median": statistics.median(deltas),
        "count": len(deltas),
    }


def delta_analysis(
    records: Sequence[EvalRecord],
    adaptation_indices: Sequence[int],
) -> dict:
    """STM contribution between fine-tunings, plus final-vs-initial deltas.

    ``records`` must contain both evaluation views per checkpoint; windows
    are delimited by the dialogue indices at which adaptations happened
    (k adaptations give k+1 windows).
    """
    without = {r.dialogue_index: r for r in records if not r.with_stm}
    with_stm = {r.dialogue_index: r for r in records if r.with_stm}
    indices = sorted(set(without) & set(with_stm))
    deltas = {
        idx: {
            f: getattr(with_stm[idx], f) - getattr(without[idx], f) for f in _DELTA_FIELDS
        }
        for idx in indices
    }

    edges = sorted(set(adaptation_indices))
    windows = []
    lower = indices[0] - 1 if indices else -1
    for bound in list(edges) + [indices[-1] if indices else 0]:
        member = [i for i in indices if lower < i <= bound]
        windows.append(
            {
                "start": lower + 1,
                "end": bound,
                **{
                    f: _window_stats([deltas[i][f] for i in member])
                    for f in _DELTA_FIELDS
                },
            }
        )
        lower = bound
    overall = {f: _window_stats([deltas[i][f] for i in indices]) for f in _DELTA_FIELDS}

    summary = {}
    if indices:
        first, last = indices[0], indices[-1]
        for f in _DELTA_FIELDS:
            summary[f] = {
                "initial": getattr(without[first], f),
                "final_model": getattr(without[last], f),
                "final_with_stm": getattr(with_stm[last], f),
                "delta_model": getattr(without[last], f) - getattr(without[first], f),
                "delta_with_stm": getattr(with_stm[last], f) - getattr(without[first], f),
            }
    return {
        "windows": windows,
        "overall_stm_delta": overall,
        "final_vs_initial": summary,
        "adaptation_count": len(edges),
    }
