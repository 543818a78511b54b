"""The trainable slot tagger (the system's long-term memory).

An averaged perceptron over hand-rolled token features with greedy
left-to-right decoding. The averaging is the regularizer; together with
explicit seeding and insertion-ordered containers it makes training and
prediction reproducible bit for bit. Warm starts carry the full parameter
state, so fine-tuning never resets what untouched features learned.

KB membership is part of the feature set: the visible lexicon is
snapshotted into the model at (re)training time, keeping ``predict`` a
pure function of (parameters, tokens).
"""

from __future__ import annotations

import gzip
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .concepts import (
    Concept,
    SurfaceIndex,
    TAGSET,
    TaggedUtterance,
    bio_decode,
    find_surface_matches,
    has_negation_cue,
)
from .errors import ConfigError, DataError
from .evaluation import chunk_f1
from .resources import KnowledgeBase, bundled_path

FORMAT = "slotlab-tagger/1"

# Feature templates; bump the signature when changing them so checkpoints
# self-describe the extractor they were trained with.
FEATURE_SIGNATURE = hashlib.sha256(
    b"bias w0 w-1 w+1 w-2 w+2 pref1-3 suf1-3 w-1^w0 w0^w+1 kb-bio sw ctx prev prev^w0"
).hexdigest()[:16]

_START = "<s>"
_END = "</s>"

Weights = dict[str, dict[str, float]]

_FUNCTION_WORDS: frozenset[str] | None = None


def _function_words() -> frozenset[str]:
    # closed-class words never realize a mention; a dedicated flag lets the
    # model generalize "this cannot continue a chunk" to unseen frames
    global _FUNCTION_WORDS
    if _FUNCTION_WORDS is None:
        _FUNCTION_WORDS = frozenset(bundled_path("stopwords.txt").read_text().split())
    return _FUNCTION_WORDS


@dataclass(frozen=True)
class TrainConfig:
    """Training budget and reproducibility knobs.

    One epoch is one full pass over the training data, so the update
    budget scales with dataset size; model selection keeps the epoch
    snapshot with the highest dev chunk F1.
    """

    epochs: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigError("training needs at least one epoch")


def static_features(tokens: Sequence[str], gazetteer: SurfaceIndex) -> list[list[str]]:
    """Per-token context features that do not depend on predicted tags."""
    n = len(tokens)
    kb_tags = [""] * n
    if len(gazetteer):
        for match in find_surface_matches(tokens, gazetteer):
            start, end = match.span
            kb_tags[start] = "B-" + match.label
            for i in range(start + 1, end):
                kb_tags[i] = "I-" + match.label
    out: list[list[str]] = []
    for i, w in enumerate(tokens):
        wm1 = tokens[i - 1] if i > 0 else _START
        wm2 = tokens[i - 2] if i > 1 else _START
        wp1 = tokens[i + 1] if i + 1 < n else _END
        wp2 = tokens[i + 2] if i + 2 < n else _END
        feats = [
            "b",
            "w0=" + w,
            "w-1=" + wm1,
            "w+1=" + wp1,
            "w-2=" + wm2,
            "w+2=" + wp2,
            "p1=" + w[:1],
            "p2=" + w[:2],
            "p3=" + w[:3],
            "s1=" + w[-1:],
            "s2=" + w[-2:],
            "s3=" + w[-3:],
            "w-1^w0=" + wm1 + "^" + w,
            "w0^w+1=" + w + "^" + wp1,
        ]
        if w in _function_words():
            feats.append("sw")
        # always-on polarity context: positive contexts must actively
        # repel negative labels, not merely lack support for them
        feats.append("ctx=neg" if has_negation_cue(tokens, i) else "ctx=pos")
        if kb_tags[i]:
            feats.append("kb=" + kb_tags[i])
            feats.append("kb^w-1=" + kb_tags[i] + "^" + wm1)
        out.append(feats)
    return out


def _score_argmax(weights: Weights, features: list[str]) -> str:
    scores: dict[str, float] = {}
    for feat in features:
        table = weights.get(feat)
        if table:
            for label, weight in table.items():
                scores[label] = scores.get(label, 0.0) + weight
    best = TAGSET[0]
    best_score = scores.get(best, 0.0)
    for label in TAGSET[1:]:
        s = scores.get(label, 0.0)
        if s > best_score:
            best, best_score = label, s
    return best


def _predict_tags(weights: Weights, feats: list[list[str]]) -> list[str]:
    tags: list[str] = []
    prev = _START
    for token_feats in feats:
        full = token_feats + ["t-1=" + prev, "t-1^w0=" + prev + "^" + token_feats[1]]
        tag = _score_argmax(weights, full)
        tags.append(tag)
        prev = tag
    return tags


class TaggerModel:
    """Immutable trained tagger snapshot."""

    def __init__(
        self,
        weights: Weights,
        gazetteer_entries: Sequence[tuple[tuple[str, ...], str]],
        version: int,
        seed: int,
    ) -> None:
        self.weights = weights
        self.gazetteer_entries = list(gazetteer_entries)
        self.gazetteer = SurfaceIndex(self.gazetteer_entries)
        self.version = version
        self.seed = seed

    def predict_tags(self, tokens: Sequence[str]) -> list[str]:
        if not tokens:
            raise ValueError("cannot tag an empty token sequence")
        return _predict_tags(self.weights, static_features(tokens, self.gazetteer))

    def predict(self, tokens: Sequence[str]) -> list[Concept]:
        return bio_decode(self.predict_tags(tokens), tokens)

    # -- persistence --------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "format": FORMAT,
            "feature_signature": FEATURE_SIGNATURE,
            "label_set": list(TAGSET),
            "version": self.version,
            "seed": self.seed,
            "gazetteer": [[" ".join(s), t] for s, t in self.gazetteer_entries],
            "weights": self.weights,
        }

    def save(self, path: str | Path) -> None:
        data = json.dumps(self.to_payload(), sort_keys=True).encode()
        # fixed mtime and no embedded filename: identical models must
        # serialize to identical bytes wherever they are written
        with open(path, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(data)

    @classmethod
    def load(cls, path: str | Path) -> "TaggerModel":
        try:
            with gzip.open(path, "rb") as fh:
                payload = json.loads(fh.read().decode())
        except (OSError, ValueError) as exc:
            raise DataError(f"{path}: unreadable model checkpoint: {exc}") from exc
        if payload.get("format") != FORMAT:
            raise DataError(f"{path}: unknown checkpoint format {payload.get('format')!r}")
        if payload.get("feature_signature") != FEATURE_SIGNATURE:
            raise DataError(f"{path}: checkpoint built with a different feature extractor")
        gazetteer = [(tuple(s.split(" ")), t) for s, t in payload["gazetteer"]]
        return cls(
            weights={f: dict(t) for f, t in payload["weights"].items()},
            gazetteer_entries=gazetteer,
            version=payload["version"],
            seed=payload["seed"],
        )


class _Averager:
    """Perceptron weights with lazily maintained running averages."""

    def __init__(self, initial: Weights):
        self.w: Weights = {f: dict(t) for f, t in initial.items()}
        self.acc: dict[str, dict[str, float]] = {}
        self.stamp: dict[str, dict[str, int]] = {}
        self.t = 0

    def update(self, feature: str, label: str, delta: float) -> None:
        table = self.w.setdefault(feature, {})
        acc = self.acc.setdefault(feature, {})
        stamp = self.stamp.setdefault(feature, {})
        current = table.get(label, 0.0)
        acc[label] = acc.get(label, 0.0) + current * (self.t - stamp.get(label, 0))
        stamp[label] = self.t
        table[label] = current + delta

    def averaged(self) -> Weights:
        if self.t == 0:
            return {f: dict(t) for f, t in self.w.items()}
        out: Weights = {}
        for feature, table in self.w.items():
            acc = self.acc.get(feature, {})
            stamp = self.stamp.get(feature, {})
            row = {}
            for label, weight in table.items():
                total = acc.get(label, 0.0) + weight * (self.t - stamp.get(label, 0))
                value = total / self.t
                if value:
                    row[label] = value
            if row:
                out[feature] = row
        return out


def _run_training(
    initial_weights: Weights,
    train: Sequence[TaggedUtterance],
    dev: Sequence[TaggedUtterance],
    config: TrainConfig,
    gazetteer_entries: list[tuple[tuple[str, ...], str]],
    version: int,
    include_initial_candidate: bool,
) -> tuple[TaggerModel, dict]:
    if not train:
        raise DataError("empty training set")
    if not dev:
        raise DataError("empty dev set")
    gazetteer = SurfaceIndex(gazetteer_entries)
    feats = [static_features(utt.tokens, gazetteer) for utt in train]
    dev_feats = [static_features(utt.tokens, gazetteer) for utt in dev]

    def dev_score(weights: Weights) -> float:
        preds = [
            bio_decode(_predict_tags(weights, f), utt.tokens)
            for utt, f in zip(dev, dev_feats)
        ]
        return chunk_f1(dev, preds)

    averager = _Averager(initial_weights)
    best_weights: Weights | None = None
    best_f1 = -1.0
    history: list[float] = []
    if include_initial_candidate:
        snapshot = averager.averaged()
        best_weights, best_f1 = snapshot, dev_score(snapshot)
        history.append(best_f1)

    rng = random.Random(config.seed)
    order = list(range(len(train)))
    for _epoch in range(config.epochs):
        rng.shuffle(order)
        for idx in order:
            utt = train[idx]
            prev = _START
            for i, gold in enumerate(utt.tags):
                token_feats = feats[idx][i]
                full = token_feats + ["t-1=" + prev, "t-1^w0=" + prev + "^" + token_feats[1]]
                pred = _score_argmax(averager.w, full)
                averager.t += 1
                if pred != gold:
                    for feature in full:
                        averager.update(feature, gold, 1.0)
                        averager.update(feature, pred, -1.0)
                prev = pred
        snapshot = averager.averaged()
        f1 = dev_score(snapshot)
        history.append(f1)
        if f1 > best_f1:
            best_weights, best_f1 = snapshot, f1

    assert best_weights is not None
    model = TaggerModel(
        weights=best_weights,
        gazetteer_entries=gazetteer_entries,
        version=version,
        seed=config.seed,
    )
    report = {"dev_f1": best_f1, "epoch_dev_f1": history, "train_size": len(train)}
    return model, report


def train(
    train_data: Sequence[TaggedUtterance],
    dev: Sequence[TaggedUtterance],
    config: TrainConfig,
    kb: KnowledgeBase | None = None,
) -> tuple[TaggerModel, dict]:
    """Train from scratch; returns the best-on-dev snapshot and a report."""
    gazetteer_entries = list(kb.visible_entries()) if kb is not None else []
    return _run_training(
        initial_weights={},
        train=train_data,
        dev=dev,
        config=config,
        gazetteer_entries=gazetteer_entries,
        version=0,
        include_initial_candidate=True,
    )


def fine_tune(
    model: TaggerModel,
    train_n: Sequence[TaggedUtterance],
    dev: Sequence[TaggedUtterance],
    config: TrainConfig,
    kb: KnowledgeBase | None = None,
) -> tuple[TaggerModel, dict]:
    """Warm-start adaptation on new data; version increments by one.

    The epoch budget applies to ``train_n`` itself, so the number of
    updates scales with the adaptation set. When ``kb`` is given the
    gazetteer snapshot is refreshed to the current visible lexicon.
    """
    if not train_n:
        raise DataError("fine_tune needs a non-empty adaptation set")
    gazetteer_entries = (
        list(kb.visible_entries()) if kb is not None else list(model.gazetteer_entries)
    )
    return _run_training(
        initial_weights=model.weights,
        train=train_n,
        dev=dev,
        config=config,
        gazetteer_entries=gazetteer_entries,
        version=model.version + 1,
        include_initial_candidate=False,
    )
