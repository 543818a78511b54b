"""Run configuration: one YAML file drives data generation, training,
simulation, and reporting. The schema is strict — unknown keys are
rejected so a run directory's config snapshot fully describes the run.

Environment overrides (the only two): SLOTLAB_OUT prefixes relative
output directories, SLOTLAB_JOBS sets grid parallelism.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

ENV_OUTPUT_ROOT = "SLOTLAB_OUT"
ENV_JOBS = "SLOTLAB_JOBS"

# stable per-purpose offsets for deriving child seeds from the run seed
SEED_OFFSETS = {
    "split": 0,
    "halves": 1,
    "train": 2,
    "dev": 3,
    "simulation": 4,
    "test_initial": 5,
    "test_learn": 6,
    "test_unknown": 7,
    "tagger": 8,
    "run": 9,
    "synth": 10,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    # resources (None -> bundled fixture files)
    patterns_path: str | None = None
    mentions_path: str | None = None
    max_patterns: int = 150
    max_mentions: int = 1500
    # splits
    split_initial: float = 0.6
    split_learn: float = 0.2
    split_unknown: float = 0.2
    dev_fraction: float = 0.25  # share of INITIAL held out of initial training
    # mixing
    p_new_pattern: float = 0.7
    p_new_mention: float = 0.3
    # dataset sizes
    train_size: int = 2000
    dev_size: int = 400
    simulation_size: int = 2000
    test_size: int = 300
    # knowledge base
    ablation_fraction: float = 0.4
    # tagger
    epochs: int = 5
    tagger_seed: int | None = None
    # adaptation policy
    min_new_mentions: int | None = 5
    min_new_patterns: int | None = 10
    min_new_examples: int | None = 50
    replay_mode: str = "RPM"
    generation_budget: int = 1000
    # evaluation
    checkpoint_every: int = 1
    test_real_path: str | None = None
    dump_train_sets: bool = True
    # output
    output_dir: str = "runs/run"

    def __post_init__(self) -> None:
        ratios = (self.split_initial, self.split_learn, self.split_unknown)
        if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
            raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
        if not (0 < self.dev_fraction < 1):
            raise ConfigError("dev_fraction must be in (0, 1)")
        for name in ("p_new_pattern", "p_new_mention"):
            v = getattr(self, name)
            if not (0 <= v <= 1):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if not (0 <= self.ablation_fraction < 1):
            raise ConfigError("ablation_fraction must be in [0, 1)")
        for name in ("max_patterns", "max_mentions", "train_size", "dev_size",
                     "simulation_size", "test_size", "generation_budget",
                     "checkpoint_every", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    # -- derived values ------------------------------------------------------

    def child_seed(self, purpose: str) -> int:
        return self.seed * 1000 + SEED_OFFSETS[purpose]

    @property
    def effective_tagger_seed(self) -> int:
        return self.tagger_seed if self.tagger_seed is not None else self.child_seed("tagger")

    def resolved_output_dir(self) -> Path:
        out = Path(self.output_dir)
        root = os.environ.get(ENV_OUTPUT_ROOT)
        if root and not out.is_absolute():
            return Path(root) / out
        return out

    def with_updates(self, **kwargs: Any) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)

    # -- YAML schema ----------------------------------------------------------

    def to_mapping(self) -> dict:
        return {
            "seed": self.seed,
            "resources": {
                "patterns": self.patterns_path,
                "mentions": self.mentions_path,
                "max_patterns": self.max_patterns,
                "max_mentions": self.max_mentions,
            },
            "splits": {
                "initial": self.split_initial,
                "learn": self.split_learn,
                "unknown": self.split_unknown,
                "dev_fraction": self.dev_fraction,
            },
            "mixing": {
                "p_new_pattern": self.p_new_pattern,
                "p_new_mention": self.p_new_mention,
            },
            "sizes": {
                "train": self.train_size,
                "dev": self.dev_size,
                "simulation": self.simulation_size,
                "test": self.test_size,
            },
            "kb": {"ablation_fraction": self.ablation_fraction},
            "tagger": {"epochs": self.epochs, "seed": self.tagger_seed},
            "adaptation": {
                "min_new_mentions": self.min_new_mentions,
                "min_new_patterns": self.min_new_patterns,
                "min_new_examples": self.min_new_examples,
                "replay_mode": self.replay_mode,
                "generation_budget": self.generation_budget,
            },
            "evaluation": {
                "checkpoint_every": self.checkpoint_every,
                "test_real": self.test_real_path,
                "dump_train_sets": self.dump_train_sets,
            },
            "output_dir": self.output_dir,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_mapping(), sort_keys=True))

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "RunConfig":
        def section(name: str, allowed: set[str]) -> dict:
            data = raw.get(name) or {}
            if not isinstance(data, Mapping):
                raise ConfigError(f"config section {name!r} must be a mapping")
            unknown = set(data) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
            return dict(data)

        top_allowed = {
            "seed", "resources", "splits", "mixing", "sizes", "kb",
            "tagger", "adaptation", "evaluation", "output_dir",
        }
        unknown = set(raw) - top_allowed
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")

        resources = section("resources", {"patterns", "mentions", "max_patterns", "max_mentions"})
        splits = section("splits", {"initial", "learn", "unknown", "dev_fraction"})
        mixing = section("mixing", {"p_new_pattern", "p_new_mention"})
        sizes = section("sizes", {"train", "dev", "simulation", "test"})
        kb = section("kb", {"ablation_fraction"})
        tagger = section("tagger", {"epochs", "seed"})
        adaptation = section(
            "adaptation",
            {"min_new_mentions", "min_new_patterns", "min_new_examples",
             "replay_mode", "generation_budget"},
        )
        evaluation = section("evaluation", {"checkpoint_every", "test_real", "dump_train_sets"})

        defaults = cls()
        try:
            return cls(
                seed=int(raw.get("seed", defaults.seed)),
                patterns_path=resources.get("patterns"),
                mentions_path=resources.get("mentions"),
                max_patterns=int(resources.get("max_patterns", defaults.max_patterns)),
                max_mentions=int(resources.get("max_mentions", defaults.max_mentions)),
                split_initial=float(splits.get("initial", defaults.split_initial)),
                split_learn=float(splits.get("learn", defaults.split_learn)),
                split_unknown=float(splits.get("unknown", defaults.split_unknown)),
                dev_fraction=float(splits.get("dev_fraction", defaults.dev_fraction)),
                p_new_pattern=float(mixing.get("p_new_pattern", defaults.p_new_pattern)),
                p_new_mention=float(mixing.get("p_new_mention", defaults.p_new_mention)),
                train_size=int(sizes.get("train", defaults.train_size)),
                dev_size=int(sizes.get("dev", defaults.dev_size)),
                simulation_size=int(sizes.get("simulation", defaults.simulation_size)),
                test_size=int(sizes.get("test", defaults.test_size)),
                ablation_fraction=float(kb.get("ablation_fraction", defaults.ablation_fraction)),
                epochs=int(tagger.get("epochs", defaults.epochs)),
                tagger_seed=(
                    int(tagger["seed"]) if tagger.get("seed") is not None else None
                ),
                min_new_mentions=_opt_int(adaptation, "min_new_mentions", defaults.min_new_mentions),
                min_new_patterns=_opt_int(adaptation, "min_new_patterns", defaults.min_new_patterns),
                min_new_examples=_opt_int(adaptation, "min_new_examples", defaults.min_new_examples),
                replay_mode=str(adaptation.get("replay_mode", defaults.replay_mode)),
                generation_budget=int(
                    adaptation.get("generation_budget", defaults.generation_budget)
                ),
                checkpoint_every=int(
                    evaluation.get("checkpoint_every", defaults.checkpoint_every)
                ),
                test_real_path=evaluation.get("test_real"),
                dump_train_sets=bool(
                    evaluation.get("dump_train_sets", defaults.dump_train_sets)
                ),
                output_dir=str(raw.get("output_dir", defaults.output_dir)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if raw is None:
            raw = {}
        if not isinstance(raw, Mapping):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_mapping(raw)


def _opt_int(section: Mapping, key: str, default: int | None) -> int | None:
    if key not in section:
        return default
    value = section[key]
    return None if value is None else int(value)


def desk_profile(seed: int = 1, output_dir: str = "runs/desk") -> RunConfig:
    """The scaled-down profile: full runs in minutes on a laptop."""
    return RunConfig(seed=seed, output_dir=output_dir)


def paper_profile(seed: int = 1, output_dir: str = "runs/paper") -> RunConfig:
    """Full-scale dataset sizes (20k/4k/20k train/dev/simulation, 1k tests)."""
    return RunConfig(
        seed=seed,
        max_patterns=220,
        max_mentions=10**6,  # everything available
        train_size=20000,
        dev_size=4000,
        simulation_size=20000,
        test_size=1000,
        output_dir=output_dir,
    )


def jobs_from_env(default: int = 1) -> int:
    raw = os.environ.get(ENV_JOBS)
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{ENV_JOBS} must be an integer, got {raw!r}") from None
