"""Config-driven operations behind the CLI: data generation, initial
training, and simulation runs, all rooted in one run directory.

Run directory layout::

    <output_dir>/
      config.yaml            exact configuration used
      data/                  datasets + provenance sidecars + kb.tsv + hashes.json
      model_initial.json.gz  initial checkpoint
      train_report.json      dev-F1 report of initial training
      sim_<mode>/            per-simulation artifacts (events, records, model, ...)
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .acquisition import KnowledgeStore, load_stopwords
from .adaptation import AdaptationPolicy, ReplayHistory
from .concepts import TaggedUtterance
from .config import RunConfig, jobs_from_env
from .corpus import (
    Composition,
    SplitBundle,
    ablate_kb,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulation_composition,
    split_in_two,
    split_resources,
    initial_test_composition,
    learn_test_composition,
    unknown_test_composition,
)
from .errors import ConfigError, DataError
from .evaluation import CheckpointEvaluator
from .memory import ShortTermMemory
from .resources import (
    SPLIT_INITIAL,
    SPLIT_LEARN,
    KnowledgeBase,
    bundled_path,
    load_mentions,
    load_patterns,
)
from .simulate import (
    MODES,
    RunArtifacts,
    SystemState,
    UserGoal,
    run_simulation,
    run_simulation_upper,
)
from .tagger import TaggerModel, TrainConfig, train

DATASET_NAMES = (
    "train_initial_trn",
    "train_initial_dev",
    "simulation",
    "test_initial",
    "test_learn",
    "test_unknown",
)

TEST_SET_FILES = ("test_initial", "test_learn", "test_unknown")


def load_resources(config: RunConfig):
    patterns = load_patterns(
        config.patterns_path or bundled_path("patterns.txt"), limit=config.max_patterns
    )
    mentions = load_mentions(
        config.mentions_path or bundled_path("mentions.txt"), limit=config.max_mentions
    )
    return patterns, mentions


def build_bundle(config: RunConfig) -> SplitBundle:
    patterns, mentions = load_resources(config)
    return split_resources(
        patterns,
        mentions,
        (config.split_initial, config.split_learn, config.split_unknown),
        seed=config.child_seed("split"),
    )


def build_kb(config: RunConfig, bundle: SplitBundle) -> KnowledgeBase:
    """System lexicon: INITIAL and LEARN mentions, rare ingredients ablated."""
    kb = KnowledgeBase(bundle.mention_pool(SPLIT_INITIAL, SPLIT_LEARN))
    return ablate_kb(kb, config.ablation_fraction)


def build_datasets(config: RunConfig, bundle: SplitBundle) -> dict[str, list[TaggedUtterance]]:
    """Render all datasets for the run, deterministically from the config.

    INITIAL is split in two so the dev set mixes resources seen in
    training with held-out ones (same mixing probabilities as the
    simulation), selecting models that generalize.
    """
    (trn_patterns, trn_mentions), (held_patterns, held_mentions) = split_in_two(
        bundle.patterns[SPLIT_INITIAL],
        bundle.mentions[SPLIT_INITIAL],
        first_fraction=1.0 - config.dev_fraction,
        seed=config.child_seed("halves"),
    )
    trn_comp = Composition(
        name="train_initial_trn",
        base_patterns=tuple(trn_patterns),
        base_mentions=tuple(trn_mentions),
    )
    dev_comp = Composition(
        name="train_initial_dev",
        base_patterns=tuple(trn_patterns),
        base_mentions=tuple(trn_mentions),
        new_patterns=tuple(held_patterns),
        new_mentions=tuple(held_mentions),
        p_new_pattern=config.p_new_pattern,
        p_new_mention=config.p_new_mention,
    )
    return {
        "train_initial_trn": generate_dataset(
            trn_comp, config.train_size, config.child_seed("train")
        ),
        "train_initial_dev": generate_dataset(
            dev_comp, config.dev_size, config.child_seed("dev")
        ),
        "simulation": generate_dataset(
            simulation_composition(bundle, config.p_new_pattern, config.p_new_mention),
            config.simulation_size,
            config.child_seed("simulation"),
        ),
        "test_initial": generate_dataset(
            initial_test_composition(bundle), config.test_size, config.child_seed("test_initial")
        ),
        "test_learn": generate_dataset(
            learn_test_composition(bundle, config.p_new_pattern, config.p_new_mention),
            config.test_size,
            config.child_seed("test_learn"),
        ),
        "test_unknown": generate_dataset(
            unknown_test_composition(bundle), config.test_size, config.child_seed("test_unknown")
        ),
    }


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def gen_data(config: RunConfig) -> Path:
    """Emit all dataset files, the ablated KB, and content hashes."""
    run_dir = config.resolved_output_dir()
    data_dir = run_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    config.save(run_dir / "config.yaml")

    bundle = build_bundle(config)
    datasets = build_datasets(config, bundle)
    kb = build_kb(config, bundle)

    for name, utterances in datasets.items():
        save_dataset(utterances, data_dir / f"{name}.conll")
    kb.save(data_dir / "kb.tsv")

    hashes = {}
    for path in sorted(data_dir.iterdir()):
        if path.name != "hashes.json":
            hashes[path.name] = file_sha256(path)
    (data_dir / "hashes.json").write_text(json.dumps(hashes, indent=2, sort_keys=True) + "\n")
    return run_dir


def _require_data(run_dir: Path) -> Path:
    data_dir = run_dir / "data"
    missing = [
        f"{name}.conll"
        for name in DATASET_NAMES
        if not (data_dir / f"{name}.conll").exists()
    ]
    if not data_dir.exists() or missing:
        raise DataError(
            f"{run_dir}: datasets missing ({', '.join(missing) or 'no data directory'}); "
            "run gen-data first"
        )
    return data_dir


_DATA_SECTIONS = ("seed", "resources", "splits", "mixing", "sizes", "kb")


def _check_config_snapshot(config: RunConfig, run_dir: Path) -> None:
    """The data in a run directory must match the config driving this step."""
    snapshot_path = run_dir / "config.yaml"
    if not snapshot_path.exists():
        return
    snapshot = RunConfig.load(snapshot_path).to_mapping()
    current = config.to_mapping()
    for section in _DATA_SECTIONS:
        if snapshot[section] != current[section]:
            raise ConfigError(
                f"{snapshot_path}: run directory was generated with different "
                f"{section!r} settings ({snapshot[section]} vs {current[section]}); "
                "regenerate the data or fix the config"
            )


def train_initial(config: RunConfig) -> Path:
    """Train the initial model on the generated data; persist checkpoint + report."""
    run_dir = config.resolved_output_dir()
    data_dir = _require_data(run_dir)
    _check_config_snapshot(config, run_dir)
    trn = load_dataset(data_dir / "train_initial_trn.conll")
    dev = load_dataset(data_dir / "train_initial_dev.conll")
    kb = KnowledgeBase.load(data_dir / "kb.tsv")
    model, report = train(
        trn, dev, TrainConfig(epochs=config.epochs, seed=config.effective_tagger_seed), kb=kb
    )
    model_path = run_dir / "model_initial.json.gz"
    model.save(model_path)
    report = {
        **report,
        "model": model_path.name,
        "model_sha256": file_sha256(model_path),
        "seed": config.effective_tagger_seed,
        "epochs": config.epochs,
    }
    (run_dir / "train_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return model_path


def _test_hashes(data_dir: Path) -> dict[str, str]:
    return {name: file_sha256(data_dir / f"{name}.conll") for name in TEST_SET_FILES}


def _load_test_sets(config: RunConfig, data_dir: Path) -> dict[str, list[TaggedUtterance]]:
    test_sets = {
        name: load_dataset(data_dir / f"{name}.conll") for name in TEST_SET_FILES
    }
    if config.test_real_path:
        test_sets["test_real"] = load_dataset(config.test_real_path)
    return test_sets


def simulate_mode(config: RunConfig, mode: str) -> RunArtifacts:
    """Run one simulated production phase under the selected regime."""
    mode = mode.upper().replace("-", "_")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    run_dir = config.resolved_output_dir()
    data_dir = _require_data(run_dir)
    _check_config_snapshot(config, run_dir)
    model_path = run_dir / "model_initial.json.gz"
    if not model_path.exists():
        raise DataError(f"{model_path}: initial model missing; run train first")

    model = TaggerModel.load(model_path)
    kb = KnowledgeBase.load(data_dir / "kb.tsv")
    bundle = build_bundle(config)
    test_sets = _load_test_sets(config, data_dir)
    hashes_before = _test_hashes(data_dir)
    dev = load_dataset(data_dir / "train_initial_dev.conll")
    simulation = load_dataset(data_dir / "simulation.conll")

    initial_patterns = list(bundle.patterns[SPLIT_INITIAL])
    state = SystemState(
        model=model,
        stm=ShortTermMemory(),
        kb=kb,
        oracle=kb,  # unablated view of the same lexicon simulates completion
        store=KnowledgeStore(
            known_patterns=initial_patterns,
            known_mention_surfaces=kb.visible_surfaces(),
        ),
        stopwords=load_stopwords(),
    )
    evaluator = CheckpointEvaluator(test_sets, kb)
    policy = AdaptationPolicy(
        min_new_mentions=config.min_new_mentions,
        min_new_patterns=config.min_new_patterns,
        min_new_examples=config.min_new_examples,
        replay_mode=mode if mode in ("RPM", "RM") else config.replay_mode,
        generation_budget=config.generation_budget,
    )
    train_config = TrainConfig(epochs=config.epochs, seed=config.effective_tagger_seed)
    out_dir = run_dir / f"sim_{mode.lower()}"
    header = {"test_hashes": hashes_before, "config_seed": config.seed}

    if mode == "SIMU_UPPER":
        # the all-knowledge oracle trains with the unablated lexicon view
        oracle_kb = KnowledgeBase(bundle.mention_pool(SPLIT_INITIAL, SPLIT_LEARN))
        artifacts = run_simulation_upper(
            state,
            simulation,
            dev,
            evaluator,
            train_config,
            out_dir,
            seed=config.child_seed("run"),
            run_header=header,
            training_kb=oracle_kb,
        )
    else:
        history = ReplayHistory(
            initial_patterns, bundle.mention_pool(SPLIT_INITIAL)
        )
        goals = [UserGoal.from_utterance(u) for u in simulation]
        artifacts = run_simulation(
            state,
            goals,
            dev,
            evaluator,
            policy,
            train_config,
            history,
            out_dir,
            mode=mode,
            seed=config.child_seed("run"),
            checkpoint_every=config.checkpoint_every,
            dump_train_sets=config.dump_train_sets,
            run_header=header,
        )

    hashes_after = _test_hashes(data_dir)
    if hashes_after != hashes_before:
        raise DataError("test sets changed during the run; artifacts are not trustworthy")
    return artifacts


def run_pipeline(config: RunConfig, modes: Sequence[str]) -> list[RunArtifacts]:
    """gen-data + train + the requested simulation modes, in one go."""
    gen_data(config)
    train_initial(config)
    return [simulate_mode(config, mode) for mode in modes]


def _grid_cell(args: tuple[RunConfig, tuple[str, ...]]) -> list[str]:
    config, modes = args
    results = run_pipeline(config, modes)
    return [str(r.out_dir) for r in results]


def run_grid(
    base_config: RunConfig,
    seeds: Sequence[int],
    modes: Sequence[str],
    jobs: int | None = None,
) -> list[str]:
    """Independent (seed x mode) runs; seeds may execute in parallel."""
    jobs = jobs if jobs is not None else jobs_from_env(1)
    cells = []
    base_out = Path(base_config.output_dir)
    for seed in seeds:
        cell_config = base_config.with_updates(
            seed=seed, output_dir=str(base_out / f"seed{seed}")
        )
        cells.append((cell_config, tuple(modes)))
    out_dirs: list[str] = []
    if jobs <= 1 or len(cells) == 1:
        for cell in cells:
            out_dirs.extend(_grid_cell(cell))
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
            for result in pool.map(_grid_cell, cells):
                out_dirs.extend(result)
    return out_dirs
