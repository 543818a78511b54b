from __future__ import annotations

import pytest

from slotlab import pipeline
from slotlab.acquisition import common_chunks, load_stopwords
from slotlab.config import RunConfig, paper_profile
from slotlab.corpus import save_dataset
from slotlab.errors import ConfigError
from slotlab.simulate import verbalize_criteria

SMALL = dict(train_size=600, dev_size=150, simulation_size=120, test_size=100,
             generation_budget=200)


def test_paper_profile_renders_full_scale_sizes():
    config = paper_profile(seed=1)
    bundle = pipeline.build_bundle(config)
    datasets = pipeline.build_datasets(config, bundle)
    assert {name: len(data) for name, data in datasets.items()} == {
        "train_initial_trn": 20000,
        "train_initial_dev": 4000,
        "simulation": 20000,
        "test_initial": 1000,
        "test_learn": 1000,
        "test_unknown": 1000,
    }


def test_desk_profile_renders_desk_sizes():
    config = RunConfig(seed=2)
    datasets = pipeline.build_datasets(config, pipeline.build_bundle(config))
    assert len(datasets["train_initial_trn"]) == 2000
    assert len(datasets["simulation"]) == 2000
    assert all(len(datasets[f"test_{n}"]) == 300 for n in ("initial", "learn", "unknown"))


def test_rephrase_chunks_recover_every_goal_mention():
    # over real generated simulation goals, the user's rephrase always
    # yields every criterion mention back as a common chunk
    config = RunConfig(seed=3, simulation_size=200)
    datasets = pipeline.build_datasets(config, pipeline.build_bundle(config))
    stopwords = load_stopwords()
    for utt in datasets["simulation"]:
        rephrase = verbalize_criteria(utt.concepts)
        chunks = set(common_chunks(utt.tokens, rephrase, stopwords))
        wanted = {c.mention for c in utt.concepts}
        assert wanted <= chunks, (utt.text, wanted - chunks)


def test_external_test_real_flows_into_records(tmp_path):
    config = RunConfig(seed=1, output_dir=str(tmp_path / "run"), **SMALL)
    pipeline.gen_data(config)
    pipeline.train_initial(config)
    # external annotated file in the standard two-column format
    datasets = pipeline.build_datasets(config, pipeline.build_bundle(config))
    real_path = tmp_path / "real.conll"
    save_dataset(datasets["test_initial"][:30], real_path)
    config_real = config.with_updates(test_real_path=str(real_path))
    artifacts = pipeline.simulate_mode(config_real, "STM_ONLY")
    assert all(r.f1_real is not None for r in artifacts.records)
    rows = (tmp_path / "run" / "sim_stm_only" / "eval_records.csv").read_text().splitlines()
    assert "f1_real" in rows[0]


def test_missing_external_test_real_is_a_data_error(tmp_path):
    from slotlab.errors import DataError

    config = RunConfig(
        seed=1, output_dir=str(tmp_path / "run"),
        test_real_path=str(tmp_path / "nope.conll"), **SMALL,
    )
    pipeline.gen_data(config)
    pipeline.train_initial(config)
    with pytest.raises(DataError, match="not found"):
        pipeline.simulate_mode(config, "STM_ONLY")


def test_checkpoint_cadence_thins_records(tmp_path):
    config = RunConfig(seed=1, output_dir=str(tmp_path / "run"),
                       checkpoint_every=40, **SMALL)
    pipeline.gen_data(config)
    pipeline.train_initial(config)
    artifacts = pipeline.simulate_mode(config, "STM_ONLY")
    per_view = [r for r in artifacts.records if not r.with_stm]
    assert [r.dialogue_index for r in per_view] == [0, 40, 80, 120]


def test_unknown_simulation_mode_is_rejected(tmp_path):
    config = RunConfig(seed=1, output_dir=str(tmp_path / "run"), **SMALL)
    with pytest.raises(ConfigError, match="unknown mode"):
        pipeline.simulate_mode(config, "CHAOS")
