"""Acceptance suite: the desk-profile criteria, one PASS/FAIL line each.

The full grid (4 seeds x RPM/RM/STM_ONLY/SIMU_UPPER) runs once per test
session at the desk profile; the criteria below read its artifacts. Run
with ``pytest tests/test_acceptance.py -v -s`` to watch the lines appear.
"""

from __future__ import annotations

import itertools
import json
import os
import random
from pathlib import Path

import pytest

from conftest import mention, pattern
from oracles import brute_prf, merge_reference
from slotlab import pipeline, reporting
from slotlab.acquisition import KnowledgeStore
from slotlab.adaptation import AdaptationPolicy, ReplayHistory, build_train_learn
from slotlab.concepts import ALL_TYPES, Concept, TaggedUtterance, bio_decode, bio_encode
from slotlab.config import RunConfig
from slotlab.evaluation import chunk_prf, weighted_f1
from slotlab.memory import merge
from slotlab.resources import KnowledgeBase

SEEDS = (1, 2, 3, 4)
MODES = ("RPM", "RM", "STM_ONLY", "SIMU_UPPER")

#: the desk profile: the RunConfig defaults, pinned here explicitly so a
#: default drift cannot silently change what acceptance runs
DESK = dict(
    max_patterns=150,
    max_mentions=1500,
    split_initial=0.6,
    split_learn=0.2,
    split_unknown=0.2,
    train_size=2000,
    dev_size=400,
    simulation_size=2000,
    test_size=300,
    ablation_fraction=0.4,
    min_new_mentions=5,
    min_new_patterns=10,
    min_new_examples=50,
    generation_budget=1000,
    checkpoint_every=1,
)


def _verdict(number: int, name: str, ok: bool, detail: str = "") -> bool:
    line = f"ACCEPTANCE {number:02d} {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    return ok


@pytest.fixture(scope="session")
def grid(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("acceptance_grid")
    config = RunConfig(output_dir=str(root / "grid"), **DESK)
    jobs = min(4, os.cpu_count() or 1)
    pipeline.run_grid(config, SEEDS, MODES, jobs=jobs)
    return root / "grid"


def _run(grid: Path, seed: int, mode: str) -> reporting.RunView:
    return reporting.load_run(grid / f"seed{seed}" / f"sim_{mode.lower()}")


def _first_last(run: reporting.RunView, with_stm: bool = False):
    records = [r for r in run.records if r.with_stm == with_stm]
    return records[0], records[-1]


# -- 1 ----------------------------------------------------------------------


def test_criterion_01_weighted_f1_reproduction():
    ok = abs(weighted_f1(98.99, 89.33, 68.26) - 82.83) <= 0.005
    ok &= abs(weighted_f1(98.56, 97.48, 71.11) - 87.15) <= 0.005
    assert _verdict(1, "weighted-F1 reproduction", ok)


# -- 2 ----------------------------------------------------------------------


def _random_case(rng: random.Random):
    n = rng.randint(1, 12)
    tokens = tuple(f"w{i}" for i in range(n))
    tags, open_label = [], None
    for _ in range(n):
        roll = rng.random()
        if roll < 0.5 or (roll < 0.65 and open_label is None):
            tags.append("O")
            open_label = None
        elif roll < 0.85 or open_label is None:
            open_label = rng.choice(ALL_TYPES)
            tags.append("B-" + open_label)
        else:
            tags.append("I-" + open_label)
    gold = TaggedUtterance(tokens=tokens, tags=tuple(tags))
    pred_tags = list(tags)
    for i in range(n):
        roll = rng.random()
        if roll < 0.12 and pred_tags[i] != "O":
            pred_tags[i] = pred_tags[i][:2] + rng.choice(ALL_TYPES)  # type flip
        elif roll < 0.2:
            pred_tags[i] = "O"  # boundary cut
        elif roll < 0.26:
            pred_tags[i] = "B-" + rng.choice(ALL_TYPES)  # spurious span
    pred = bio_decode(pred_tags, tokens)
    return gold, pred, tuple(bio_encode(pred, n))


def test_criterion_02_conlleval_equivalence():
    rng = random.Random(20260808)
    mismatches = 0
    for _ in range(1000):
        gold, pred, pred_tags = _random_case(rng)
        if chunk_prf([gold], [pred]) != pytest.approx(
            brute_prf([gold.tags], [pred_tags]), abs=1e-9
        ):
            mismatches += 1
    assert _verdict(2, "conlleval equivalence (1000 fixtures)", mismatches == 0,
                    f"mismatches={mismatches}")


# -- 3 ----------------------------------------------------------------------

_LINE = [
    Concept("ingredient", ("soy", "sauce"), (2, 4)),
    Concept("ingredient", ("sauce",), (3, 4)),
    Concept("negative_ingredient", ("sauce",), (3, 4)),
    Concept("ingredient", ("tomato", "sauce", "pasta"), (2, 5)),
    Concept("recipe_type", ("cake",), (6, 7)),
    Concept("negative_recipe_type", ("soy", "sauce"), (2, 4)),
    Concept("ingredient", ("cake",), (6, 7)),
    Concept("event", ("sauce",), (8, 9)),
]


def test_criterion_03_merge_golden_traces():
    kb = KnowledgeBase(
        [mention("tomato sauce", "ingredient"), mention("chocolate", "ingredient")]
    )
    kb_surfaces = kb.visible_surfaces()
    stm_pool = [c for c in _LINE if not c.label.startswith("negative_")]
    failures = 0
    checked = 0
    for n_model, n_stm in itertools.product(range(3), range(3)):
        for model in itertools.permutations(_LINE, n_model):
            for stm in itertools.combinations(stm_pool, n_stm):
                if merge(list(model), list(stm), kb) != merge_reference(
                    list(model), list(stm), kb_surfaces
                ):
                    failures += 1
                checked += 1

    # the four worked examples, hand-derived
    c = lambda label, text, start: Concept(label, tuple(text.split()), (start, start + len(text.split())))
    worked = [
        (  # empty STM: identity
            [c("ingredient", "chocolate", 2)], [],
            [c("ingredient", "chocolate", 2)],
        ),
        (  # negative context wins over the STM type
            [c("negative_recipe_type", "seitan", 1)], [c("ingredient", "seitan", 1)],
            [c("negative_ingredient", "seitan", 1)],
        ),
        (  # model mention nested in a longer STM match
            [Concept("ingredient", ("sauce",), (3, 4))],
            [Concept("ingredient", ("soy", "sauce"), (2, 4))],
            [Concept("ingredient", ("soy", "sauce"), (2, 4))],
        ),
        (  # STM nested in a model mention that the KB confirms
            [Concept("ingredient", ("tomato", "sauce"), (2, 4))],
            [Concept("ingredient", ("sauce",), (3, 4))],
            [Concept("ingredient", ("tomato", "sauce"), (2, 4))],
        ),
    ]
    for model, stm, expected in worked:
        if merge(model, stm, kb) != expected:
            failures += 1
    ok = failures == 0 and checked > 1000
    assert _verdict(3, "merge golden traces", ok, f"checked={checked}, failures={failures}")


# -- 4 / 5 / 6 / 7: grid-based criteria --------------------------------------


def test_criterion_04_learning_gain(grid):
    details = []
    ok = True
    for seed in SEEDS:
        for mode in ("RPM", "RM"):
            first, last = _first_last(_run(grid, seed, mode))
            gain = last.f1_learn - first.f1_learn
            ok &= gain >= 5.0
            details.append(f"s{seed}/{mode}:{gain:+.2f}")
    assert _verdict(4, "learning gain >= 5 on test_LEARN", ok, " ".join(details))


def test_criterion_05_no_catastrophic_forgetting(grid):
    # the paper-analog property bounds the DROP on test_INITIAL; gains are
    # not forgetting and do not count against it
    details = []
    ok = True
    for seed in SEEDS:
        for mode in ("RPM", "RM"):
            first, last = _first_last(_run(grid, seed, mode))
            drop = first.f1_initial - last.f1_initial
            ok &= drop <= 2.0
            details.append(f"s{seed}/{mode}:{-drop:+.2f}")
    assert _verdict(5, "no catastrophic forgetting on test_INITIAL", ok, " ".join(details))


def test_criterion_06_table_orderings(grid):
    # both ordering clauses are checked per seed and must hold on at least
    # 3 of the 4 seeds (the criterion quantifies over seeds only this way;
    # near the desk-scale ceiling single-seed ties can flip by a few test
    # chunks in either direction)
    upper_hits = 0
    chain_hits = 0
    details = []
    for seed in SEEDS:
        rpm = _first_last(_run(grid, seed, "RPM"))[1]
        rm = _first_last(_run(grid, seed, "RM"))[1]
        simu = _first_last(_run(grid, seed, "SIMU_UPPER"))[1]
        stm_run = _run(grid, seed, "STM_ONLY")
        stm_final = _first_last(stm_run, with_stm=True)[1]
        initial = _first_last(stm_run)[0]
        upper = simu.f1_learn >= rm.f1_learn and simu.f1_learn >= rpm.f1_learn
        chain = (
            min(rpm.f1_weighted, rm.f1_weighted) > stm_final.f1_weighted
            and stm_final.f1_weighted >= initial.f1_weighted
        )
        upper_hits += upper
        chain_hits += chain
        details.append(
            f"s{seed}: simu_l={simu.f1_learn:.2f} rm_l={rm.f1_learn:.2f} "
            f"rpm_l={rpm.f1_learn:.2f} upper={'y' if upper else 'n'} "
            f"chain={'y' if chain else 'n'}"
        )
    ok = upper_hits >= 3 and chain_hits >= 3
    assert _verdict(
        6, "table orderings on >=3 of 4 seeds", ok,
        f"upper_hits={upper_hits}/4 chain_hits={chain_hits}/4; " + " ".join(details),
    )


def test_criterion_07_stm_continuity(grid):
    # every adapted run must have a non-negative mean STM contribution;
    # the strictly positive window is a rare event at desk scale (the
    # reference behaviour is itself mean 0.01 / median 0 at 10x the
    # dialogue count), so its existence is checked across the adapted
    # runs of the experiment
    positive_anywhere = False
    means_ok = True
    details = []
    for seed in SEEDS:
        for mode in ("rpm", "rm"):
            analysis = json.loads(
                (grid / f"seed{seed}" / f"sim_{mode}" / "delta_analysis.json").read_text()
            )
            positive = any(w["f1_learn"]["max"] > 0 for w in analysis["windows"])
            mean = analysis["overall_stm_delta"]["f1_learn"]["mean"]
            positive_anywhere |= positive
            means_ok &= mean >= 0
            details.append(f"s{seed}/{mode}:{'+' if positive else '0'}/{mean:+.4f}")
    ok = positive_anywhere and means_ok
    assert _verdict(7, "STM continuity between fine-tunings", ok, " ".join(details))


# -- 8 ------------------------------------------------------------------------


def test_criterion_08_replay_representation_ratio():
    patterns = [
        pattern(f"h{i}", f"frame number {i} asks for $ingredient kindly", split="INITIAL")
        for i in range(10)
    ]
    mentions = [mention(f"base{i}", "ingredient", 5, split="INITIAL") for i in range(20)]
    history = ReplayHistory(patterns, mentions)

    def incidence(mode: str, seed: int) -> float:
        store = KnowledgeStore()
        store.new_mentions[("seitan",)] = mention("seitan", "ingredient", split="ACQUIRED")
        policy = AdaptationPolicy(replay_mode=mode, generation_budget=1000)
        data = build_train_learn(store, history, policy, random.Random(seed))
        return sum(
            1 for u in data if any(s == "seitan" for s, _ in u.provenance.mention_splits)
        ) / len(data)

    rm = sum(incidence("RM", s) for s in range(20)) / 20
    rpm = sum(incidence("RPM", s) for s in range(20)) / 20
    ratio = rm / rpm
    ok = 1.6 <= ratio <= 2.4
    assert _verdict(8, "RM/RPM representation ratio in [1.6, 2.4]", ok, f"ratio={ratio:.3f}")


# -- 9 ------------------------------------------------------------------------


def test_criterion_09_byte_identical_reruns(tmp_path):
    config = RunConfig(
        seed=5,
        train_size=800,
        dev_size=200,
        simulation_size=150,
        test_size=120,
        generation_budget=300,
        output_dir=str(tmp_path / "a"),
    )
    pipeline.gen_data(config)
    pipeline.train_initial(config)
    pipeline.simulate_mode(config, "RM")
    import shutil

    shutil.copytree(tmp_path / "a", tmp_path / "b", ignore=shutil.ignore_patterns("sim_*"))
    pipeline.simulate_mode(config.with_updates(output_dir=str(tmp_path / "b")), "RM")
    same = True
    for name in ("eval_records.csv", "events.jsonl"):
        same &= (tmp_path / "a" / "sim_rm" / name).read_bytes() == (
            tmp_path / "b" / "sim_rm" / name
        ).read_bytes()
    assert _verdict(9, "byte-identical reruns of simulate", same)


# -- 10 -----------------------------------------------------------------------


def _prov_rows(path: Path):
    for line in path.read_text().splitlines():
        if line.strip():
            yield json.loads(line)


def _splits_in(row: dict) -> set[str]:
    splits = {row.get("pattern_split")}
    splits.update(split for _, split in row.get("mention_splits", ()))
    splits.discard(None)
    splits.discard("")
    return splits


def test_criterion_10_unknown_isolation(grid):
    violations = []
    for seed in SEEDS:
        run_dir = grid / f"seed{seed}"
        data = run_dir / "data"
        for name in ("simulation", "train_initial_trn", "train_initial_dev"):
            for row in _prov_rows(data / f"{name}.prov.jsonl"):
                if "UNKNOWN" in _splits_in(row):
                    violations.append(f"seed{seed}/{name}#{row['index']}")
        for mode in ("rpm", "rm"):
            dump_dir = run_dir / f"sim_{mode}" / "train_learn"
            for prov_file in sorted(dump_dir.glob("*.prov.jsonl")):
                for row in _prov_rows(prov_file):
                    if "UNKNOWN" in _splits_in(row):
                        violations.append(f"seed{seed}/{mode}/{prov_file.name}#{row['index']}")
        for row in _prov_rows(data / "test_unknown.prov.jsonl"):
            if _splits_in(row) != {"UNKNOWN"}:
                violations.append(f"seed{seed}/test_unknown#{row['index']}")
    ok = not violations
    assert _verdict(10, "UNKNOWN-split isolation", ok, f"violations={len(violations)}")
