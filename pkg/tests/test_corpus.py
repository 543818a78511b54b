from __future__ import annotations

import pytest

from conftest import mention, pattern
from slotlab.concepts import validate_bio
from slotlab.corpus import (
    Composition,
    RenderError,
    ablate_kb,
    generate_dataset,
    load_dataset,
    render_pattern,
    save_dataset,
    scan_forbidden_splits,
    simulation_composition,
    split_in_two,
    split_resources,
    initial_test_composition,
    unknown_test_composition,
)
from slotlab.errors import ConfigError, DataError
from slotlab.resources import KnowledgeBase


@pytest.fixture
def bundle(toy_patterns, toy_mentions):
    return split_resources(toy_patterns, toy_mentions, (0.6, 0.2, 0.2), seed=1)


def test_split_sizes_follow_ratios(toy_patterns, toy_mentions):
    bundle = split_resources(toy_patterns, toy_mentions, (0.6, 0.2, 0.2), seed=1)
    assert tuple(len(bundle.patterns[s]) for s in ("INITIAL", "LEARN", "UNKNOWN")) == (6, 2, 2)


def test_split_is_pairwise_disjoint(bundle):
    for kind in ("patterns", "mentions"):
        pools = getattr(bundle, kind)
        ids = {
            split: {getattr(x, "id", None) or x.surface for x in items}
            for split, items in pools.items()
        }
        assert not ids["INITIAL"] & ids["LEARN"]
        assert not ids["INITIAL"] & ids["UNKNOWN"]
        assert not ids["LEARN"] & ids["UNKNOWN"]


def test_split_is_deterministic(toy_patterns, toy_mentions):
    a = split_resources(toy_patterns, toy_mentions, (0.6, 0.2, 0.2), seed=7)
    b = split_resources(toy_patterns, toy_mentions, (0.6, 0.2, 0.2), seed=7)
    assert a == b


def test_distinct_seeds_give_distinct_disjoint_bundles(toy_patterns, toy_mentions):
    bundles = [
        split_resources(toy_patterns, toy_mentions, (0.6, 0.2, 0.2), seed=s)
        for s in (1, 2, 3, 4)
    ]
    signatures = {tuple(p.id for p in b.patterns["INITIAL"]) for b in bundles}
    assert len(signatures) == 4
    for b in bundles:
        initial = {p.id for p in b.patterns["INITIAL"]}
        assert not initial & {p.id for p in b.patterns["UNKNOWN"]}


def test_split_rejects_empty_resources(toy_patterns):
    with pytest.raises(ConfigError):
        split_resources([], [], (0.6, 0.2, 0.2), seed=1)
    with pytest.raises(ConfigError):
        split_resources(toy_patterns, [mention("x", "ingredient")], (0.5, 0.2, 0.2), seed=1)


def test_split_in_two_is_disjoint_and_stratified(toy_patterns, toy_mentions):
    (ap, am), (bp, bm) = split_in_two(toy_patterns, toy_mentions, 0.75, seed=3)
    assert len(ap) + len(bp) == len(toy_patterns)
    assert not {p.id for p in ap} & {p.id for p in bp}
    assert not {m.surface for m in am} & {m.surface for m in bm}


def test_render_pattern_event_example():
    p = pattern(
        "p1",
        "tonight i have a $event , can you suggest me something to prepare ?",
        split="INITIAL",
    )
    slot = p.open_slots[0]
    utt = render_pattern(p, {slot.position: mention("barbecue", "event", split="INITIAL")})
    assert utt.text == "tonight i have a barbecue , can you suggest me something to prepare ?"
    assert [(c.label, " ".join(c.mention)) for c in utt.concepts] == [("event", "barbecue")]


def test_render_pattern_with_fixed_literal_mention():
    p = pattern(
        "p2", "i'd like to prepare $ingredient $recipe_type for my son's $event=birthday"
    )
    s1, s2 = p.open_slots
    utt = render_pattern(
        p,
        {
            s1.position: mention("chocolate", "ingredient"),
            s2.position: mention("cake", "recipe_type"),
        },
    )
    assert [(c.label, " ".join(c.mention)) for c in utt.concepts] == [
        ("ingredient", "chocolate"),
        ("recipe_type", "cake"),
        ("event", "birthday"),
    ]


def test_render_pattern_negative_slot():
    p = pattern("p3", "i don't like $negative_ingredient")
    slot = p.open_slots[0]
    utt = render_pattern(p, {slot.position: mention("bananas", "ingredient")})
    assert [(c.label, " ".join(c.mention)) for c in utt.concepts] == [
        ("negative_ingredient", "bananas")
    ]


def test_render_pattern_rejects_type_mismatch():
    p = pattern("p4", "i want recipes with $ingredient")
    slot = p.open_slots[0]
    with pytest.raises(RenderError, match="wants ingredient"):
        render_pattern(p, {slot.position: mention("cake", "recipe_type")})


def test_generate_dataset_hits_mixing_rates(bundle):
    comp = simulation_composition(bundle, 0.7, 0.3)
    data = generate_dataset(comp, 2000, seed=5)
    assert len(data) == 2000
    new_pattern_rate = sum(u.provenance.new_pattern for u in data) / len(data)
    new_mention_rate = sum(u.provenance.new_mention for u in data) / len(data)
    assert abs(new_pattern_rate - 0.7) <= 0.03
    assert abs(new_mention_rate - 0.3) <= 0.03


def test_generate_dataset_pure_pool_contains_no_other_split(bundle):
    data = generate_dataset(initial_test_composition(bundle), 300, seed=6)
    learn_or_unknown = frozenset({"LEARN", "UNKNOWN"})
    assert scan_forbidden_splits(data, learn_or_unknown) == []


def test_generate_dataset_is_deterministic_and_bio_legal(bundle):
    comp = simulation_composition(bundle, 0.7, 0.3)
    a = generate_dataset(comp, 200, seed=5)
    b = generate_dataset(comp, 200, seed=5)
    assert a == b
    for utt in a:
        validate_bio(utt.tags)


def test_generate_dataset_rejects_empty_pools(bundle):
    comp = Composition(name="broken", base_patterns=(), base_mentions=())
    with pytest.raises(ConfigError, match="empty base pattern pool"):
        generate_dataset(comp, 10, seed=1)


def test_dev_style_mix_contains_unseen_patterns(toy_patterns, toy_mentions):
    (ap, am), (bp, bm) = split_in_two(toy_patterns, toy_mentions, 0.7, seed=2)
    comp = Composition(
        name="dev",
        base_patterns=tuple(ap),
        base_mentions=tuple(am),
        new_patterns=tuple(bp),
        new_mentions=tuple(bm),
        p_new_pattern=0.7,
        p_new_mention=0.3,
    )
    data = generate_dataset(comp, 300, seed=3)
    trn_ids = {p.id for p in ap}
    assert any(u.provenance.pattern_id not in trn_ids for u in data)


def test_ablate_kb_marks_least_frequent_ingredients():
    entries = [mention(f"ing{i:03d}", "ingredient", frequency=i + 1) for i in range(500)]
    entries.append(mention("cake", "recipe_type", frequency=1))
    kb = KnowledgeBase(entries)
    ablate_kb(kb, 0.4)
    assert kb.ablated_count == 200
    cutoff = sorted(i + 1 for i in range(500))[199]
    for surface in kb.ablated_surfaces:
        assert kb.type_of(surface) == "ingredient"
        assert kb.frequency_of(surface) <= cutoff
    assert kb.lookup(("cake",)) == "recipe_type"


def test_ablate_kb_zero_fraction_is_noop():
    kb = KnowledgeBase([mention("pasta", "ingredient", 5)])
    ablate_kb(kb, 0.0)
    assert kb.ablated_count == 0
    assert kb.lookup(("pasta",)) == "ingredient"


def test_ablated_surface_is_invisible_to_lookup():
    kb = KnowledgeBase([mention("seitan", "ingredient", 1), mention("tofu", "ingredient", 9)])
    ablate_kb(kb, 0.5)
    assert kb.lookup(("seitan",)) is None
    assert kb.lookup(("tofu",)) == "ingredient"


def test_dataset_files_round_trip(tmp_path, bundle):
    data = generate_dataset(simulation_composition(bundle, 0.7, 0.3), 50, seed=9)
    path = tmp_path / "sim.conll"
    save_dataset(data, path)
    loaded = load_dataset(path)
    assert loaded == data
    assert [u.provenance for u in loaded] == [u.provenance for u in data]


def test_dataset_loader_names_file_and_line_on_errors(tmp_path):
    bad = tmp_path / "broken.conll"
    bad.write_text("token\tB-ingredient\ntoken only\n")
    with pytest.raises(DataError, match=r"broken\.conll:2"):
        load_dataset(bad)


def unknown_test_composition_contains_only_unknown(bundle):
    data = generate_dataset(unknown_test_composition(bundle), 100, seed=4)
    allowed = frozenset({"INITIAL", "LEARN"})
    assert scan_forbidden_splits(data, allowed) == []
