from __future__ import annotations

import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from slotlab.concepts import Concept, TaggedUtterance
from slotlab.resources import Mention, Pattern, tokenize_template


def tagged(text: str, **kwargs) -> TaggedUtterance:
    """Build a TaggedUtterance from bracket notation.

    "i want [soy sauce|ingredient] , hold the [eggs|negative_ingredient]"
    """
    tokens: list[str] = []
    tags: list[str] = []
    for piece in re.split(r"(\[[^]]+\])", text):
        if piece.startswith("["):
            surface, label = piece[1:-1].rsplit("|", 1)
            toks = surface.split()
            tags.append("B-" + label)
            tags.extend(["I-" + label] * (len(toks) - 1))
            tokens.extend(toks)
        else:
            toks = piece.split()
            tokens.extend(toks)
            tags.extend(["O"] * len(toks))
    return TaggedUtterance(tokens=tuple(tokens), tags=tuple(tags), **kwargs)


def concept(label: str, mention: str, start: int) -> Concept:
    toks = tuple(mention.split())
    return Concept(label, toks, (start, start + len(toks)))


def pattern(pid: str, template: str, split: str | None = None) -> Pattern:
    return Pattern(id=pid, template=tokenize_template(template), split=split)


def mention(surface: str, ctype: str, frequency: int = 1, split: str | None = None) -> Mention:
    return Mention(
        surface=tuple(surface.split()), concept_type=ctype, frequency=frequency, split=split
    )


@pytest.fixture
def toy_patterns() -> list[Pattern]:
    return [
        pattern("t01", "i want recipes with $ingredient"),
        pattern("t02", "show me a $recipe_type with $ingredient"),
        pattern("t03", "i want recipes without $negative_ingredient"),
        pattern("t04", "suggest a $recipe_type for $meal"),
        pattern("t05", "what do people cook in $origin ?"),
        pattern("t06", "tonight i have a $event , can you suggest me something to prepare ?"),
        pattern("t07", "show me $preparation_technique $ingredient ideas"),
        pattern("t08", "i am in the mood for $origin_adjective dishes"),
        pattern("t09", "my guest is $other_category , what should i cook ?"),
        pattern("t10", "give me $meal recipes with $ingredient"),
    ]


@pytest.fixture
def toy_mentions() -> list[Mention]:
    rows = [
        ("pasta", "ingredient", 50), ("eggs", "ingredient", 40),
        ("chocolate", "ingredient", 30), ("soy sauce", "ingredient", 20),
        ("seitan", "ingredient", 1), ("bananas", "ingredient", 25),
        ("tofu", "ingredient", 3), ("peppers", "ingredient", 12),
        ("cake", "recipe_type", 50), ("soup", "recipe_type", 30),
        ("stew", "recipe_type", 10), ("pie", "recipe_type", 8),
        ("grilled", "preparation_technique", 20), ("steamed", "preparation_technique", 10),
        ("italy", "origin", 20), ("japan", "origin", 10),
        ("italian", "origin_adjective", 20), ("thai", "origin_adjective", 10),
        ("dinner", "meal", 30), ("brunch", "meal", 10),
        ("barbecue", "event", 20), ("picnic", "event", 10),
        ("vegan", "other_category", 20), ("kosher", "other_category", 5),
    ]
    return [mention(s, t, f) for s, t, f in rows]
