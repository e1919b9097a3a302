"""Shared builders for tests: small matrices, random matrices, items."""

from __future__ import annotations

import random
import string

from langselect.datasets import Choice, DatasetId, McqItem
from langselect.languages import Language, canonical_sorted
from langselect.store import AnswerCell, CellStatus, ResponseMatrix

INVALID = "invalid"
MISSING = None

_COUNTRIES = ["China", "Mexico", "Azerbaijan", "Thailand", "France", None]


def make_item(item_id: str, gold: str = "A", country: str | None = None, n_choices: int = 4) -> McqItem:
    labels = string.ascii_uppercase[:n_choices]
    return McqItem(
        item_id=item_id,
        dataset_id=DatasetId.CUSTOM,
        question=f"question for {item_id}?",
        choices=tuple(Choice(lab, f"choice {lab} of {item_id}") for lab in labels),
        gold_label=gold,
        country=country,
    )


def make_matrix(
    item_rows: dict[str, dict[Language, object]],
    languages: list[Language] | None = None,
    gold: str = "A",
    wrong: str = "B",
) -> tuple[list[McqItem], ResponseMatrix]:
    """Rows map item -> language -> True/False/INVALID/MISSING."""
    if languages is None:
        languages = sorted({lang for row in item_rows.values() for lang in row}, key=lambda l: l.value)
    langs = tuple(canonical_sorted(languages))
    items = [make_item(item_id, gold=gold) for item_id in item_rows]
    cells: dict[tuple[str, Language], AnswerCell] = {}
    for item_id, row in item_rows.items():
        for lang in langs:
            value = row.get(lang, MISSING)
            if value is MISSING:
                cell = AnswerCell(None, False, CellStatus.MISSING)
            elif value == INVALID:
                cell = AnswerCell(None, False, CellStatus.INVALID_OUTPUT)
            elif value is True:
                cell = AnswerCell(gold, True, CellStatus.OK)
            else:
                cell = AnswerCell(wrong, False, CellStatus.OK)
            cells[(item_id, lang)] = cell
    matrix = ResponseMatrix(
        dataset_id="custom",
        model_name="test",
        languages=langs,
        items=tuple(item_rows),
        cells=cells,
        gold={item_id: gold for item_id in item_rows},
    )
    return items, matrix


def random_matrix(
    rng: random.Random,
    n_items: int,
    languages: list[Language],
    *,
    p_missing: float = 0.1,
    p_invalid: float = 0.1,
    p_correct: float = 0.4,
    n_choices: int = 4,
) -> tuple[list[McqItem], ResponseMatrix]:
    """Random matrix over real items; cells are ok/invalid/missing with the
    given probabilities and ok cells are correct with p_correct."""
    langs = tuple(canonical_sorted(languages))
    labels = string.ascii_uppercase[:n_choices]
    items = []
    cells: dict[tuple[str, Language], AnswerCell] = {}
    gold_map: dict[str, str] = {}
    for i in range(n_items):
        gold = rng.choice(labels)
        item = make_item(f"it{i:03d}", gold=gold, country=rng.choice(_COUNTRIES), n_choices=n_choices)
        items.append(item)
        gold_map[item.item_id] = gold
        for lang in langs:
            roll = rng.random()
            if roll < p_missing:
                cell = AnswerCell(None, False, CellStatus.MISSING)
            elif roll < p_missing + p_invalid:
                cell = AnswerCell(None, False, CellStatus.INVALID_OUTPUT)
            else:
                if rng.random() < p_correct:
                    cell = AnswerCell(gold, True, CellStatus.OK)
                else:
                    label = rng.choice([lab for lab in labels if lab != gold])
                    cell = AnswerCell(label, False, CellStatus.OK)
            cells[(item.item_id, lang)] = cell
    matrix = ResponseMatrix(
        dataset_id="custom",
        model_name="test",
        languages=langs,
        items=tuple(gold_map),
        cells=cells,
        gold=gold_map,
    )
    return items, matrix
