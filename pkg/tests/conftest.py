from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_matrix
from stub_server import StubServer

from langselect.datasets import Choice, DatasetId, McqItem
from langselect.languages import Language


@pytest.fixture
def dress_code_item() -> McqItem:
    return McqItem(
        item_id="blend/dress",
        dataset_id=DatasetId.BLEND,
        question="What is the common dress code for school teachers in Azerbaijan?",
        choices=(
            Choice("A", "apron"),
            Choice("B", "black formal suit"),
            Choice("C", "uniform"),
            Choice("D", "shirt"),
        ),
        gold_label="B",
        country="Azerbaijan",
    )


@pytest.fixture
def m1():
    """Items q1-q3 over {en, es, hi}: q1 correct only in en, q2 in es and hi,
    q3 nowhere."""
    rows = {
        "q1": {Language.ENGLISH: True, Language.SPANISH: False, Language.HINDI: False},
        "q2": {Language.ENGLISH: False, Language.SPANISH: True, Language.HINDI: True},
        "q3": {Language.ENGLISH: False, Language.SPANISH: False, Language.HINDI: False},
    }
    return make_matrix(rows)


@pytest.fixture
def stub():
    with StubServer() as server:
        yield server
