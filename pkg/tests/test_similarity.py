# tests/test_similarity.py

import math
import random

import pytest
from fastapi.testclient import TestClient

from kpitrack.core.errors import ConfigError
from kpitrack.schemas.config import ScorerConfig, ScorerKind
from kpitrack.services.similarity import (
    CrossEncoderScorer,
    LexicalScorer,
    batch_score,
    build_scorer,
    char_trigrams,
    gestalt_ratio,
    score,
)

LABELS = [
    "free cash flow", "Free Cash Flow", "net revenue", "net revenues", "revenue",
    "operating margin", "gross margin", "iPhone revenue", "Services revenue", "eps",
]


# ***************************************************************
# 1. Backend léxico
# ***************************************************************
def test_identity_and_empty(lexical):
    assert score(lexical, "free cash flow", "free cash flow") == 1.0
    assert score(lexical, "", "revenue") == 0.0
    assert score(lexical, "revenue", "   ") == 0.0


def test_net_revenue_trigram_cosine(lexical):
    # 9 trigramas compartidos sobre normas 9 y 10
    assert score(lexical, "net revenue", "net revenues") == pytest.approx(9 / math.sqrt(90), abs=1e-12)


def test_lexical_invariances(lexical):
    assert score(lexical, "  Net   Revenue ", "net revenue") == 1.0
    for a in LABELS:
        for b in LABELS:
            value = score(lexical, a, b)
            assert 0.0 <= value <= 1.0
            assert value == score(lexical, b, a)


def test_short_strings_are_single_grams():
    assert char_trigrams("ab") == {"ab": 1}
    assert char_trigrams("") == {}


def test_batch_score_matches_single_calls(lexical):
    assert batch_score(lexical, []) == []
    assert batch_score(lexical, [("rev", "rev"), ("rev", "")]) == [1.0, 0.0]
    rng = random.Random(7)
    pairs = [(rng.choice(LABELS), rng.choice(LABELS)) for _ in range(40)]
    fresh = LexicalScorer()
    assert batch_score(lexical, pairs) == [score(fresh, a, b) for a, b in pairs]


# ***************************************************************
# 2. Gestalt
# ***************************************************************
def _oracle_matches(a: str, b: str) -> int:
    """Ratcliff/Obershelp recursivo sobre la subcadena común más larga."""
    if not a or not b:
        return 0
    best = (0, 0, 0)
    for i in range(len(a)):
        for j in range(len(b)):
            k = 0
            while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                k += 1
            if k > best[2]:
                best = (i, j, k)
    i, j, k = best
    if k == 0:
        return 0
    return k + _oracle_matches(a[:i], b[:j]) + _oracle_matches(a[i + k:], b[j + k:])


@pytest.mark.parametrize("a, b, expected", [
    ("record", "record", 1.0),
    ("record", "record high", 12 / 17),
    ("abc", "xyz", 0.0),
    ("Record", "record", 1.0),
    ("", "", 1.0),
])
def test_gestalt_known_values(a, b, expected):
    assert gestalt_ratio(a, b) == pytest.approx(expected, abs=1e-4)


def test_gestalt_gate_for_record_high():
    assert gestalt_ratio("record", "record high") < 0.8


def test_gestalt_against_oracle():
    words = ["record high", "record", "strong growth", "growth", "stable rate", "increase", "decline"]
    for a in words:
        for b in words:
            matches = max(_oracle_matches(a, b), _oracle_matches(b, a))
            expected = 2 * matches / (len(a) + len(b))
            assert gestalt_ratio(a, b) == pytest.approx(expected, abs=1e-9)
            assert gestalt_ratio(a, b) == gestalt_ratio(b, a)


# ***************************************************************
# 3. Backend remoto
# ***************************************************************
def test_cross_encoder_batches_and_clamps(scorer_app):
    config = ScorerConfig(kind=ScorerKind.cross_encoder_remote, endpoint="http://testserver/score", batch_size=2)
    scorer = build_scorer(config, client=TestClient(scorer_app))
    assert isinstance(scorer, CrossEncoderScorer)
    pairs = [("REV", "rev"), ("EPS", "margin"), ("FCF", "fcf")]
    assert batch_score(scorer, pairs) == [1.0, 0.0, 1.0]
    assert scorer_app.state.calls == 2
    # Memo en memoria: no vuelve a llamar
    assert score(scorer, "REV", "rev") == 1.0
    assert scorer_app.state.calls == 2


def test_remote_scorer_needs_endpoint():
    with pytest.raises(ConfigError):
        build_scorer(ScorerConfig(kind=ScorerKind.cross_encoder_remote))


def test_default_scorer_is_lexical():
    assert isinstance(build_scorer(ScorerConfig()), LexicalScorer)
