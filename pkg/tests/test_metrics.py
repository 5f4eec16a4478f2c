# tests/test_metrics.py

import random
from collections import Counter
from itertools import permutations

import pytest

from kpitrack.core.errors import AgreementUndefinedError
from kpitrack.schemas.matching import MatchKind, MatchPair, MatchReport
from kpitrack.schemas.metrics import EvalReport, HumanJudgment
from kpitrack.services.metrics import (
    ChunkEvaluation,
    build_judge_prompt,
    cohen_kappa,
    evaluate_chunk,
    evaluate_model,
    exact_f1,
    format_eval_table,
    human_eval_summary,
    judge_rate,
    krippendorff_alpha,
    match_f1,
    pairwise_cohen_kappa,
    parse_verdict,
    semantic_f1,
)
from tests.helpers import ScriptedJudge, TableScorer, make_gold, make_group, make_ref, verdict


# ***************************************************************
# 1. F1
# ***************************************************************
def test_exact_f1_partial_overlap():
    chunk = ChunkEvaluation(
        predictions=[make_group("revenue", 5.0), make_group("margin", 0.3)],
        golds=[make_gold("revenue", 5.0), make_gold("eps", 1.2), make_gold("capex", 9.0)],
    )
    score = exact_f1([chunk])
    assert score.precision == 0.5
    assert score.recall == pytest.approx(1 / 3)
    assert score.f1 == pytest.approx(0.4)


def test_exact_f1_normalizes_whitespace():
    chunk = ChunkEvaluation(
        predictions=[make_group("net  revenue", 5.0, source_value="$5  billion")],
        golds=[make_gold("net revenue", 5e9, source_value="$5 billion")],
    )
    assert exact_f1([chunk]).f1 == 1.0


def test_f1_identical_and_disjoint(lexical):
    labels = [("revenue", 5.0), ("operating margin", 0.31), ("eps", 1.25)]
    preds = [make_group(label, value) for label, value in labels]
    golds = [make_gold(label, value) for label, value in labels]
    same = evaluate_chunk(preds, golds, lexical)
    assert exact_f1([same]).f1 == 1.0
    assert semantic_f1([same], lexical).f1 == 1.0
    assert match_f1([same]).f1 == 1.0

    disjoint = evaluate_chunk([make_group("capex", 7.0)], [make_gold("dividend", 3.0)], TableScorer({}))
    assert exact_f1([disjoint]).f1 == 0.0
    assert semantic_f1([disjoint], TableScorer({})).f1 == 0.0
    assert match_f1([disjoint]).f1 == 0.0


def test_f1_empty_sides():
    assert exact_f1([]).f1 == 0.0
    chunk = ChunkEvaluation(golds=[make_gold("revenue", 5.0)])
    assert semantic_f1([chunk], TableScorer({})).precision == 0.0
    assert match_f1([chunk]).f1 == 0.0


def test_semantic_f1_many_to_one():
    scorer = TableScorer({("rev", "revenue"): 0.8, ("rev", "sales"): 0.6})
    chunk = ChunkEvaluation(
        predictions=[make_group("rev", 1.0)],
        golds=[make_gold("revenue", 1.0), make_gold("sales", 2.0)],
    )
    score = semantic_f1([chunk], scorer)
    assert score.precision == pytest.approx(0.8)
    assert score.recall == pytest.approx(0.7)
    assert score.f1 == pytest.approx(0.746667, abs=1e-6)


def test_match_f1_unpaired_count_zero():
    chunk = ChunkEvaluation(
        predictions=[make_group("revenue", 5.0), make_group("capex", 2.0)],
        golds=[make_gold("net revenue", 5.0), make_gold("eps", 1.0)],
        report=MatchReport(pairs=[MatchPair(prediction=0, gold=0, value_kind=MatchKind.exact, label_similarity=0.9)]),
    )
    score = match_f1([chunk])
    assert score.precision == pytest.approx(0.45)
    assert score.recall == pytest.approx(0.45)
    assert score.f1 == pytest.approx(0.45)


LABELS = ["revenue", "net revenue", "sales", "margin", "eps", "capex"]


def _random_chunk(rng, scorer):
    preds = [make_group(rng.choice(LABELS), float(rng.randint(1, 4))) for _ in range(rng.randint(0, 5))]
    golds = [make_gold(rng.choice(LABELS), float(rng.randint(1, 4))) for _ in range(rng.randint(0, 5))]
    return evaluate_chunk(preds, golds, scorer)


def _harmonic(p, r):
    return 2 * p * r / (p + r) if p + r else 0.0


def test_f1_formulas_against_direct_evaluation():
    rng = random.Random(11)
    for _ in range(100):
        table = {(a, b): round(rng.uniform(0.0, 0.99), 3) for i, a in enumerate(LABELS) for b in LABELS[i + 1:]}
        scorer = TableScorer(table)
        chunks = [_random_chunk(rng, scorer) for _ in range(3)]
        preds = [p for c in chunks for p in c.predictions]
        golds = [g for c in chunks for g in c.golds]

        sem_p = sum(max((scorer.score(p.label, g.label) for g in c.golds), default=0.0)
                    for c in chunks for p in c.predictions)
        sem_r = sum(max((scorer.score(p.label, g.label) for p in c.predictions), default=0.0)
                    for c in chunks for g in c.golds)
        sem_p = sem_p / len(preds) if preds else 0.0
        sem_r = sem_r / len(golds) if golds else 0.0
        assert semantic_f1(chunks, scorer).f1 == pytest.approx(_harmonic(sem_p, sem_r), abs=1e-12)

        matched = sum(p.label_similarity for c in chunks for p in c.report.pairs)
        match_p = matched / len(preds) if preds else 0.0
        match_r = matched / len(golds) if golds else 0.0
        assert match_f1(chunks).f1 == pytest.approx(_harmonic(match_p, match_r), abs=1e-12)

        hits = sum(
            sum((Counter((p.label, p.source_value) for p in c.predictions)
                 & Counter((g.label, g.source_value) for g in c.golds)).values())
            for c in chunks
        )
        exact_p = hits / len(preds) if preds else 0.0
        exact_r = hits / len(golds) if golds else 0.0
        assert exact_f1(chunks).f1 == pytest.approx(_harmonic(exact_p, exact_r), abs=1e-12)
        # Los pares exactos son pares alineados con similaridad 1
        assert exact_f1(chunks).f1 <= match_f1(chunks).f1 + 1e-12


def test_f1_permutation_invariant(lexical):
    preds = [make_group("revenue", 5.0), make_group("net revenue", 5.0), make_group("eps", 1.0)]
    golds = [make_gold("revenues", 5.0), make_gold("eps", 1.0)]
    reference = None
    for order in permutations(range(3)):
        chunk = evaluate_chunk([preds[i] for i in order], golds[::-1], lexical)
        scores = (exact_f1([chunk]).f1, semantic_f1([chunk], lexical).f1, match_f1([chunk]).f1)
        reference = reference or scores
        assert scores == pytest.approx(reference, abs=1e-12)


# ***************************************************************
# 2. Juez LLM
# ***************************************************************
def test_judge_prompt_fields():
    prompt = build_judge_prompt("Revenue was $5B.", "$5B", "revenue", "total revenue")
    assert 'Ground Truth Label: "revenue"' in prompt
    assert 'Model Prediction Label: "total revenue"' in prompt
    assert "SHARED VALUE: $5B" in prompt
    assert 'CONTEXT TEXT:\n""' in build_judge_prompt("", "1", "a", "b")
    assert build_judge_prompt("c", "v", "g", "p") == build_judge_prompt("c", "v", "g", "p")


@pytest.mark.parametrize("raw, expected", [
    ('{"reasoning": "same", "is_equivalent": true}', True),
    ('```json\n{"reasoning": "diff", "is_equivalent": false}\n```', False),
    ('{"is_equivalent": "True"}', True),
    ('verdict: "is_equivalent": false (broken json', False),
    ("YES", None),
])
def test_parse_verdict(raw, expected):
    assert parse_verdict(raw) is expected


def _judged_chunk():
    labels = ["a", "b", "c"]
    preds = [make_group(f"pred {x}", float(i)) for i, x in enumerate(labels)]
    golds = [make_gold(f"gold {x}", float(i)) for i, x in enumerate(labels)]
    golds += [make_gold("gold d", 10.0), make_gold("gold e", 11.0)]
    return evaluate_chunk(preds, golds, TableScorer({}, default=0.5))


def test_judge_rate_over_golds():
    chunk = _judged_chunk()
    assert len(chunk.report.pairs) == 3
    judge = ScriptedJudge({"pred a": verdict(True), "pred b": verdict(False), "pred c": verdict(True)})
    outcome = judge_rate([chunk], judge, parallelism=2)
    assert outcome.rate == pytest.approx(0.4)
    assert outcome.equivalent == 2
    assert outcome.pairs == 3


def test_judge_unreadable_verdict_counts_as_not_equivalent():
    judge = ScriptedJudge({"pred a": verdict(True)})
    assert judge_rate([_judged_chunk()], judge).equivalent == 1


def test_judge_failed_call_leaves_rate_undefined():
    judge = ScriptedJudge({"pred a": verdict(True), "pred c": verdict(True)}, failing=["pred b"])
    outcome = judge_rate([_judged_chunk()], judge)
    assert outcome.rate is None
    assert outcome.failed == 1
    assert outcome.equivalent == 2


def test_evaluate_model_flags_judge_outage():
    chunk = evaluate_chunk([make_group("revenue", 5.0)], [make_gold("revenue", 5.0)], TableScorer({}))
    report = evaluate_model("m1", [chunk], TableScorer({}), judge=ScriptedJudge({}, failing=["revenue"]))
    assert report.counts.pairs == 1
    assert report.judge_rate is None
    assert report.judge_incomplete and not report.judge_skipped
    assert report.counts.judge_failed == 1 and report.counts.judged_equivalent == 0


def test_judge_no_pairs():
    chunk = evaluate_chunk([], [make_gold("revenue", 1.0)], TableScorer({}))
    assert judge_rate([chunk], ScriptedJudge({})).rate == 0.0


def test_evaluate_model_without_judge(lexical):
    chunk = evaluate_chunk([make_group("revenue", 5.0)], [make_gold("revenue", 5.0)], lexical, chunk_ref=make_ref())
    report = evaluate_model("m1", [chunk], lexical, excluded_chunks=[make_ref(index=3)])
    assert report.judge_rate is None and report.judge_skipped
    assert report.exact_f1 == 1.0
    assert report.counts.pairs == 1
    assert report.excluded_chunks == ["AAPL/FY2023Q1#3"]


def test_evaluate_model_with_judge():
    report = evaluate_model(
        "m1", [_judged_chunk()], TableScorer({}, default=0.5),
        judge=ScriptedJudge({"pred a": verdict(True), "pred b": verdict(True), "pred c": verdict(True)}),
    )
    assert report.judge_rate == pytest.approx(0.6)
    assert report.counts.judged_equivalent == 3
    assert report.counts.judged_equivalent <= report.counts.pairs <= report.counts.golds


def test_format_eval_table():
    table = format_eval_table([
        EvalReport(model_id="m1", exact_f1=0.032, semantic_f1=0.616, match_f1=0.5, judge_rate=None),
        EvalReport(model_id="m2", exact_f1=0.115, semantic_f1=0.381, match_f1=0.25, judge_rate=0.4),
    ])
    lines = table.splitlines()
    assert lines[0].split() == ["Model", "Exact", "Semantic", "Match", "LLM", "Judge"]
    assert lines[1].split() == ["m1", "3.2", "61.6", "50.0", "-"]
    assert lines[2].split() == ["m2", "11.5", "38.1", "25.0", "40.0"]


# ***************************************************************
# 3. Acuerdo entre evaluadores
# ***************************************************************
def _alpha_oracle(matrix):
    """Alpha nominal por matriz de coincidencias."""
    coincidences = Counter()
    for column in zip(*matrix):
        values = [v for v in column if v is not None]
        m = len(values)
        if m < 2:
            continue
        for i, a in enumerate(values):
            for j, b in enumerate(values):
                if i != j:
                    coincidences[(a, b)] += 1 / (m - 1)
    n = sum(coincidences.values())
    totals = Counter()
    for (a, _), count in coincidences.items():
        totals[a] += count
    observed = sum(c for (a, b), c in coincidences.items() if a != b)
    expected = sum(totals[a] * totals[b] for a in totals for b in totals if a != b)
    return 1 - (n - 1) * observed / expected


def test_alpha_perfect_and_single_value():
    assert krippendorff_alpha([["A", "B", "A"], ["A", "B", "A"]]) == pytest.approx(1.0)
    assert krippendorff_alpha([["A"], ["A"], ["A"]]) == 1.0


def test_alpha_four_items():
    matrix = [["A", "A", "B", "B"], ["A", "B", "B", "A"]]
    assert krippendorff_alpha(matrix) == pytest.approx(0.125, abs=1e-9)
    assert _alpha_oracle(matrix) == pytest.approx(0.125, abs=1e-9)


def test_alpha_undefined():
    with pytest.raises(AgreementUndefinedError):
        krippendorff_alpha([["A", "B"]])
    with pytest.raises(AgreementUndefinedError):
        krippendorff_alpha([["A", None], [None, "B"]])


def test_alpha_against_oracle_on_random_matrices():
    rng = random.Random(5)
    checked = 0
    while checked < 50:
        raters, items = rng.randint(2, 4), rng.randint(4, 10)
        matrix = [
            [None if rng.random() < 0.15 else rng.choice("ABC") for _ in range(items)]
            for _ in range(raters)
        ]
        pairable = [
            v for column in zip(*matrix) if sum(x is not None for x in column) >= 2
            for v in column if v is not None
        ]
        if len(set(pairable)) < 2:
            continue
        assert krippendorff_alpha(matrix) == pytest.approx(_alpha_oracle(matrix), abs=1e-9)
        checked += 1


def _kappa_oracle(a, b):
    n = len(a)
    po = sum(x == y for x, y in zip(a, b)) / n
    ca, cb = Counter(a), Counter(b)
    pe = sum(ca[k] * cb[k] for k in ca) / (n * n)
    return (po - pe) / (1 - pe)


def test_cohen_kappa_worked_case():
    a = ["yes"] * 5 + ["no"] * 5
    b = ["yes", "yes", "yes", "no", "no", "yes", "yes", "no", "no", "no"]
    assert cohen_kappa(a, b) == pytest.approx(0.2, abs=1e-9)
    assert cohen_kappa(a, a) == pytest.approx(1.0)


def test_cohen_kappa_against_oracle():
    rng = random.Random(9)
    checked = 0
    while checked < 50:
        n = rng.randint(5, 20)
        a = [rng.choice("xyz") for _ in range(n)]
        b = [rng.choice("xyz") for _ in range(n)]
        if len(set(a)) == 1 and set(a) == set(b):
            continue
        assert cohen_kappa(a, b) == pytest.approx(_kappa_oracle(a, b), abs=1e-9)
        checked += 1


def test_cohen_kappa_errors():
    with pytest.raises(ValueError):
        cohen_kappa(["a"], ["a", "b"])
    with pytest.raises(AgreementUndefinedError):
        cohen_kappa([], [])
    with pytest.raises(AgreementUndefinedError):
        cohen_kappa(["yes", "yes"], ["yes", "yes"])


def _rows(table):
    return [
        HumanJudgment(item=f"i{i}", rater=rater, label=label)
        for rater, labels in table.items()
        for i, label in enumerate(labels)
        if label is not None
    ]


def test_pairwise_kappa_skips_undefined_pairs():
    rows = _rows({
        "ana": ["yes", "yes", "no", "no"],
        "ben": ["yes", "no", "no", "no"],
        "cy": ["yes", "yes", "yes", "yes"],
        "dee": ["yes", "yes", "yes", "yes"],
    })
    kappas = pairwise_cohen_kappa(rows)
    # cy y dee usan una sola etiqueta: acuerdo esperado 1
    assert set(kappas) == {"ana|ben", "ana|cy", "ana|dee", "ben|cy", "ben|dee"}
    assert kappas["ana|ben"] == pytest.approx(0.5)
    assert kappas["ana|cy"] == pytest.approx(0.0)


def test_human_eval_summary():
    rows = _rows({
        "ana": ["yes", "yes", "no", "yes"],
        "ben": ["yes", "no", "no", None],
    })
    summary = human_eval_summary(rows)
    assert summary.raters == 2 and summary.items == 4
    assert summary.judgments == 7 and summary.positives == 4
    assert summary.precision == pytest.approx(4 / 7)
    assert summary.raw_agreement == pytest.approx(2 / 3)
    assert summary.pairwise_kappa["ana|ben"] == pytest.approx(_kappa_oracle(["yes", "yes", "no"], ["yes", "no", "no"]))
    assert summary.mean_cohen_kappa == summary.pairwise_kappa["ana|ben"]
    matrix = [["yes", "yes", "no", "yes"], ["yes", "no", "no", None]]
    assert summary.krippendorff_alpha == pytest.approx(_alpha_oracle(matrix), abs=1e-9)
