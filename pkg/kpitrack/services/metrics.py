# kpitrack/services/metrics.py
"""
Métricas de evaluación (exacta, semántica, por alineamiento y juez LLM)
y estadísticos de acuerdo entre evaluadores humanos.
"""

import logging
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Dict, Hashable, List, NamedTuple, Optional, Sequence

import krippendorff
import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import cohen_kappa_score

from kpitrack.core.errors import AgreementUndefinedError, KpiTrackError
from kpitrack.schemas.config import Thresholds
from kpitrack.schemas.corpus import ChunkRef
from kpitrack.schemas.extraction import KpiGroup
from kpitrack.schemas.matching import GoldGroup, MatchReport
from kpitrack.schemas.metrics import EvalCounts, EvalReport, HumanEvalSummary, HumanJudgment, Score
from kpitrack.services.extraction import load_json_object
from kpitrack.services.matching import align, dedupe_supersets
from kpitrack.services.prompts import JUDGE_TEMPLATE
from kpitrack.services.providers import Provider
from kpitrack.services.similarity import Scorer, batch_score

logger = logging.getLogger(__name__)


class ChunkEvaluation(BaseModel):
    """Predicciones y golds de un chunk (sin superconjuntos) con su alineamiento."""
    chunk_ref: Optional[ChunkRef] = None
    predictions: List[KpiGroup] = Field(default_factory=list)
    golds: List[GoldGroup] = Field(default_factory=list)
    report: MatchReport = Field(default_factory=MatchReport)
    context: str = ""


def evaluate_chunk(
    preds: Sequence[KpiGroup],
    golds: Sequence[GoldGroup],
    scorer: Scorer,
    thresholds: Optional[Thresholds] = None,
    chunk_ref: Optional[ChunkRef] = None,
    context: str = "",
) -> ChunkEvaluation:
    preds = dedupe_supersets(list(preds))
    golds = dedupe_supersets(list(golds))
    return ChunkEvaluation(
        chunk_ref=chunk_ref,
        predictions=preds,
        golds=golds,
        report=align(preds, golds, scorer, thresholds, chunk_ref=chunk_ref),
        context=context,
    )


# ***************************************************************
# 1. F1 (agregado micro sobre todos los chunks)
# ***************************************************************
def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


def make_score(precision: float, recall: float) -> Score:
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Score(precision=min(1.0, precision), recall=min(1.0, recall), f1=min(1.0, f1))


def _ws(text: str) -> str:
    return " ".join(text.split())


def exact_f1(chunks: Sequence[ChunkEvaluation]) -> Score:
    """Par exacto: etiqueta y source value iguales tras normalizar espacios."""
    hits = n_preds = n_golds = 0
    for chunk in chunks:
        pred_keys = Counter((_ws(p.label), _ws(p.source_value)) for p in chunk.predictions)
        gold_keys = Counter((_ws(g.label), _ws(g.source_value)) for g in chunk.golds)
        # Intersección de multiconjuntos = emparejamiento greedy uno a uno
        hits += sum((pred_keys & gold_keys).values())
        n_preds += len(chunk.predictions)
        n_golds += len(chunk.golds)
    return make_score(_ratio(hits, n_preds), _ratio(hits, n_golds))


def semantic_f1(chunks: Sequence[ChunkEvaluation], scorer: Scorer) -> Score:
    """Media de la similaridad máxima de cada predicción a un gold, y viceversa."""
    pred_total = gold_total = 0.0
    n_preds = n_golds = 0
    for chunk in chunks:
        preds, golds = chunk.predictions, chunk.golds
        n_preds += len(preds)
        n_golds += len(golds)
        if not preds or not golds:
            continue
        sims = np.array(
            batch_score(scorer, [(p.label, g.label) for p in preds for g in golds])
        ).reshape(len(preds), len(golds))
        pred_total += float(sims.max(axis=1).sum())
        gold_total += float(sims.max(axis=0).sum())
    return make_score(_ratio(pred_total, n_preds), _ratio(gold_total, n_golds))


def match_f1(chunks: Sequence[ChunkEvaluation]) -> Score:
    """Similaridad de etiqueta de los pares alineados por valor; sin par cuenta 0."""
    pred_total = gold_total = 0.0
    n_preds = n_golds = 0
    for chunk in chunks:
        n_preds += len(chunk.predictions)
        n_golds += len(chunk.golds)
        best_by_pred: Dict[int, float] = {}
        for pair in chunk.report.pairs:
            best_by_pred[pair.prediction] = max(best_by_pred.get(pair.prediction, 0.0), pair.label_similarity)
            gold_total += pair.label_similarity
        pred_total += sum(best_by_pred.values())
    return make_score(_ratio(pred_total, n_preds), _ratio(gold_total, n_golds))


# ***************************************************************
# 2. Juez LLM
# ***************************************************************
def build_judge_prompt(context: str, value: str, gold_label: str, pred_label: str) -> str:
    return JUDGE_TEMPLATE.format(
        context_text=context,
        value_str=value,
        gt_label=gold_label,
        pred_label=pred_label,
    )


_VERDICT = re.compile(r'"?is_equivalent"?\s*:\s*"?(true|false)"?', re.IGNORECASE)


def parse_verdict(raw: str) -> Optional[bool]:
    """True/False del veredicto; None si no se puede interpretar."""
    try:
        verdict = load_json_object(raw).get("is_equivalent")
    except KpiTrackError:
        verdict = None
    if isinstance(verdict, bool):
        return verdict
    if isinstance(verdict, str) and verdict.strip().lower() in ("true", "false"):
        return verdict.strip().lower() == "true"
    match = _VERDICT.search(raw or "")
    return match.group(1).lower() == "true" if match else None


class JudgeOutcome(NamedTuple):
    # None cuando alguna llamada al juez falló
    rate: Optional[float]
    equivalent: int
    pairs: int
    failed: int = 0


def judge_rate(chunks: Sequence[ChunkEvaluation], judge: Provider, parallelism: int = 1) -> JudgeOutcome:
    """
    Pares alineados que el juez considera equivalentes, sobre el total de golds.
    Un veredicto ilegible cuenta como no equivalente; una llamada fallida deja
    la tasa sin definir.
    """
    prompts = []
    for chunk in chunks:
        for pair in chunk.report.pairs:
            pred = chunk.predictions[pair.prediction]
            gold = chunk.golds[pair.gold]
            prompts.append(build_judge_prompt(
                chunk.context or pred.source, gold.source_value, gold.label, pred.label
            ))
    n_golds = sum(len(c.golds) for c in chunks)

    def ask(prompt: str) -> Optional[bool]:
        try:
            raw = judge.complete(prompt, None).text
        except KpiTrackError as e:
            logger.error("%s: llamada al juez fallida: %s", judge.model_id, e.detail)
            return None
        verdict = parse_verdict(raw)
        if verdict is None:
            logger.warning("%s: veredicto ilegible, par no equivalente: %r", judge.model_id, raw[:200])
            return False
        return verdict

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        verdicts = list(pool.map(ask, prompts))
    failed = sum(v is None for v in verdicts)
    equivalent = sum(v is True for v in verdicts)
    if failed:
        logger.error("%s: %d de %d llamadas fallidas, judge_rate sin definir", judge.model_id, failed, len(prompts))
    return JudgeOutcome(
        rate=None if failed else _ratio(equivalent, n_golds),
        equivalent=equivalent,
        pairs=len(prompts),
        failed=failed,
    )


def evaluate_model(
    model_id: str,
    chunks: Sequence[ChunkEvaluation],
    scorer: Scorer,
    judge: Optional[Provider] = None,
    judge_parallelism: int = 1,
    excluded_chunks: Sequence[ChunkRef] = (),
) -> EvalReport:
    exact = exact_f1(chunks)
    semantic = semantic_f1(chunks, scorer)
    matched = match_f1(chunks)
    counts = EvalCounts(
        predictions=sum(len(c.predictions) for c in chunks),
        golds=sum(len(c.golds) for c in chunks),
        pairs=sum(len(c.report.pairs) for c in chunks),
    )
    rate = None
    if judge is not None:
        outcome = judge_rate(chunks, judge, judge_parallelism)
        rate = outcome.rate
        counts.judged_equivalent = outcome.equivalent
        counts.judge_failed = outcome.failed
    else:
        logger.info("%s: sin juez configurado, judge_rate omitido", model_id)
    return EvalReport(
        model_id=model_id,
        exact_f1=exact.f1,
        semantic_f1=semantic.f1,
        match_f1=matched.f1,
        judge_rate=rate,
        judge_skipped=judge is None,
        judge_incomplete=counts.judge_failed > 0,
        counts=counts,
        scores={"exact": exact, "semantic": semantic, "match": matched},
        excluded_chunks=[str(ref) for ref in excluded_chunks],
    )


def format_eval_table(reports: Sequence[EvalReport]) -> str:
    """Tabla de ancho fijo con los puntajes en porcentaje."""
    def pct(value: Optional[float]) -> str:
        return "-" if value is None else f"{100 * value:.1f}"

    frame = pd.DataFrame(
        [
            {
                "Model": r.model_id,
                "Exact": pct(r.exact_f1),
                "Semantic": pct(r.semantic_f1),
                "Match": pct(r.match_f1),
                "LLM Judge": pct(r.judge_rate),
            }
            for r in reports
        ],
        columns=["Model", "Exact", "Semantic", "Match", "LLM Judge"],
    )
    return frame.to_string(index=False)


# ***************************************************************
# 3. Acuerdo entre evaluadores
# ***************************************************************
def _encode(judgments: Sequence[Sequence[Optional[Hashable]]]) -> np.ndarray:
    labels = sorted({v for row in judgments for v in row if v is not None}, key=str)
    index = {label: i for i, label in enumerate(labels)}
    return np.array(
        [[np.nan if v is None else index[v] for v in row] for row in judgments],
        dtype=float,
    )


def krippendorff_alpha(judgments: Sequence[Sequence[Optional[Hashable]]]) -> float:
    """Alpha nominal sobre una matriz evaluador x ítem (None = faltante)."""
    if len(judgments) < 2:
        raise AgreementUndefinedError("Se requieren al menos dos evaluadores.")
    data = _encode(judgments)
    pairable = (~np.isnan(data)).sum(axis=0) >= 2
    if not pairable.any():
        raise AgreementUndefinedError("Ningún ítem tiene dos o más valoraciones.")
    values = data[:, pairable]
    if len(np.unique(values[~np.isnan(values)])) == 1:
        # Un único valor: acuerdo perfecto
        return 1.0
    return float(krippendorff.alpha(reliability_data=data, level_of_measurement="nominal"))


def cohen_kappa(rater_a: Sequence[Hashable], rater_b: Sequence[Hashable]) -> float:
    if len(rater_a) != len(rater_b):
        raise ValueError("Las listas de los evaluadores deben tener el mismo largo.")
    if not rater_a:
        raise AgreementUndefinedError("Sin ítems compartidos.")
    n = len(rater_a)
    count_a, count_b = Counter(rater_a), Counter(rater_b)
    expected = sum(count_a[label] * count_b[label] for label in count_a) / (n * n)
    if np.isclose(expected, 1.0):
        raise AgreementUndefinedError("Acuerdo esperado igual a 1: kappa indefinido.")
    labels = [str(v) for v in rater_a], [str(v) for v in rater_b]
    return float(cohen_kappa_score(*labels))


def _ratings_by_rater(rows: Sequence[HumanJudgment]) -> Dict[str, Dict[str, str]]:
    ratings: Dict[str, Dict[str, str]] = defaultdict(dict)
    for row in rows:
        ratings[row.rater][row.item] = row.label.strip().lower()
    return dict(ratings)


def pairwise_cohen_kappa(rows: Sequence[HumanJudgment]) -> Dict[str, float]:
    """Kappa de cada par de evaluadores sobre sus ítems compartidos."""
    ratings = _ratings_by_rater(rows)
    result = {}
    for a, b in combinations(sorted(ratings), 2):
        shared = sorted(ratings[a].keys() & ratings[b].keys())
        try:
            result[f"{a}|{b}"] = cohen_kappa(
                [ratings[a][i] for i in shared], [ratings[b][i] for i in shared]
            )
        except AgreementUndefinedError as e:
            logger.warning("kappa %s|%s omitido: %s", a, b, e.detail)
    return result


POSITIVE_LABELS = frozenset({"yes", "true", "correct", "1"})


def human_eval_summary(rows: Sequence[HumanJudgment]) -> HumanEvalSummary:
    ratings = _ratings_by_rater(rows)
    raters = sorted(ratings)
    items = sorted({row.item for row in rows})
    matrix = [[ratings[r].get(i) for i in items] for r in raters]
    pairwise = pairwise_cohen_kappa(rows)

    agreements = []
    for a, b in combinations(raters, 2):
        agreements.extend(ratings[a][i] == ratings[b][i] for i in ratings[a].keys() & ratings[b].keys())

    labels = [label for r in raters for label in ratings[r].values()]
    positives = sum(label in POSITIVE_LABELS for label in labels)
    return HumanEvalSummary(
        raters=len(raters),
        items=len(items),
        krippendorff_alpha=krippendorff_alpha(matrix),
        mean_cohen_kappa=float(np.mean(list(pairwise.values()))) if pairwise else 0.0,
        pairwise_kappa=pairwise,
        raw_agreement=float(np.mean(agreements)) if agreements else 0.0,
        precision=_ratio(positives, len(labels)),
        positives=positives,
        judgments=len(labels),
    )
