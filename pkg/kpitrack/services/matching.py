# kpitrack/services/matching.py
"""
Alineamiento entre grupos predichos y grupos anotados: base de todas las
métricas de evaluación.
"""

import logging
import math
from typing import List, Optional, Sequence, TypeVar, Union

from kpitrack.schemas.config import Thresholds
from kpitrack.schemas.corpus import ChunkRef
from kpitrack.schemas.extraction import KpiGroup
from kpitrack.schemas.matching import GoldGroup, MatchKind, MatchPair, MatchReport
from kpitrack.services.extraction import canonical_value
from kpitrack.services.similarity import Scorer, batch_score, gestalt_ratio

logger = logging.getLogger(__name__)

# Tolerancia relativa de la igualdad exacta de valores
EXACT_REL_TOL = 1e-9
# Potencias de 1000 aceptadas como confusión de escala (miles, millones, billones)
SCALE_EXPONENTS = (1, -1, 2, -2, 3, -3)

G = TypeVar("G", KpiGroup, GoldGroup)
Value = Union[float, str]


# ***************************************************************
# 1. Valores comparables
# ***************************************************************
def prediction_value(group: KpiGroup) -> Value:
    return group.value if group.is_numeric else group.value_non_numeric or ""


def gold_value(group: GoldGroup) -> Value:
    """Valor gold canónico; los strings pasan por canonical_value."""
    if isinstance(group.value, str):
        canonical = canonical_value(group.value)
        return canonical.value if canonical.is_numeric else canonical.text or ""
    return float(group.value)


def group_value(group: Union[KpiGroup, GoldGroup]) -> Value:
    return prediction_value(group) if isinstance(group, KpiGroup) else gold_value(group)


def same_value(a: Value, b: Value) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        return math.isclose(a, b, rel_tol=EXACT_REL_TOL)
    if isinstance(a, str) and isinstance(b, str):
        return a.casefold() == b.casefold()
    return False


# ***************************************************************
# 2. Superconjuntos
# ***************************************************************
def dedupe_supersets(groups: Sequence[G]) -> List[G]:
    """Descarta el grupo cuyas entidades son subconjunto estricto de otro con igual valor."""
    keys = [g.entity_keys for g in groups]
    values = [group_value(g) for g in groups]
    survivors = []
    for i, group in enumerate(groups):
        dominated = any(
            keys[i] < keys[j] and same_value(values[i], values[j])
            for j in range(len(groups))
            if j != i
        )
        if not dominated:
            survivors.append(group)
    return survivors


# ***************************************************************
# 3. Coincidencia de valores
# ***************************************************************
def value_match(
    pred: KpiGroup,
    gold: GoldGroup,
    scorer: Scorer,
    thresholds: Optional[Thresholds] = None,
) -> Optional[MatchKind]:
    thresholds = thresholds or Thresholds()
    gv = gold_value(gold)

    if pred.is_numeric and isinstance(gv, float):
        pv = pred.value
        if math.isclose(pv, gv, rel_tol=EXACT_REL_TOL):
            return MatchKind.exact
        if pred.is_range and pred.bottom_of_range <= gv <= pred.top_of_range:
            return MatchKind.range_contained
        if pv != 0 and gv != 0:
            for k in SCALE_EXPONENTS:
                if math.isclose(pv, gv * 1000.0 ** k, rel_tol=EXACT_REL_TOL):
                    # La compuerta del cross-encoder aplica solo a la confusión de escala
                    if scorer.score(pred.label, gold.label) > thresholds.scaled_match:
                        return MatchKind.scaled_1000x
                    return None
        return None

    if not pred.is_numeric and isinstance(gv, str):
        if gestalt_ratio(pred.value_non_numeric or "", gv) > thresholds.gestalt:
            return MatchKind.nonnumeric_gestalt
    return None


# ***************************************************************
# 4. Alineamiento greedy
# ***************************************************************
def align(
    preds: Sequence[KpiGroup],
    golds: Sequence[GoldGroup],
    scorer: Scorer,
    thresholds: Optional[Thresholds] = None,
    chunk_ref: Optional[ChunkRef] = None,
) -> MatchReport:
    """
    Pares candidatos = los que tienen value_match, ordenados por similaridad de
    etiqueta (desempate: índice de predicción, luego de gold). El mejor consume
    su gold; una predicción que no es rango se consume también.
    """
    candidates = []
    for i, pred in enumerate(preds):
        for j, gold in enumerate(golds):
            kind = value_match(pred, gold, scorer, thresholds)
            if kind is not None:
                candidates.append((i, j, kind))

    similarities = batch_score(scorer, [(preds[i].label, golds[j].label) for i, j, _ in candidates])
    ranked = sorted(zip(similarities, candidates), key=lambda c: (-c[0], c[1][0], c[1][1]))

    pairs: List[MatchPair] = []
    used_preds, used_golds = set(), set()
    for similarity, (i, j, kind) in ranked:
        if j in used_golds or i in used_preds:
            continue
        pairs.append(MatchPair(prediction=i, gold=j, value_kind=kind, label_similarity=similarity))
        used_golds.add(j)
        if not preds[i].is_range:
            used_preds.add(i)

    paired_preds = {p.prediction for p in pairs}
    return MatchReport(
        chunk_ref=chunk_ref,
        pairs=pairs,
        unmatched_predictions=[i for i in range(len(preds)) if i not in paired_preds],
        unmatched_golds=[j for j in range(len(golds)) if j not in used_golds],
    )
