# kpitrack/services/aggregate.py
"""
Consenso multi-modelo: buckets por valor, clusters de etiquetas con
enlace completo, centroides, periodos fiscales y seguimiento longitudinal.
"""

import logging
import re
from collections import defaultdict
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from kpitrack.schemas.aggregate import (
    AgreementStats,
    ClusterMember,
    FiscalCalendar,
    KpiCluster,
    ModelAgreement,
    ModelLabel,
    Period,
    SeriesPoint,
    SweepReport,
    SweepRow,
    TrackedKpi,
)
from kpitrack.schemas.extraction import ChunkExtraction, EntityCategory, KpiGroup
from kpitrack.services.similarity import Scorer, batch_score

logger = logging.getLogger(__name__)

DEFAULT_CLUSTER_THRESHOLD = 0.85
DEFAULT_VALUE_TOLERANCE = 0.01
DEFAULT_MIN_PERIODS = 4
# Distancia de pares que no pueden compartir cluster (valores incompatibles)
_UNLINKABLE = 2.0
_LINKAGE_EPS = 1e-9


# ***************************************************************
# 1. Periodo fiscal de un grupo
# ***************************************************************
class PeriodResolution(NamedTuple):
    period: Period
    # True cuando una fecha explícita no se pudo interpretar
    flagged: bool = False


_MONTHS = {
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "may": 5, "jun": 6,
    "jul": 7, "aug": 8, "sep": 9, "oct": 10, "nov": 11, "dec": 12,
}
_ORDINALS = {"first": 1, "1st": 1, "second": 2, "2nd": 2, "third": 3, "3rd": 3, "fourth": 4, "4th": 4}

_YEAR = r"'?(\d{4}|\d{2})\b"
_QUARTER_YEAR = re.compile(r"\bq([1-4])\s*(?:of\s+)?(?:fiscal\s+|fy\s*)?(?:year\s+)?" + _YEAR, re.IGNORECASE)
_YEAR_QUARTER = re.compile(r"\b(?:fy\s*)?(\d{4})\s*[- ]?q([1-4])\b", re.IGNORECASE)
_ORDINAL_QUARTER = re.compile(
    r"\b(first|1st|second|2nd|third|3rd|fourth|4th)\s+(?:fiscal\s+)?quarter\s+(?:of\s+)?(?:fiscal\s+)?(?:year\s+)?" + _YEAR,
    re.IGNORECASE,
)
_MONTH_NAMES = (
    r"(january|february|march|april|may|june|july|august|september|october|november|december|"
    r"jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec)"
)
_MONTH_YEAR = re.compile(
    r"\b" + _MONTH_NAMES + r"\b\.?\s+(?:\d{1,2},?\s+)?(\d{4})\b",
    re.IGNORECASE,
)
_FISCAL_YEAR = re.compile(r"\b(?:fiscal\s+(?:year\s+)?|fy\s*)" + _YEAR, re.IGNORECASE)
_BARE_YEAR = re.compile(r"\b((?:19|20)\d{2})\b")
_RELATIVE = re.compile(
    r"\b(next|last|previous|prior|coming|this|current)\s+(?:fiscal\s+)?(quarter|year)\b", re.IGNORECASE
)
_MONTH_WORD = re.compile(r"\b" + _MONTH_NAMES + r"\b", re.IGNORECASE)


def _full_year(text: str) -> int:
    year = int(text)
    return 2000 + year if year < 100 else year


def shift_quarters(period: Period, quarters: int) -> Period:
    index = period.fiscal_year * 4 + (period.quarter - 1) + quarters
    return Period(index // 4, index % 4 + 1)


def parse_date_mention(
    text: str, call_period: Period, calendar: FiscalCalendar, ticker: str
) -> Optional[Period]:
    """Periodo fiscal de una mención de fecha; None si no nombra uno concreto."""
    match = _QUARTER_YEAR.search(text)
    if match:
        return Period(_full_year(match.group(2)), int(match.group(1)))
    match = _YEAR_QUARTER.search(text)
    if match:
        return Period(int(match.group(1)), int(match.group(2)))
    match = _ORDINAL_QUARTER.search(text)
    if match:
        return Period(_full_year(match.group(2)), _ORDINALS[match.group(1).lower()])
    match = _MONTH_YEAR.search(text)
    if match:
        return calendar.fiscal_period(ticker, int(match.group(2)), _MONTHS[match.group(1).lower()[:3]])
    # Solo año: cierre del año fiscal
    match = _FISCAL_YEAR.search(text) or _BARE_YEAR.search(text)
    if match:
        return Period(_full_year(match.group(1)), 4)
    match = _RELATIVE.search(text)
    if match:
        direction, unit = match.group(1).lower(), match.group(2).lower()
        step = {"next": 1, "coming": 1, "last": -1, "previous": -1, "prior": -1}.get(direction, 0)
        if unit == "quarter":
            return shift_quarters(call_period, step)
        if step == 0:
            return None
        return Period(call_period.fiscal_year + step, 4)
    return None


def resolve_period(
    group: KpiGroup,
    call_period: Period,
    calendar: FiscalCalendar,
    ticker: str = "",
) -> PeriodResolution:
    """
    Periodo de la llamada salvo que una entidad de fecha nombre otro trimestre
    o año. Fechas explícitas ilegibles vuelven al periodo de la llamada, marcadas.
    """
    flagged = False
    for entity in group.entities:
        if entity.category != EntityCategory.date:
            continue
        period = parse_date_mention(entity.text, call_period, calendar, ticker)
        if period is not None:
            return PeriodResolution(period)
        if re.search(r"\d", entity.text) or _MONTH_WORD.search(entity.text):
            flagged = True
    if flagged:
        logger.warning("%s %s: fecha no interpretable en '%s'", ticker, call_period, group.label)
    return PeriodResolution(call_period, flagged)


def collect_members(
    extractions: Iterable[ChunkExtraction],
    calendar: FiscalCalendar,
) -> List[ClusterMember]:
    """Grupos numéricos de extracciones exitosas, con su periodo resuelto."""
    members = []
    flagged = 0
    for extraction in extractions:
        ref = extraction.chunk_ref
        if extraction.status != "ok" or ref is None:
            continue
        call_period = Period(ref.fiscal_year, ref.fiscal_quarter)
        for group in extraction.groups:
            if not group.is_numeric:
                continue
            resolution = resolve_period(group, call_period, calendar, ref.ticker)
            flagged += resolution.flagged
            members.append(ClusterMember(
                model_id=extraction.model_id,
                ticker=ref.ticker,
                period=resolution.period,
                group=group,
                chunk_ref=ref,
            ))
    logger.info("%d grupos numéricos (%d fechas no interpretadas)", len(members), flagged)
    return members


# ***************************************************************
# 2. Buckets por valor
# ***************************************************************
def within_tolerance(a: float, b: float, tolerance: float = DEFAULT_VALUE_TOLERANCE) -> bool:
    return abs(a - b) <= tolerance * max(abs(a), abs(b))


def member_sort_key(member: ClusterMember) -> tuple:
    ref = member.chunk_ref.sort_key if member.chunk_ref else ()
    return (member.normalized_label, member.model_id, member.group.value, ref)


def align_values(
    members: Sequence[ClusterMember],
    tolerance: float = DEFAULT_VALUE_TOLERANCE,
) -> List[List[ClusterMember]]:
    """Cierre transitivo de 'valores dentro de la tolerancia' (union-find)."""
    items = sorted((m for m in members if m.group.is_numeric), key=member_sort_key)
    parent = list(range(len(items)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if within_tolerance(items[i].group.value, items[j].group.value, tolerance):
                parent[find(j)] = find(i)

    buckets: Dict[int, List[ClusterMember]] = defaultdict(list)
    for i, item in enumerate(items):
        buckets[find(i)].append(item)
    return sorted(buckets.values(), key=lambda b: (min(m.group.value for m in b), member_sort_key(b[0])))


# ***************************************************************
# 3. Clusters de etiquetas (enlace completo)
# ***************************************************************
def complete_linkage(similarity: np.ndarray, threshold: float) -> List[List[int]]:
    """
    Clusters planos por enlace completo: dentro de cada cluster todo par
    tiene similaridad >= threshold. Pares con -inf nunca comparten cluster.
    """
    n = len(similarity)
    if n == 0:
        return []
    if n == 1:
        return [[0]]
    distance = np.clip(1.0 - np.asarray(similarity, dtype=float), 0.0, _UNLINKABLE)
    np.fill_diagonal(distance, 0.0)
    tree = linkage(squareform(distance, checks=False), method="complete")
    flat = fcluster(tree, t=1.0 - threshold + _LINKAGE_EPS, criterion="distance")
    groups: Dict[int, List[int]] = defaultdict(list)
    for index, label in enumerate(flat):
        groups[int(label)].append(index)
    return sorted(groups.values(), key=lambda indices: indices[0])


def _label_matrix(labels: Sequence[str], scorer: Scorer) -> np.ndarray:
    n = len(labels)
    pairs = [(labels[i], labels[j]) for i in range(n) for j in range(i + 1, n)]
    scores = iter(batch_score(scorer, pairs))
    matrix = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = next(scores)
    return matrix


def centroid(labels: Sequence[str], scorer: Scorer) -> str:
    """Etiqueta con menor distancia agregada (1 - score) al resto; empate lexicográfico."""
    if len(labels) == 1:
        return labels[0]
    matrix = _label_matrix(list(labels), scorer)
    totals = (1.0 - matrix).sum(axis=1)
    best = min(range(len(labels)), key=lambda i: (round(float(totals[i]), 12), labels[i]))
    return labels[best]


def cluster_labels(
    bucket: Sequence[ClusterMember],
    scorer: Scorer,
    threshold: float = DEFAULT_CLUSTER_THRESHOLD,
    tolerance: float = DEFAULT_VALUE_TOLERANCE,
) -> List[KpiCluster]:
    """Clusters donde todo par de etiquetas y todo par de valores pasa su umbral."""
    members = sorted(bucket, key=member_sort_key)
    labels = [m.normalized_label for m in members]
    similarity = _label_matrix(labels, scorer)
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            if not within_tolerance(members[i].group.value, members[j].group.value, tolerance):
                similarity[i, j] = similarity[j, i] = -np.inf

    clusters = []
    for indices in complete_linkage(similarity, threshold):
        cluster_members = [members[i] for i in indices]
        label = centroid([m.normalized_label for m in cluster_members], scorer)
        anchor = next(m for m in cluster_members if m.normalized_label == label)
        clusters.append(KpiCluster(
            ticker=anchor.ticker,
            period=anchor.period,
            members=cluster_members,
            centroid_label=label,
            value=anchor.group.value,
        ))
    return clusters


def build_clusters(
    members: Sequence[ClusterMember],
    scorer: Scorer,
    threshold: float = DEFAULT_CLUSTER_THRESHOLD,
    tolerance: float = DEFAULT_VALUE_TOLERANCE,
) -> List[KpiCluster]:
    """align_values + cluster_labels por (ticker, periodo)."""
    by_call: Dict[Tuple[str, Period], List[ClusterMember]] = defaultdict(list)
    for member in members:
        by_call[(member.ticker, member.period)].append(member)
    clusters = []
    for key in sorted(by_call):
        for bucket in align_values(by_call[key], tolerance):
            clusters.extend(cluster_labels(bucket, scorer, threshold, tolerance))
    return clusters


# ***************************************************************
# 4. Seguimiento longitudinal
# ***************************************************************
def _series_point(cluster: KpiCluster) -> SeriesPoint:
    return SeriesPoint(
        period=cluster.period,
        value=cluster.value,
        model_ids=cluster.model_ids,
        centroid_label=cluster.centroid_label,
        centroid_model_ids=sorted({
            m.model_id for m in cluster.members if m.normalized_label == cluster.centroid_label
        }),
        member_labels=sorted(
            (ModelLabel(model_id=m.model_id, label=m.normalized_label) for m in cluster.members),
            key=lambda ml: (ml.model_id, ml.label),
        ),
    )


def _cluster_rank(cluster: KpiCluster) -> tuple:
    # Más miembros, luego más modelos, luego etiqueta y valor
    return (-len(cluster.members), -len(cluster.model_ids), cluster.centroid_label, cluster.value)


def track(
    clusters: Sequence[KpiCluster],
    scorer: Scorer,
    threshold: float = DEFAULT_CLUSTER_THRESHOLD,
    min_periods: int = DEFAULT_MIN_PERIODS,
) -> List[TrackedKpi]:
    """Une centroides de una compañía entre periodos y filtra por cobertura."""
    by_ticker: Dict[str, List[KpiCluster]] = defaultdict(list)
    for cluster in clusters:
        by_ticker[cluster.ticker].append(cluster)

    tracked = []
    for ticker in sorted(by_ticker):
        labels = sorted({c.centroid_label for c in by_ticker[ticker]})
        for indices in complete_linkage(_label_matrix(labels, scorer), threshold):
            group_labels = {labels[i] for i in indices}
            per_period: Dict[Period, List[KpiCluster]] = defaultdict(list)
            for cluster in by_ticker[ticker]:
                if cluster.centroid_label in group_labels:
                    per_period[cluster.period].append(cluster)
            if len(per_period) < min_periods:
                continue
            series = [_series_point(min(per_period[p], key=_cluster_rank)) for p in sorted(per_period)]
            tracked.append(TrackedKpi(
                ticker=ticker,
                centroid_label=centroid(sorted(group_labels), scorer),
                series=series,
                periods_covered=len(series),
            ))
    tracked.sort(key=lambda t: (t.ticker, t.centroid_label))
    logger.info("%d KPIs seguidos en >= %d periodos", len(tracked), min_periods)
    return tracked


# ***************************************************************
# 5. Acuerdo entre modelos
# ***************************************************************
def _pct(numerator: int, denominator: int) -> float:
    return 100.0 * numerator / denominator if denominator else 0.0


def agreement_stats(tracked: Sequence[TrackedKpi], model_ids: Optional[Sequence[str]] = None) -> AgreementStats:
    """
    share: instancias (kpi, periodo) con aporte del modelo.
    centroid: instancias cuyo centroide salió del modelo (empates a todos).
    overlap: etiquetas del modelo idénticas a la de otro modelo en el mismo cluster.
    """
    points = [p for t in tracked for p in t.series]
    models = sorted(set(model_ids) if model_ids else {m for p in points for m in p.model_ids})
    everyone = set(models)

    rows = []
    for model in models:
        own_labels = 0
        overlapping = 0
        for point in points:
            others = {ml.label for ml in point.member_labels if ml.model_id != model}
            for ml in point.member_labels:
                if ml.model_id == model:
                    own_labels += 1
                    overlapping += ml.label in others
        rows.append(ModelAgreement(
            model_id=model,
            share_pct=_pct(sum(model in p.model_ids for p in points), len(points)),
            centroid_pct=_pct(sum(model in p.centroid_model_ids for p in points), len(points)),
            overlap_pct=_pct(overlapping, own_labels),
        ))

    return AgreementStats(
        models=rows,
        all_model_agreement_pct=_pct(sum(everyone <= set(p.model_ids) for p in points), len(points)),
        kpi_agreement_pct=_pct(
            sum(all(everyone <= set(p.model_ids) for p in t.series) for t in tracked), len(tracked)
        ),
        instances=len(points),
        tracked_kpis=len(tracked),
    )


# ***************************************************************
# 6. Barrido de umbrales y series
# ***************************************************************
def threshold_sweep(
    members: Sequence[ClusterMember],
    scorer: Scorer,
    thresholds: Sequence[float],
    tolerance: float = DEFAULT_VALUE_TOLERANCE,
    min_periods: int = DEFAULT_MIN_PERIODS,
    model_ids: Optional[Sequence[str]] = None,
) -> SweepReport:
    rows = []
    for threshold in sorted(thresholds):
        clusters = build_clusters(members, scorer, threshold, tolerance)
        tracked = track(clusters, scorer, threshold, min_periods)
        rows.append(SweepRow(
            threshold=threshold,
            cluster_count=len(clusters),
            tracked_count=len(tracked),
            dataset_size=sum(len(t.series) for t in tracked),
            agreement=agreement_stats(tracked, model_ids),
        ))
    counts = [r.cluster_count for r in rows]
    monotone = all(a <= b for a, b in zip(counts, counts[1:]))
    if not monotone:
        logger.warning("Cantidad de clusters no monótona en el umbral: %s", counts)
    return SweepReport(rows=rows, monotone=monotone)


def sweep_frame(report: SweepReport) -> pd.DataFrame:
    """Una fila por umbral más las filas de media y desviación estándar."""
    records = []
    for row in report.rows:
        record = {
            "threshold": row.threshold,
            "clusters": row.cluster_count,
            "tracked": row.tracked_count,
            "dataset_size": row.dataset_size,
            "all_model_agreement_pct": row.agreement.all_model_agreement_pct,
        }
        for model in row.agreement.models:
            record[f"{model.model_id} share"] = model.share_pct
            record[f"{model.model_id} centroid"] = model.centroid_pct
            record[f"{model.model_id} overlap"] = model.overlap_pct
        records.append(record)
    frame = pd.DataFrame(records)
    if frame.empty:
        return frame
    numeric = frame.drop(columns=["threshold"])
    summary = pd.DataFrame([numeric.mean(), numeric.std(ddof=0)])
    summary.insert(0, "threshold", ["mean", "std"])
    frame["threshold"] = frame["threshold"].map(lambda t: f"{t:.2f}")
    return pd.concat([frame, summary], ignore_index=True)


def series_frame(tracked: Sequence[TrackedKpi]) -> pd.DataFrame:
    """Serie por KPI en formato largo, lista para graficar."""
    rows = [
        {
            "ticker": t.ticker,
            "kpi": t.centroid_label,
            "period": str(p.period),
            "fiscal_year": p.period.fiscal_year,
            "quarter": p.period.quarter,
            "value": p.value,
            "models": ";".join(p.model_ids),
        }
        for t in tracked
        for p in t.series
    ]
    return pd.DataFrame(rows, columns=["ticker", "kpi", "period", "fiscal_year", "quarter", "value", "models"])
