# kpitrack/schemas/aggregate.py

from typing import Dict, List, NamedTuple, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from kpitrack.schemas.corpus import ChunkRef
from kpitrack.schemas.extraction import KpiGroup


class Period(NamedTuple):
    fiscal_year: int
    quarter: int

    def __str__(self) -> str:
        return f"{self.fiscal_year}-Q{self.quarter}"


# ***************************************************************
# 1. Calendario fiscal
# ***************************************************************
def _quarters_after(fy_end_month: int) -> Dict[int, List[int]]:
    """Los cuatro trimestres que siguen al mes de cierre."""
    months = [((fy_end_month + i) % 12) + 1 for i in range(12)]
    return {q + 1: months[3 * q: 3 * q + 3] for q in range(4)}


class FiscalYearSpec(BaseModel):
    fy_end_month: int = Field(..., ge=1, le=12)
    quarters: Dict[int, List[int]]
    # Algunas compañías (Home Depot) nombran el año fiscal por el año en que empieza
    named_by_start_year: bool = False

    @model_validator(mode="after")
    def quarters_partition_year(self):
        if sorted(self.quarters) != [1, 2, 3, 4]:
            raise ValueError("Se requieren exactamente los trimestres 1 a 4.")
        months = sorted(m for ms in self.quarters.values() for m in ms)
        if months != list(range(1, 13)):
            raise ValueError("Los trimestres deben particionar los 12 meses.")
        return self

    @classmethod
    def ending(cls, fy_end_month: int, named_by_start_year: bool = False) -> "FiscalYearSpec":
        return cls(
            fy_end_month=fy_end_month,
            quarters=_quarters_after(fy_end_month),
            named_by_start_year=named_by_start_year,
        )


# Tabla de cierres fiscales de las compañías del corpus
_DEFAULT_FY_END = {
    "AAPL": 9, "HD": 1, "MSFT": 6, "PG": 6,
    "AMZN": 12, "BA": 12, "BAC": 12, "CAT": 12, "CVX": 12, "DOW": 12,
    "GOOGL": 12, "JNJ": 12, "JPM": 12, "KO": 12, "NEE": 12, "PFE": 12,
    "PLD": 12, "XOM": 12,
}


class FiscalCalendar(BaseModel):
    """Mapa ticker -> año fiscal. Tickers desconocidos usan año calendario."""
    tickers: Dict[str, FiscalYearSpec] = Field(default_factory=dict)

    @field_validator("tickers")
    @classmethod
    def upper_tickers(cls, value: Dict[str, FiscalYearSpec]) -> Dict[str, FiscalYearSpec]:
        return {k.upper(): v for k, v in value.items()}

    @classmethod
    def default(cls) -> "FiscalCalendar":
        return cls(tickers={
            ticker: FiscalYearSpec.ending(month, named_by_start_year=(ticker == "HD"))
            for ticker, month in _DEFAULT_FY_END.items()
        })

    def spec_for(self, ticker: str) -> FiscalYearSpec:
        return self.tickers.get(ticker.upper()) or FiscalYearSpec.ending(12)

    def fiscal_period(self, ticker: str, year: int, month: int) -> Period:
        """Convierte un mes calendario en (año fiscal, trimestre) para el ticker."""
        spec = self.spec_for(ticker)
        quarter = next(q for q, months in spec.quarters.items() if month in months)
        # Año fiscal nombrado por el año calendario en que cierra
        fiscal_year = year if month <= spec.fy_end_month else year + 1
        if spec.named_by_start_year:
            fiscal_year -= 1
        return Period(fiscal_year, quarter)


# ***************************************************************
# 2. Clusters y series
# ***************************************************************
class ClusterMember(BaseModel):
    model_id: str
    ticker: str
    period: Period
    group: KpiGroup
    chunk_ref: Optional[ChunkRef] = None

    model_config = ConfigDict(frozen=True)

    @property
    def normalized_label(self) -> str:
        return " ".join(self.group.label.lower().split())


class KpiCluster(BaseModel):
    """Grupo de extracciones con valor y etiqueta compatibles en un periodo."""
    ticker: str
    period: Period
    members: List[ClusterMember]
    centroid_label: str
    value: float

    @model_validator(mode="after")
    def centroid_is_member(self):
        if self.centroid_label not in {m.normalized_label for m in self.members}:
            raise ValueError("La etiqueta centroide debe ser la de un miembro.")
        return self

    @property
    def model_ids(self) -> List[str]:
        return sorted({m.model_id for m in self.members})


class ModelLabel(BaseModel):
    model_id: str
    label: str


class SeriesPoint(BaseModel):
    period: Period
    value: float
    model_ids: List[str]
    centroid_label: str
    centroid_model_ids: List[str] = Field(default_factory=list)
    member_labels: List[ModelLabel] = Field(default_factory=list)


class TrackedKpi(BaseModel):
    """KPI seguido en varios periodos de una misma compañía."""
    ticker: str
    centroid_label: str
    series: List[SeriesPoint]
    periods_covered: int

    @model_validator(mode="after")
    def check_series(self):
        periods = [p.period for p in self.series]
        if periods != sorted(set(periods)):
            raise ValueError("La serie debe estar ordenada y sin periodos repetidos.")
        if self.periods_covered != len(periods):
            raise ValueError("periods_covered no coincide con la serie.")
        return self


# ***************************************************************
# 3. Estadísticas de acuerdo entre modelos
# ***************************************************************
class ModelAgreement(BaseModel):
    model_id: str
    share_pct: float
    centroid_pct: float
    overlap_pct: float


class AgreementStats(BaseModel):
    models: List[ModelAgreement] = Field(default_factory=list)
    all_model_agreement_pct: float = 0.0
    kpi_agreement_pct: float = 0.0
    instances: int = 0
    tracked_kpis: int = 0


class SweepRow(BaseModel):
    threshold: float
    cluster_count: int
    tracked_count: int
    dataset_size: int
    agreement: AgreementStats


class SweepReport(BaseModel):
    rows: List[SweepRow] = Field(default_factory=list)
    monotone: bool = True
