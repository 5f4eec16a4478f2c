# kpitrack/schemas/metrics.py

from typing import Dict, Optional

from pydantic import BaseModel, Field, model_validator


class Score(BaseModel):
    precision: float = Field(0.0, ge=0.0, le=1.0)
    recall: float = Field(0.0, ge=0.0, le=1.0)
    f1: float = Field(0.0, ge=0.0, le=1.0)


class EvalCounts(BaseModel):
    predictions: int = 0
    golds: int = 0
    pairs: int = 0
    judged_equivalent: int = 0
    judge_failed: int = 0


class EvalReport(BaseModel):
    """Las cuatro métricas de un modelo sobre el conjunto anotado."""
    model_id: str
    exact_f1: float = Field(0.0, ge=0.0, le=1.0)
    semantic_f1: float = Field(0.0, ge=0.0, le=1.0)
    match_f1: float = Field(0.0, ge=0.0, le=1.0)
    # None cuando no hay juez configurado
    judge_rate: Optional[float] = Field(None, ge=0.0, le=1.0)
    judge_skipped: bool = False
    # True cuando alguna llamada al juez falló (judge_rate queda en None)
    judge_incomplete: bool = False
    counts: EvalCounts = Field(default_factory=EvalCounts)
    scores: Dict[str, Score] = Field(default_factory=dict)
    excluded_chunks: list = Field(default_factory=list)

    @model_validator(mode="after")
    def check_counts(self):
        c = self.counts
        if not (c.judged_equivalent + c.judge_failed <= c.pairs <= c.golds):
            raise ValueError("Se requiere judged_equivalent + judge_failed <= pairs <= golds.")
        return self


class HumanEvalSummary(BaseModel):
    """Estadísticos de la evaluación humana del sistema final."""
    raters: int
    items: int
    krippendorff_alpha: float
    mean_cohen_kappa: float
    pairwise_kappa: Dict[str, float] = Field(default_factory=dict)
    raw_agreement: float
    precision: float
    positives: int
    judgments: int


class HumanJudgment(BaseModel):
    """Una fila del archivo de evaluación humana."""
    item: str
    rater: str
    label: str
