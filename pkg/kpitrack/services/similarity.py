# kpitrack/services/similarity.py
"""
Puntajes de similaridad entre etiquetas. Dos backends intercambiables:
cross-encoder remoto (fidelidad) y coseno de trigramas de caracteres (local).
"""

import logging
import math
import threading
from collections import Counter
from difflib import SequenceMatcher
from typing import Dict, List, Optional, Sequence, Tuple

import httpx

from kpitrack.core.config import get_credential
from kpitrack.core.errors import ConfigError, ProviderError, TransportError
from kpitrack.schemas.config import ScorerConfig, ScorerKind

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


# ***************************************************************
# 1. Gestalt (Ratcliff/Obershelp)
# ***************************************************************
def gestalt_ratio(a: str, b: str) -> float:
    """2M/(|a|+|b|) sobre minúsculas; simétrico. Dos vacíos -> 1.0."""
    a, b = a.lower(), b.lower()
    if not a and not b:
        return 1.0
    # SequenceMatcher no es simétrico en empates de bloques
    return max(
        SequenceMatcher(None, a, b, autojunk=False).ratio(),
        SequenceMatcher(None, b, a, autojunk=False).ratio(),
    )


# ***************************************************************
# 2. Backends
# ***************************************************************
class Scorer:
    """Base con memo en memoria y atajos para vacíos e idénticos."""

    kind: ScorerKind

    def __init__(self):
        self._memo: Dict[Pair, float] = {}
        self._lock = threading.Lock()

    def _key(self, a: str, b: str) -> Pair:
        return (a, b)

    def _identical(self, a: str, b: str) -> bool:
        return a == b

    def _compute(self, pairs: List[Pair]) -> List[float]:
        raise NotImplementedError

    def score_many(self, pairs: Sequence[Pair]) -> List[float]:
        results: List[Optional[float]] = [None] * len(pairs)
        pending: Dict[Pair, List[int]] = {}
        for index, (a, b) in enumerate(pairs):
            if not a.strip() or not b.strip():
                results[index] = 0.0
            elif self._identical(a, b):
                results[index] = 1.0
            else:
                key = self._key(a, b)
                with self._lock:
                    cached = self._memo.get(key)
                if cached is None:
                    pending.setdefault(key, []).append(index)
                else:
                    results[index] = cached

        if pending:
            keys = list(pending)
            scores = self._compute(keys)
            with self._lock:
                for key, value in zip(keys, scores):
                    value = min(1.0, max(0.0, float(value)))
                    self._memo[key] = value
                    for index in pending[key]:
                        results[index] = value
        return results  # type: ignore

    def score(self, a: str, b: str) -> float:
        return self.score_many([(a, b)])[0]


class LexicalScorer(Scorer):
    """Coseno sobre multiconjuntos de trigramas de caracteres."""

    kind = ScorerKind.lexical_fallback

    def _key(self, a: str, b: str) -> Pair:
        a, b = normalize_text(a), normalize_text(b)
        return (a, b) if a <= b else (b, a)

    def _identical(self, a: str, b: str) -> bool:
        return normalize_text(a) == normalize_text(b)

    def _compute(self, pairs: List[Pair]) -> List[float]:
        return [trigram_cosine(a, b) for a, b in pairs]


def char_trigrams(text: str) -> Counter:
    text = normalize_text(text)
    if len(text) < 3:
        return Counter([text]) if text else Counter()
    return Counter(text[i:i + 3] for i in range(len(text) - 2))


def trigram_cosine(a: str, b: str) -> float:
    grams_a, grams_b = char_trigrams(a), char_trigrams(b)
    if not grams_a or not grams_b:
        return 0.0
    dot = sum(grams_a[g] * grams_b[g] for g in grams_a.keys() & grams_b.keys())
    norms = sum(v * v for v in grams_a.values()) * sum(v * v for v in grams_b.values())
    return min(1.0, dot / math.sqrt(norms))


class CrossEncoderScorer(Scorer):
    """
    Cross-encoder detrás de un endpoint HTTP.
    Request: {"model": str, "pairs": [[a, b], ...]} -> Response: {"scores": [float, ...]}
    """

    kind = ScorerKind.cross_encoder_remote

    def __init__(self, config: ScorerConfig, api_key: str = "", client: Optional[httpx.Client] = None):
        super().__init__()
        self.config = config
        self._api_key = api_key
        self._client = client or httpx.Client(timeout=config.timeout_seconds)

    def _post(self, batch: List[Pair]) -> List[float]:
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        try:
            response = self._client.post(
                self.config.endpoint,
                json={"model": self.config.model, "pairs": [list(p) for p in batch]},
                headers=headers,
                timeout=self.config.timeout_seconds,
            )
        except httpx.TransportError as e:
            raise TransportError(f"Scorer inalcanzable en {self.config.endpoint}: {e}") from e
        if not response.is_success:
            raise ProviderError(
                f"Scorer respondió HTTP {response.status_code}",
                status=response.status_code,
                body=response.text,
            )
        scores = response.json().get("scores")
        if not isinstance(scores, list) or len(scores) != len(batch):
            raise ProviderError("Respuesta del scorer sin 'scores' válidos", body=response.text)
        return scores

    def _compute(self, pairs: List[Pair]) -> List[float]:
        size = self.config.batch_size
        scores: List[float] = []
        for start in range(0, len(pairs), size):
            scores.extend(self._post(pairs[start:start + size]))
        logger.debug("cross-encoder: %d pares en %d lotes", len(pairs), math.ceil(len(pairs) / size))
        return scores


# ***************************************************************
# 3. API del módulo
# ***************************************************************
def score(scorer: Scorer, a: str, b: str) -> float:
    return scorer.score(a, b)


def batch_score(scorer: Scorer, pairs: Sequence[Pair]) -> List[float]:
    if not pairs:
        return []
    return scorer.score_many(pairs)


def build_scorer(config: ScorerConfig, client: Optional[httpx.Client] = None) -> Scorer:
    if config.kind == ScorerKind.lexical_fallback:
        return LexicalScorer()
    if not config.endpoint:
        raise ConfigError("El scorer cross_encoder_remote necesita 'endpoint'.")
    return CrossEncoderScorer(config, api_key=get_credential(config.credential_env), client=client)
