# kpitrack/services/providers.py
"""
Clientes de modelos: endpoint compatible con chat/completions, almacén de
respuestas grabadas (replay) y grabador de respuestas en vivo.
Todos comparten el método complete(prompt, schema) y son seguros entre hilos.
"""

import hashlib
import logging
import time
from pathlib import Path
from typing import Callable, Optional, Protocol, Union

import httpx
from pydantic import BaseModel

from kpitrack.core.config import get_credential
from kpitrack.core.errors import ConfigError, ProviderError, TransportError
from kpitrack.schemas.config import ProviderConfig

logger = logging.getLogger(__name__)

# Estados HTTP que justifican reintentar
RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ProviderResponse(BaseModel):
    text: str
    elapsed_seconds: float = 0.0
    cost_usd: float = 0.0
    attempts: int = 1
    prompt_hash: str = ""


class Provider(Protocol):
    model_id: str

    def complete(self, prompt: str, schema: Optional[dict] = None) -> ProviderResponse:
        ...


# ***************************************************************
# 1. Endpoint chat/completions (OpenRouter, DeepSeek, ...)
# ***************************************************************
class ChatProvider:
    def __init__(
        self,
        config: ProviderConfig,
        api_key: str = "",
        client: Optional[httpx.Client] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.model_id = config.model_id
        self._api_key = api_key
        self._client = client or httpx.Client(timeout=config.timeout_seconds)
        self._sleep = sleep

    def payload(self, prompt: str, schema: Optional[dict] = None) -> dict:
        body = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        # Salida restringida solo si el proveedor la soporta
        if schema is not None and self.config.supports_schema:
            body["response_format"] = {"type": "json_schema", "json_schema": schema}
        return body

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _read(self, response: httpx.Response, attempts: int, started: float, digest: str) -> ProviderResponse:
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise ProviderError(
                f"{self.model_id}: respuesta sin 'choices' interpretable",
                status=response.status_code,
                body=response.text,
            ) from e
        usage = data.get("usage") or {}
        cost = (
            usage.get("prompt_tokens", 0) * self.config.prompt_price_per_token
            + usage.get("completion_tokens", 0) * self.config.completion_price_per_token
        )
        return ProviderResponse(
            text=text,
            elapsed_seconds=time.perf_counter() - started,
            cost_usd=cost,
            attempts=attempts,
            prompt_hash=digest,
        )

    def complete(self, prompt: str, schema: Optional[dict] = None) -> ProviderResponse:
        body = self.payload(prompt, schema)
        digest = prompt_hash(prompt)
        started = time.perf_counter()
        total_attempts = self.config.max_retries + 1
        last_error = ""

        for attempt in range(1, total_attempts + 1):
            try:
                response = self._client.post(
                    self.config.endpoint,
                    json=body,
                    headers=self._headers(),
                    timeout=self.config.timeout_seconds,
                )
            except httpx.TransportError as e:
                last_error = f"{type(e).__name__}: {e}"
            else:
                if response.is_success:
                    return self._read(response, attempt, started, digest)
                if response.status_code not in RETRYABLE_STATUS:
                    raise ProviderError(
                        f"{self.model_id}: HTTP {response.status_code}",
                        status=response.status_code,
                        body=response.text,
                    )
                last_error = f"HTTP {response.status_code}"

            if attempt < total_attempts:
                delay = self.config.backoff_seconds * 2 ** (attempt - 1)
                logger.warning(
                    "%s: intento %d/%d falló (%s), reintento en %.1fs",
                    self.model_id, attempt, total_attempts, last_error, delay,
                )
                self._sleep(delay)

        raise TransportError(
            f"{self.model_id}: reintentos agotados tras {total_attempts} intentos ({last_error})"
        )


# ***************************************************************
# 2. Almacén de respuestas grabadas
# ***************************************************************
def replay_path(replay_dir: Union[str, Path], model_id: str, digest: str) -> Path:
    # "deepseek/deepseek-v3.2" -> "deepseek__deepseek-v3.2"
    return Path(replay_dir) / model_id.replace("/", "__") / f"{digest}.txt"


class ReplayProvider:
    """Devuelve la respuesta grabada para el hash del prompt; sin red."""

    def __init__(self, replay_dir: Union[str, Path], model_id: str):
        self.replay_dir = Path(replay_dir)
        self.model_id = model_id

    def complete(self, prompt: str, schema: Optional[dict] = None) -> ProviderResponse:
        digest = prompt_hash(prompt)
        path = replay_path(self.replay_dir, self.model_id, digest)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise ProviderError(f"{self.model_id}: sin respuesta grabada para {digest[:12]}") from e
        return ProviderResponse(text=text, prompt_hash=digest)


def store_response(replay_dir: Union[str, Path], model_id: str, prompt: str, text: str) -> Path:
    path = replay_path(replay_dir, model_id, prompt_hash(prompt))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


class RecordingProvider:
    """Envuelve un proveedor en vivo y graba cada respuesta en el almacén."""

    def __init__(self, inner: Provider, replay_dir: Union[str, Path]):
        self.inner = inner
        self.model_id = inner.model_id
        self.replay_dir = Path(replay_dir)

    def complete(self, prompt: str, schema: Optional[dict] = None) -> ProviderResponse:
        response = self.inner.complete(prompt, schema)
        store_response(self.replay_dir, self.model_id, prompt, response.text)
        return response


# ***************************************************************
# 3. Fábrica y llamada
# ***************************************************************
def build_provider(
    config: ProviderConfig,
    replay_dir: Optional[Union[str, Path]] = None,
    record: bool = False,
    client: Optional[httpx.Client] = None,
) -> Provider:
    if replay_dir is not None and not record:
        return ReplayProvider(replay_dir, config.model_id)
    if record and replay_dir is None:
        raise ConfigError("--record necesita un directorio de replay.")
    live = ChatProvider(config, api_key=get_credential(config.credential_env), client=client)
    return RecordingProvider(live, replay_dir) if record else live


def request_extraction(provider: Provider, prompt: str, schema: Optional[dict] = None) -> ProviderResponse:
    """Texto crudo de la respuesta, con tiempo, costo e intentos."""
    response = provider.complete(prompt, schema)
    logger.debug(
        "%s: %d caracteres en %.2fs (%d intentos)",
        provider.model_id, len(response.text), response.elapsed_seconds, response.attempts,
    )
    return response
