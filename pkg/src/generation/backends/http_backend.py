import logging
import os

import numpy as np
import requests

from src.core.errors import ConfigError, PermanentBackendError
from src.generation.backends.base_backend import BaseBackend

logger = logging.getLogger("Materializer.Backend.Http")


class HttpBackend(BaseBackend):
    """
    OpenAI-compatible chat-completions / embeddings endpoint.

    The API key is read from the environment variable named by
    settings.api_key_env; it is never written to config.json or logs.
    """
    def __init__(self, settings, session=None):
        super().__init__(settings)
        api_key = os.environ.get(settings.api_key_env)
        if not api_key:
            raise ConfigError(f"Environment variable {settings.api_key_env} is not set")
        self.base_url = settings.base_url.rstrip('/')
        self.session = session or requests.Session()
        self.session.headers.update({
            'Authorization': f'Bearer {api_key}',
            'Content-Type': 'application/json',
        })

    def complete(self, system, user, params):
        payload = {
            'model': params.get('model') or self.settings.model,
            'messages': [
                {'role': 'system', 'content': system},
                {'role': 'user', 'content': user},
            ],
            'max_tokens': params.get('max_tokens'),
            'temperature': params.get('temperature', 0),
            'seed': params.get('seed', 0),
        }
        response = self.session.post(
            f'{self.base_url}/chat/completions', json=payload, timeout=self.settings.timeout_seconds)
        response.raise_for_status()
        data = response.json()
        try:
            return data['choices'][0]['message']['content'] or ''
        except (KeyError, IndexError, TypeError) as e:
            raise PermanentBackendError(f"Unexpected completion payload: {e}") from e

    def embed(self, texts):
        response = self.session.post(
            f'{self.base_url}/embeddings',
            json={'model': self.settings.embedding_model, 'input': list(texts)},
            timeout=self.settings.timeout_seconds,
        )
        response.raise_for_status()
        rows = sorted(response.json()['data'], key=lambda row: row['index'])
        vectors = []
        for row in rows:
            vec = np.asarray(row['embedding'], dtype=float)
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise PermanentBackendError("Backend returned a zero embedding")
            vectors.append(vec / norm)
        logger.debug(f"Embedded {len(vectors)} text(s) with {self.settings.embedding_model}")
        return vectors


def create_backend(settings, **mock_options):
    """Backend factory used by the CLI; 'mock' needs no credentials."""
    if settings.kind == 'mock':
        from src.generation.backends.mock_backend import MockBackend
        return MockBackend(settings=settings, **mock_options)
    if settings.kind == 'http':
        return HttpBackend(settings)
    raise ConfigError(f"Unknown backend kind: {settings.kind}")
