import logging
from abc import ABC, abstractmethod

import requests

from src.core.errors import PermanentBackendError, TransientBackendError

logger = logging.getLogger("Materializer.Backend")

TRANSIENT = "transient"
PERMANENT = "permanent"


class BaseBackend(ABC):
    """
    Abstract base class for all generation backends.

    Every call the pipeline makes goes through ModelGateway, which owns
    retries and the concurrency cap; a backend only performs one attempt.
    """
    def __init__(self, settings=None):
        """
        Initializes the base backend.

        Args:
            settings (BackendSettings | None): Connection and model settings.
        """
        self.settings = settings
        self.backend_name = self.__class__.__name__.replace('Backend', '').lower()

    @abstractmethod
    def complete(self, system, user, params):
        """
        Executes a single text completion.
        This method must be implemented by subclasses.

        Args:
            system (str): System prompt text.
            user (str): User prompt text.
            params (dict): 'stage', 'subject', 'model', 'max_tokens',
                'temperature', 'tag' and 'placeholders' (the values filled
                into the prompt).

        Returns:
            str: The raw reply text.
        """
        pass

    @abstractmethod
    def embed(self, texts):
        """
        Embeds each text.

        Returns:
            list[numpy.ndarray]: One L2-normalized vector per input, all of the same dimension.
        """
        pass

    def classify_failure(self, error):
        """
        Decide whether a failed attempt is worth retrying.

        Returns:
            str: 'transient' or 'permanent'.
        """
        if isinstance(error, TransientBackendError):
            return TRANSIENT
        if isinstance(error, PermanentBackendError):
            return PERMANENT
        if isinstance(error, (requests.Timeout, requests.ConnectionError)):
            return TRANSIENT
        if isinstance(error, requests.HTTPError) and error.response is not None:
            status = error.response.status_code
            if status == 429 or status >= 500:
                return TRANSIENT
            return PERMANENT
        logger.debug(f"{self.backend_name}: unclassified failure treated as permanent: {error!r}")
        return PERMANENT
