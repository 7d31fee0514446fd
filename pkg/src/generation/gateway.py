"""
ModelGateway: the single choke point for generation and embedding calls.

- retries transient failures with exponential backoff and seeded full jitter
- stops immediately on failures the backend classifies as permanent
- enforces the global concurrency cap across every stage
- returns exhaustion as a value (BackendResult.outcome); callers apply the strict gate
"""

from __future__ import annotations

import json
import logging
import random
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from src.core.errors import GatewayExhaustedError
from src.core.models import FactSheet, Subject
from src.core.run_config import RunConfig
from src.generation.backends.base_backend import PERMANENT
from src.generation.prompt_forge import PromptBundle, PromptForge
from src.utils.parallel import process_in_parallel
from src.utils.retry import backoff_delay

logger = logging.getLogger("Materializer.Gateway")

FACT_FLAG_THRESHOLD = Fraction("0.75")

_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$")


class Outcome(str, Enum):
    OK = "ok"
    EXHAUSTED = "exhausted"
    FAILED = "failed"


@dataclass(frozen=True)
class GenerationRequest:
    bundle: PromptBundle
    max_tokens: int
    subject: str = ""
    model: Optional[str] = None
    temperature: int = 0
    tag: str = ""

    def __post_init__(self):
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature != 0:
            raise ValueError("pipeline requests run at temperature 0")


@dataclass(frozen=True)
class BackendResult:
    text: Optional[str]
    attempts: int
    outcome: Outcome
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.OK


def parse_json_reply(text: Optional[str]) -> dict:
    """Parse a JSON object reply, tolerating a surrounding ``` fence. Raises ValueError."""
    if text is None:
        raise ValueError("no reply")
    cleaned = _FENCE.sub("", text.strip())
    data = json.loads(cleaned)
    if not isinstance(data, dict):
        raise ValueError("reply is not a JSON object")
    return data


class ModelGateway:
    def __init__(
        self,
        backend,
        config: RunConfig,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self.backend = backend
        self.config = config
        self.max_retries = config.max_retries
        self._sleep = sleep
        self._rng = rng or random.Random(config.random_seed)
        self._slots = threading.BoundedSemaphore(config.global_concurrency_cap)
        self._stats_lock = threading.Lock()
        self._in_flight = 0
        self.peak_in_flight = 0
        self.total_calls = 0

    # ------------------------------------------------------------------ plumbing

    def _call(self, fn, *args):
        with self._slots:
            with self._stats_lock:
                self._in_flight += 1
                self.total_calls += 1
                self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
            try:
                return fn(*args)
            finally:
                with self._stats_lock:
                    self._in_flight -= 1

    def _with_retries(self, label: str, fn, *args):
        """Returns (value, attempts, outcome, error); value is None unless outcome is ok."""
        attempt = 0
        while True:
            try:
                return self._call(fn, *args), attempt + 1, Outcome.OK, None
            except Exception as e:
                kind = self.backend.classify_failure(e)
                if kind == PERMANENT:
                    logger.error(f"{label}: permanent failure after {attempt + 1} attempt(s): {e}")
                    return None, attempt + 1, Outcome.FAILED, str(e)
                if attempt >= self.max_retries:
                    logger.error(f"{label}: exhausted after {attempt + 1} attempt(s): {e}")
                    return None, attempt + 1, Outcome.EXHAUSTED, str(e)
                delay = backoff_delay(
                    attempt, self.config.backoff_base_seconds, self.config.backoff_cap_seconds, self._rng)
                attempt += 1
                logger.warning(f"{label}: attempt {attempt}/{self.max_retries + 1} failed, retrying in {delay:.2f}s: {e}")
                self._sleep(delay)

    # ------------------------------------------------------------------ requests

    def request(self, bundle: PromptBundle, subject: str = "", tag: str = "") -> GenerationRequest:
        settings = self.config.stage(bundle.stage)
        return GenerationRequest(
            bundle=bundle,
            max_tokens=settings.max_tokens,
            subject=subject,
            model=settings.model,
            tag=tag or f"{bundle.stage}:{subject}",
        )

    def complete(self, request: GenerationRequest) -> BackendResult:
        params = {
            "stage": request.bundle.stage,
            "subject": request.subject,
            "model": request.model,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "seed": self.config.random_seed,
            "tag": request.tag,
            "placeholders": dict(request.bundle.placeholders_filled),
        }
        text, attempts, outcome, error = self._with_retries(
            request.tag, self.backend.complete, request.bundle.system_text, request.bundle.user_text, params)
        return BackendResult(text=text, attempts=attempts, outcome=outcome, error=error)

    def complete_many(self, requests: Sequence[GenerationRequest], max_workers: int = 4) -> list[BackendResult]:
        """Batch execution: one group per stage, results in request order."""
        if requests:
            logger.debug(f"Batch of {len(requests)} {requests[0].bundle.stage} request(s)")
        return process_in_parallel(requests, self.complete, max_workers=max_workers)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        texts = list(texts)
        if not texts:
            raise ValueError("embed needs at least one text")
        vectors, attempts, outcome, error = self._with_retries("embed", self.backend.embed, texts)
        if outcome is not Outcome.OK:
            raise GatewayExhaustedError(f"embedding failed ({outcome.value}, {attempts} attempt(s)): {error}")
        return [np.asarray(v, dtype=float) for v in vectors]

    # ------------------------------------------------------------------ self-grounding

    def self_ground(self, subject: Subject, config: RunConfig, forge: PromptForge) -> Optional[FactSheet]:
        """
        Fact sheet for `subject`, or None when the reply is unusable (the
        article is then generated without grounding).
        """
        return self.parse_fact_sheet(subject, self.complete(self.fact_sheet_request(subject, config, forge)))

    def fact_sheet_request(self, subject: Subject, config: RunConfig, forge: PromptForge) -> GenerationRequest:
        if not config.self_grounding:
            raise ValueError("self-grounding is disabled for this run")
        bundle = forge.render("self_grounding", config, subject)
        return self.request(bundle, subject=subject.name)

    def parse_fact_sheet(self, subject: Subject, result: BackendResult) -> Optional[FactSheet]:
        if not result.ok:
            logger.warning(f"Self-grounding for {subject.name} {result.outcome.value}; continuing without")
            return None
        try:
            data = parse_json_reply(result.text)
            facts = []
            for item in data.get("facts", []):
                facts.append((str(item["predicate"]), str(item["object"]), Fraction(str(item["confidence"]))))
            return FactSheet(
                summary=str(data.get("summary", "")),
                aliases=tuple(str(a) for a in data.get("aliases", [])),
                facts=tuple(facts),
                flagged=tuple(conf < FACT_FLAG_THRESHOLD for _, _, conf in facts),
            )
        except (ValueError, KeyError, TypeError, ArithmeticError) as e:
            logger.warning(f"Unparseable fact sheet for {subject.name}; continuing without: {e}")
            return None
