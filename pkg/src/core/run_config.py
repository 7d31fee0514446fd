"""
RunConfig: the validated, immutable description of one materialization run.

Built from the INI config (src/utils/config_loader.py) plus CLI overrides;
validate_config() fills defaults and rejects inconsistent combinations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from src.core.errors import ConfigError
from src.core.models import (
    ExecutionMode,
    Mode,
    Persona,
    Strategy,
    fraction_to_text,
    text_to_fraction,
)

logger = logging.getLogger("Materializer.Config")

DEFAULT_CONFIDENCE_THRESHOLD = Fraction("0.75")
DEFAULT_SIMILARITY_THRESHOLD = Fraction("0.90")
DEFAULT_AVG_WORDS = 716
DEFAULT_TOPIC_DEPTH_CAP = 2

STAGES = (
    "self_grounding",
    "outline",
    "elicitation",
    "ner",
    "arbitration",
    "claim_extraction",
    "verdict",
)

_DEFAULT_MAX_TOKENS = {
    "self_grounding": 1200,
    "outline": 400,
    "elicitation": 4000,
    "ner": 2000,
    "arbitration": 200,
    "claim_extraction": 1200,
    "verdict": 300,
}

# Execution tuning that cannot change the corpus; left out of the checksum so a
# run may be resumed with a different worker count or execution mode.
_UNCHECKED_FIELDS = {
    "execution_mode",
    "worker_threads",
    "global_concurrency_cap",
    "progress_interval_seconds",
    "backoff_base_seconds",
    "backoff_cap_seconds",
}


@dataclass(frozen=True)
class StageSettings:
    model: Optional[str] = None
    max_tokens: int = 1000


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "mock"
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-5-mini"
    embedding_model: str = "text-embedding-3-small"
    api_key_env: str = "MATERIALIZER_API_KEY"
    embedding_dim: int = 64
    timeout_seconds: float = 120.0


@dataclass(frozen=True)
class EvidenceSettings:
    search_chain: tuple[str, ...] = ("valyu", "serper", "brave", "duckduckgo")
    exclusions: tuple[str, ...] = ()
    min_fetch_score: int = 60
    max_fetch_attempts: int = 3
    per_domain_interval_seconds: float = 1.0
    mediawiki_api_url: str = "https://en.wikipedia.org/w/api.php"


@dataclass(frozen=True)
class RunConfig:
    mode: Mode = Mode.GENERAL_DOMAIN
    seed_subject: str = "Vannevar Bush"
    root_subject: Optional[str] = None
    persona: Persona = Persona.SCIENTIFIC_NEUTRAL
    strategy: Strategy = Strategy.BASELINE
    self_grounding: bool = False
    confidence_threshold: Optional[Fraction] = None
    similarity_threshold: Optional[Fraction] = None
    avg_words_per_article: Optional[int] = None
    depth_cap: Optional[int] = None
    article_budget: Optional[int] = None
    max_retries: int = 3
    global_concurrency_cap: int = 8
    execution_mode: ExecutionMode = ExecutionMode.ONLINE
    random_seed: int = 0
    worker_threads: int = 4
    ner_batch_size: int = 50
    arbitration_excerpt_chars: int = 500
    backoff_base_seconds: float = 0.5
    backoff_cap_seconds: float = 60.0
    progress_interval_seconds: float = 30.0
    stage_settings: dict = field(default_factory=dict)

    def stage(self, name: str) -> StageSettings:
        return self.stage_settings.get(name) or StageSettings(max_tokens=_DEFAULT_MAX_TOKENS.get(name, 1000))

    def to_record(self) -> dict:
        record = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Fraction):
                value = fraction_to_text(value)
            elif hasattr(value, "value"):
                value = value.value
            elif f.name == "stage_settings":
                value = {k: dataclasses.asdict(v) for k, v in sorted(value.items())}
            record[f.name] = value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "RunConfig":
        return cls(
            mode=Mode(record["mode"]),
            seed_subject=record["seed_subject"],
            root_subject=record.get("root_subject"),
            persona=Persona(record["persona"]),
            strategy=Strategy(record["strategy"]),
            self_grounding=bool(record["self_grounding"]),
            confidence_threshold=text_to_fraction(record.get("confidence_threshold")),
            similarity_threshold=text_to_fraction(record.get("similarity_threshold")),
            avg_words_per_article=record.get("avg_words_per_article"),
            depth_cap=record.get("depth_cap"),
            article_budget=record.get("article_budget"),
            max_retries=int(record["max_retries"]),
            global_concurrency_cap=int(record["global_concurrency_cap"]),
            execution_mode=ExecutionMode(record["execution_mode"]),
            random_seed=int(record["random_seed"]),
            worker_threads=int(record.get("worker_threads", 4)),
            ner_batch_size=int(record.get("ner_batch_size", 50)),
            arbitration_excerpt_chars=int(record.get("arbitration_excerpt_chars", 500)),
            backoff_base_seconds=float(record.get("backoff_base_seconds", 0.5)),
            backoff_cap_seconds=float(record.get("backoff_cap_seconds", 60.0)),
            progress_interval_seconds=float(record.get("progress_interval_seconds", 30.0)),
            stage_settings={k: StageSettings(**v) for k, v in record.get("stage_settings", {}).items()},
        )

    def checksum(self) -> str:
        """sha256 over the fields that determine the corpus."""
        record = {k: v for k, v in self.to_record().items() if k not in _UNCHECKED_FIELDS}
        payload = json.dumps(record, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def validate_config(config: RunConfig) -> RunConfig:
    """Return `config` with defaults filled; raise ConfigError on inconsistent combinations."""
    if config.mode is Mode.TOPIC_FOCUSED and not config.root_subject:
        raise ConfigError("topic_focused mode requires root_subject")
    if config.mode is Mode.GENERAL_DOMAIN and config.root_subject:
        raise ConfigError("general_domain mode must not set root_subject")
    if not config.seed_subject or not config.seed_subject.strip():
        raise ConfigError("seed_subject must be a non-empty name")

    confidence = config.confidence_threshold
    if confidence is None:
        confidence = DEFAULT_CONFIDENCE_THRESHOLD
    similarity = config.similarity_threshold
    if similarity is None:
        similarity = DEFAULT_SIMILARITY_THRESHOLD
    for name, value in (("confidence_threshold", confidence), ("similarity_threshold", similarity)):
        if not (0 < value <= 1):
            raise ConfigError(f"{name} must lie in (0, 1], got {value}")

    avg_words = config.avg_words_per_article if config.avg_words_per_article is not None else DEFAULT_AVG_WORDS
    if avg_words <= 0:
        raise ConfigError(f"avg_words_per_article must be positive, got {avg_words}")

    depth_cap = config.depth_cap
    if depth_cap is None and config.mode is Mode.TOPIC_FOCUSED:
        depth_cap = DEFAULT_TOPIC_DEPTH_CAP
    if depth_cap is not None and depth_cap < 0:
        raise ConfigError(f"depth_cap must be non-negative, got {depth_cap}")

    if config.article_budget is not None and config.article_budget <= 0:
        raise ConfigError(f"article_budget must be positive, got {config.article_budget}")

    for name in ("max_retries", "global_concurrency_cap", "worker_threads", "ner_batch_size"):
        if getattr(config, name) <= 0:
            raise ConfigError(f"{name} must be positive, got {getattr(config, name)}")
    if config.arbitration_excerpt_chars < 0:
        raise ConfigError("arbitration_excerpt_chars must be non-negative")
    unknown = set(config.stage_settings) - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stage(s) in stage settings: {sorted(unknown)}")

    validated = dataclasses.replace(
        config,
        confidence_threshold=Fraction(confidence),
        similarity_threshold=Fraction(similarity),
        avg_words_per_article=avg_words,
        depth_cap=depth_cap,
    )
    logger.debug(f"Validated config: {validated.to_record()}")
    return validated
