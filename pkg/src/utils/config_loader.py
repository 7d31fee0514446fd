import configparser
import os
from fractions import Fraction

from src.core.errors import ConfigError
from src.core.models import ExecutionMode, Mode, Persona, Strategy
from src.core.run_config import (
    STAGES,
    BackendSettings,
    EvidenceSettings,
    RunConfig,
    StageSettings,
)


def load_config(config_path='configs/default_config.ini'):
    """
    Loads the configuration from a .ini file.

    Args:
        config_path (str): The path to the configuration file.

    Returns:
        configparser.ConfigParser: The loaded configuration object.
    """
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"Configuration file not found at: {config_path}")

    config = configparser.ConfigParser()
    # Specify UTF-8 encoding to handle non-ASCII subject names
    config.read(config_path, encoding='utf-8')
    return config


def empty_config():
    """A parser with no sections; every value then comes from defaults or overrides."""
    return configparser.ConfigParser()


def _optional(config, section, key, cast):
    raw = config.get(section, key, fallback='').strip()
    if raw == '' or raw.lower() == 'none':
        return None
    try:
        return cast(raw)
    except (ValueError, ArithmeticError) as e:
        raise ConfigError(f"[{section}] {key} = {raw!r} is invalid: {e}") from e


def _enum(config, section, key, enum_cls, default):
    raw = config.get(section, key, fallback=default.value).strip()
    try:
        return enum_cls(raw)
    except ValueError as e:
        choices = ', '.join(m.value for m in enum_cls)
        raise ConfigError(f"[{section}] {key} = {raw!r}; expected one of: {choices}") from e


def _list(raw):
    return tuple(x.strip() for x in raw.split(',') if x.strip())


def build_run_config(config, overrides=None):
    """
    Turn the INI sections into a RunConfig. `overrides` maps RunConfig field
    names to values taken from CLI flags; they win over the file.

    The result is not yet validated; pass it through validate_config().
    """
    try:
        stage_settings = {}
        for stage in STAGES:
            model = config.get('Stages', f'{stage}_model', fallback='').strip() or None
            max_tokens = config.getint('Stages', f'{stage}_max_tokens', fallback=0)
            if model or max_tokens:
                stage_settings[stage] = StageSettings(model=model, max_tokens=max_tokens or 1000)

        values = dict(
            mode=_enum(config, 'General', 'mode', Mode, Mode.GENERAL_DOMAIN),
            seed_subject=config.get('General', 'seed_subject', fallback='Vannevar Bush').strip(),
            root_subject=_optional(config, 'General', 'root_subject', str),
            persona=_enum(config, 'General', 'persona', Persona, Persona.SCIENTIFIC_NEUTRAL),
            strategy=_enum(config, 'General', 'strategy', Strategy, Strategy.BASELINE),
            self_grounding=config.getboolean('General', 'self_grounding', fallback=False),
            random_seed=config.getint('General', 'random_seed', fallback=0),
            confidence_threshold=_optional(config, 'Thresholds', 'confidence_threshold', Fraction),
            similarity_threshold=_optional(config, 'Thresholds', 'similarity_threshold', Fraction),
            avg_words_per_article=_optional(config, 'Generation', 'avg_words_per_article', int),
            depth_cap=_optional(config, 'Generation', 'depth_cap', int),
            article_budget=_optional(config, 'Generation', 'article_budget', int),
            execution_mode=_enum(config, 'Execution', 'execution_mode', ExecutionMode, ExecutionMode.ONLINE),
            worker_threads=config.getint('Execution', 'worker_threads', fallback=4),
            global_concurrency_cap=config.getint('Execution', 'global_concurrency_cap', fallback=8),
            max_retries=config.getint('Execution', 'max_retries', fallback=3),
            backoff_base_seconds=config.getfloat('Execution', 'backoff_base_seconds', fallback=0.5),
            backoff_cap_seconds=config.getfloat('Execution', 'backoff_cap_seconds', fallback=60.0),
            ner_batch_size=config.getint('Execution', 'ner_batch_size', fallback=50),
            arbitration_excerpt_chars=config.getint('Execution', 'arbitration_excerpt_chars', fallback=500),
            progress_interval_seconds=config.getfloat('Execution', 'progress_interval_seconds', fallback=30.0),
            stage_settings=stage_settings,
        )
    except ValueError as e:
        # configparser's getint/getboolean raise plain ValueError
        raise ConfigError(f"Invalid configuration value: {e}") from e

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in values:
            raise ConfigError(f"Unknown override: {key}")
        values[key] = value
    return RunConfig(**values)


def build_backend_settings(config, kind_override=None):
    return BackendSettings(
        kind=(kind_override or config.get('Backend', 'kind', fallback='mock')).strip(),
        base_url=config.get('Backend', 'base_url', fallback=BackendSettings.base_url).strip(),
        model=config.get('Backend', 'model', fallback=BackendSettings.model).strip(),
        embedding_model=config.get('Backend', 'embedding_model', fallback=BackendSettings.embedding_model).strip(),
        api_key_env=config.get('Backend', 'api_key_env', fallback=BackendSettings.api_key_env).strip(),
        embedding_dim=config.getint('Backend', 'embedding_dim', fallback=BackendSettings.embedding_dim),
        timeout_seconds=config.getfloat('Backend', 'timeout_seconds', fallback=BackendSettings.timeout_seconds),
    )


def build_evidence_settings(config):
    defaults = EvidenceSettings()
    chain = config.get('Evidence', 'search_chain', fallback=','.join(defaults.search_chain))
    return EvidenceSettings(
        search_chain=_list(chain),
        exclusions=_list(config.get('Evidence', 'exclusions', fallback='')),
        min_fetch_score=config.getint('Evidence', 'min_fetch_score', fallback=defaults.min_fetch_score),
        max_fetch_attempts=config.getint('Evidence', 'max_fetch_attempts', fallback=defaults.max_fetch_attempts),
        per_domain_interval_seconds=config.getfloat(
            'Evidence', 'per_domain_interval_seconds', fallback=defaults.per_domain_interval_seconds),
        mediawiki_api_url=config.get('Evidence', 'mediawiki_api_url', fallback=defaults.mediawiki_api_url).strip(),
    )
