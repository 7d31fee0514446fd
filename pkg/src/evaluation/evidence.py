"""
Tier 2 web evidence: domain quality scores, blocked roots, content
validation and the gather pipeline

    search (first available backend) -> drop blocked/excluded -> score
    -> rank (score desc, search order) -> fetch eligible pages in rank order
    -> first valid page wins, else fall back to search snippets

The score table, blocked roots and validation markers ship as JSON under
src/evaluation/data/.
"""

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional
from urllib.parse import urlparse

import requests
import tldextract
from bs4 import BeautifulSoup

from src.core.errors import EvidenceConfigurationError
from src.core.run_config import EvidenceSettings

logger = logging.getLogger("Materializer.Evidence")

DATA_DIR = os.path.join(os.path.dirname(__file__), 'data')

MIN_CONTENT_CHARS = 200
DEFAULT_SCORE = 35
INSTITUTIONAL_SCORE = 70
INSTITUTIONAL_SUFFIXES = {'edu', 'gov', 'org'}
SEARCH_RESULTS = 10

# bundled public-suffix snapshot only; never fetched at runtime
_EXTRACT = tldextract.TLDExtract(suffix_list_urls=())


class ScoreSource(str, Enum):
    EXPLICIT_TABLE = "explicit_table"
    EDU_GOV_ORG_DEFAULT = "edu_gov_org_default"
    HTTPS_DEFAULT = "https_default"


class Validity(str, Enum):
    VALID = "valid"
    BLOCKED = "blocked"
    CAPTCHA_OR_DENIED = "captcha_or_denied"
    TOO_SHORT = "too_short"
    FETCH_FAILED = "fetch_failed"
    SNIPPET_FALLBACK = "snippet_fallback"


USABLE = (Validity.VALID, Validity.SNIPPET_FALLBACK)


@dataclass(frozen=True)
class DomainScore:
    domain: str
    score: int
    source: ScoreSource

    def __post_init__(self):
        if not 0 <= self.score <= 100:
            raise ValueError(f"score out of range: {self.score}")


@dataclass(frozen=True)
class EvidenceSource:
    url: str
    root_domain: str
    score: int
    content: Optional[str]
    validity: Validity
    snippet: Optional[str] = None

    def __post_init__(self):
        too_short = self.content is not None and len(self.content) < MIN_CONTENT_CHARS
        if too_short != (self.validity is Validity.TOO_SHORT):
            raise ValueError(f"{self.url}: validity {self.validity.value} inconsistent with content length")

    @property
    def usable(self):
        return self.validity in USABLE

    @property
    def text(self):
        return self.content if self.validity is Validity.VALID else self.snippet

    def to_record(self):
        return {
            "url": self.url,
            "root_domain": self.root_domain,
            "score": self.score,
            "validity": self.validity.value,
            "chars": len(self.content) if self.content else 0,
        }


def _load(name):
    with open(os.path.join(DATA_DIR, name), 'r', encoding='utf-8') as f:
        return json.load(f)


def hostname(url):
    parsed = urlparse(url)
    if parsed.scheme not in ('http', 'https') or not parsed.hostname:
        raise ValueError(f"Unparseable URL: {url!r}")
    return parsed.hostname.lower().rstrip('.')


def registrable_root(host):
    extracted = _EXTRACT(host)
    if not extracted.suffix or not extracted.domain:
        return host
    return f"{extracted.domain}.{extracted.suffix}".lower()


def _matches(host, domains):
    return any(host == d or host.endswith('.' + d) for d in domains)


def validate_content(text, patterns):
    """Classify fetched page text: captcha/denied/paywall markers, then length."""
    lowered = text.lower()
    for category, markers in patterns.items():
        for marker in markers:
            if marker in lowered:
                logger.debug(f"Page matches {category} marker {marker!r}")
                return Validity.CAPTCHA_OR_DENIED
    if len(text) < MIN_CONTENT_CHARS:
        return Validity.TOO_SHORT
    return Validity.VALID


class DomainScorer:
    def __init__(self, scores=None, blocked=None, patterns=None):
        self.scores = {k.lower(): int(v) for k, v in (scores or _load('domain_scores.json')).items()}
        blocked = blocked if blocked is not None else _load('blocked_domains.json')
        if isinstance(blocked, dict):
            blocked = [d for group in blocked.values() for d in group]
        self.blocked = {d.lower() for d in blocked}
        self.patterns = patterns if patterns is not None else _load('validation_patterns.json')

    def score_domain(self, url):
        host = hostname(url)
        labels = host.split('.')
        for i in range(len(labels) - 1):
            candidate = '.'.join(labels[i:])
            if candidate in self.scores:
                return DomainScore(candidate, self.scores[candidate], ScoreSource.EXPLICIT_TABLE)
        root = registrable_root(host)
        suffix = _EXTRACT(host).suffix
        if INSTITUTIONAL_SUFFIXES & set(suffix.split('.')):
            return DomainScore(root, INSTITUTIONAL_SCORE, ScoreSource.EDU_GOV_ORG_DEFAULT)
        return DomainScore(root, DEFAULT_SCORE, ScoreSource.HTTPS_DEFAULT)

    def is_blocked(self, url, exclusions=()):
        try:
            host = hostname(url)
        except ValueError:
            return True
        root = registrable_root(host)
        excluded = {e.lower() for e in exclusions}
        return (
            _matches(host, self.blocked) or root in self.blocked
            or _matches(host, excluded) or root in excluded
        )


class PageFetcher:
    """requests + BeautifulSoup text extraction, rate limited per domain across threads."""

    _rate_lock = threading.Lock()
    _last_request = {}

    def __init__(self, interval_seconds=1.0, session=None, timeout=20.0, sleep=time.sleep, clock=time.monotonic):
        self.interval = interval_seconds
        self.session = session or requests.Session()
        self.timeout = timeout
        self._sleep = sleep
        self._clock = clock

    def _wait_turn(self, domain):
        with self._rate_lock:
            now = self._clock()
            ready_at = self._last_request.get(domain, now - self.interval) + self.interval
            slot = max(now, ready_at)
            self._last_request[domain] = slot
        if slot > now:
            self._sleep(slot - now)

    @staticmethod
    def extract_text(html):
        soup = BeautifulSoup(html, 'html.parser')
        for tag in soup(['script', 'style', 'noscript']):
            tag.decompose()
        return soup.get_text(' ', strip=True)

    def fetch(self, url):
        self._wait_turn(registrable_root(hostname(url)))
        response = self.session.get(url, timeout=self.timeout, headers={'User-Agent': 'corpus-materializer/1.0'})
        if response.status_code in (401, 403, 429):
            # the body usually carries the denial/captcha text
            return self.extract_text(response.text) or 'access denied'
        response.raise_for_status()
        if 'html' in response.headers.get('Content-Type', 'text/html'):
            return self.extract_text(response.text)
        return response.text


class FixtureFetcher:
    """Offline fetcher: `pages` maps url -> text; urls in `faults` raise a connection error."""

    def __init__(self, pages=None, faults=()):
        self.pages = dict(pages or {})
        self.faults = set(faults)
        self.fetched = []

    def fetch(self, url):
        self.fetched.append(url)
        if url in self.faults or url not in self.pages:
            raise requests.ConnectionError(f"fixture has no page for {url}")
        return self.pages[url]


class EvidenceCollector:
    def __init__(self, chain, fetcher, settings=None, scorer=None):
        self.chain = list(chain)
        self.fetcher = fetcher
        self.settings = settings or EvidenceSettings()
        self.scorer = scorer or DomainScorer()

    def backend(self):
        for backend in self.chain:
            if backend.available():
                return backend
        names = ', '.join(b.name for b in self.chain) or 'none'
        raise EvidenceConfigurationError(f"No search backend available (chain: {names})")

    def screen(self, hits):
        """(ranked, blocked): scored survivors in rank order, plus the blocked hits as sources."""
        kept, blocked = [], []
        for index, hit in enumerate(hits):
            if self.scorer.is_blocked(hit.url, self.settings.exclusions):
                try:
                    root = registrable_root(hostname(hit.url))
                except ValueError:
                    root = ''
                blocked.append(EvidenceSource(hit.url, root, 0, None, Validity.BLOCKED))
                continue
            kept.append((self.scorer.score_domain(hit.url), index, hit))
        kept.sort(key=lambda entry: (-entry[0].score, entry[1]))
        return [(score, hit) for score, _, hit in kept], blocked

    def _attempt(self, score, hit):
        root = registrable_root(hostname(hit.url))
        try:
            text = self.fetcher.fetch(hit.url)
        except Exception as e:
            logger.info(f"Fetch failed for {hit.url}: {e}")
            return EvidenceSource(hit.url, root, score.score, None, Validity.FETCH_FAILED)
        validity = validate_content(text, self.scorer.patterns)
        content = text if validity in (Validity.VALID, Validity.TOO_SHORT) else None
        return EvidenceSource(hit.url, root, score.score, content, validity)

    def gather(self, subject):
        name = getattr(subject, 'name', subject)
        backend = self.backend()
        hits = backend.query(name, SEARCH_RESULTS)
        ranked, blocked = self.screen(hits)
        if blocked:
            logger.debug(f"{name}: dropped {len(blocked)} blocked result(s)")
        eligible = [(s, h) for s, h in ranked if s.score >= self.settings.min_fetch_score]
        if not eligible:
            logger.info(f"{name}: no eligible web evidence among {len(hits)} result(s)")
            return []

        sources = []
        attempted = eligible[: self.settings.max_fetch_attempts]
        for score, hit in attempted:
            source = self._attempt(score, hit)
            sources.append(source)
            if source.validity is Validity.VALID:
                return sources

        for score, hit in attempted:
            if hit.snippet:
                sources.append(EvidenceSource(
                    hit.url, registrable_root(hostname(hit.url)), score.score, None,
                    Validity.SNIPPET_FALLBACK, snippet=hit.snippet,
                ))
        logger.info(f"{name}: no valid page after {len(attempted)} fetch(es); using snippets")
        return sources


def usable_sources(sources):
    return [s for s in sources if s.usable]
