"""
Clients for the reference encyclopedia (Tier 1 evidence).

A missing page is a value (None); a transport failure after retries is
ReferenceFetchError, so callers can tell "no reference" from "could not ask".
"""

import logging
from dataclasses import dataclass
from typing import Optional

import requests

from src.core.errors import ReferenceFetchError
from src.utils.retry import retry_with_backoff

logger = logging.getLogger("Materializer.Reference")

USER_AGENT = "corpus-materializer/1.0 (evaluation)"


@dataclass(frozen=True)
class ReferenceArticle:
    title: str
    text: str
    resolved_from: Optional[str] = None


class MediaWikiClient:
    """Plain-text page extracts from a MediaWiki API endpoint, redirects resolved."""

    def __init__(self, api_url, session=None, max_retries=3, timeout=30.0, sleep=None):
        self.api_url = api_url
        self.session = session or requests.Session()
        self.session.headers["User-Agent"] = USER_AGENT
        self.timeout = timeout
        retry_kwargs = dict(max_retries=max_retries, exceptions=(requests.RequestException,))
        if sleep is not None:
            retry_kwargs['sleep'] = sleep
        self._query = retry_with_backoff(**retry_kwargs)(self._query_once)

    def _query_once(self, title):
        params = {
            "action": "query",
            "prop": "extracts",
            "explaintext": 1,
            "redirects": 1,
            "titles": title,
            "format": "json",
            "formatversion": 2,
        }
        response = self.session.get(self.api_url, params=params, timeout=self.timeout)
        response.raise_for_status()
        return response.json()

    @staticmethod
    def make_article(title, data):
        query = data.get("query", {})
        pages = query.get("pages", [])
        if not pages:
            return None
        page = pages[0]
        if page.get("missing") or page.get("invalid"):
            return None
        text = page.get("extract") or ""
        if not text.strip():
            return None
        resolved_from = title if page["title"] != title else None
        return ReferenceArticle(title=page["title"], text=text, resolved_from=resolved_from)

    def fetch_article(self, title):
        try:
            data = self._query(title)
        except (requests.RequestException, ValueError) as e:
            raise ReferenceFetchError(f"Reference lookup for {title!r} failed: {e}") from e
        article = self.make_article(title, data)
        if article is None:
            logger.info(f"No reference page for {title!r}")
        elif article.resolved_from:
            logger.debug(f"Reference {title!r} redirected to {article.title!r}")
        return article


class FixtureReferenceClient:
    """
    Offline reference client. `pages` maps title -> text, `redirects` maps
    title -> target title, and titles in `faults` raise ReferenceFetchError.
    """

    def __init__(self, pages=None, redirects=None, faults=()):
        self.pages = dict(pages or {})
        self.redirects = dict(redirects or {})
        self.faults = set(faults)
        self.requests = []

    def fetch_article(self, title):
        self.requests.append(title)
        if title in self.faults:
            raise ReferenceFetchError(f"Reference lookup for {title!r} failed: fixture fault")
        target = self.redirects.get(title, title)
        text = self.pages.get(target)
        if text is None:
            return None
        return ReferenceArticle(title=target, text=text, resolved_from=title if target != title else None)
