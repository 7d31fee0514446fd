"""
Web search adapters for Tier 2 evidence.

Every backend implements query(text, k) -> list[SearchHit] and reports
whether it can run in this environment (API key present). The evidence
collector uses the first available backend of the configured chain.
"""

import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from urllib.parse import parse_qs, urlparse

import requests
from bs4 import BeautifulSoup

from src.core.errors import ConfigError

logger = logging.getLogger("Materializer.Search")


@dataclass(frozen=True)
class SearchHit:
    url: str
    snippet: str = ""
    title: str = ""


class SearchBackend(ABC):
    name = "search"
    key_env = None

    def __init__(self, session=None, timeout=20.0):
        self.session = session or requests.Session()
        self.timeout = timeout

    @property
    def api_key(self):
        return os.environ.get(self.key_env) if self.key_env else None

    def available(self):
        return self.key_env is None or bool(self.api_key)

    @abstractmethod
    def query(self, text, k=10):
        pass


class ValyuSearch(SearchBackend):
    name = "valyu"
    key_env = "VALYU_API_KEY"
    endpoint = "https://api.valyu.network/v1/deepsearch"
    snippet_chars = 500

    def query(self, text, k=10):
        response = self.session.post(
            self.endpoint,
            json={"query": text, "search_type": "web", "max_num_results": k},
            headers={"x-api-key": self.api_key, "Content-Type": "application/json"},
            timeout=self.timeout,
        )
        response.raise_for_status()
        hits = []
        for item in response.json().get("results", [])[:k]:
            if not item.get("url"):
                continue
            snippet = item.get("description") or item.get("content") or ""
            if not isinstance(snippet, str):
                snippet = ""
            hits.append(SearchHit(url=item["url"], snippet=snippet[:self.snippet_chars], title=item.get("title", "")))
        return hits


class SerperSearch(SearchBackend):
    name = "serper"
    key_env = "SERPER_API_KEY"
    endpoint = "https://google.serper.dev/search"

    def query(self, text, k=10):
        response = self.session.post(
            self.endpoint,
            json={"q": text, "num": k},
            headers={"X-API-KEY": self.api_key, "Content-Type": "application/json"},
            timeout=self.timeout,
        )
        response.raise_for_status()
        return [
            SearchHit(url=item["link"], snippet=item.get("snippet", ""), title=item.get("title", ""))
            for item in response.json().get("organic", [])[:k]
            if item.get("link")
        ]


class BraveSearch(SearchBackend):
    name = "brave"
    key_env = "BRAVE_API_KEY"
    endpoint = "https://api.search.brave.com/res/v1/web/search"

    def query(self, text, k=10):
        response = self.session.get(
            self.endpoint,
            params={"q": text, "count": k},
            headers={"X-Subscription-Token": self.api_key, "Accept": "application/json"},
            timeout=self.timeout,
        )
        response.raise_for_status()
        results = response.json().get("web", {}).get("results", [])
        return [
            SearchHit(url=item["url"], snippet=item.get("description", ""), title=item.get("title", ""))
            for item in results[:k]
            if item.get("url")
        ]


class DuckDuckGoSearch(SearchBackend):
    """Keyless fallback scraping the HTML endpoint."""

    name = "duckduckgo"
    endpoint = "https://html.duckduckgo.com/html/"

    @staticmethod
    def _target(href):
        # result links are redirects of the form //duckduckgo.com/l/?uddg=<encoded url>
        parsed = urlparse(href)
        if "uddg" in parse_qs(parsed.query):
            return parse_qs(parsed.query)["uddg"][0]
        return href

    def parse(self, html, k=10):
        soup = BeautifulSoup(html, "html.parser")
        hits = []
        for result in soup.select("div.result"):
            link = result.select_one("a.result__a")
            if link is None or not link.get("href"):
                continue
            snippet = result.select_one(".result__snippet")
            hits.append(SearchHit(
                url=self._target(link["href"]),
                snippet=snippet.get_text(" ", strip=True) if snippet else "",
                title=link.get_text(" ", strip=True),
            ))
            if len(hits) >= k:
                break
        return hits

    def query(self, text, k=10):
        response = self.session.post(
            self.endpoint,
            data={"q": text},
            headers={"User-Agent": "Mozilla/5.0 (compatible; corpus-materializer/1.0)"},
            timeout=self.timeout,
        )
        response.raise_for_status()
        return self.parse(response.text, k)


class FixtureSearch(SearchBackend):
    """Offline backend: `results` maps query text -> list of SearchHit (or (url, snippet) pairs)."""

    name = "fixture"

    def __init__(self, results=None, default=()):
        super().__init__()
        self.results = {
            q: [h if isinstance(h, SearchHit) else SearchHit(*h) for h in hits]
            for q, hits in (results or {}).items()
        }
        self.default = [h if isinstance(h, SearchHit) else SearchHit(*h) for h in default]
        self.queries = []

    def query(self, text, k=10):
        self.queries.append(text)
        return list(self.results.get(text, self.default))[:k]


SEARCH_BACKENDS = {
    ValyuSearch.name: ValyuSearch,
    SerperSearch.name: SerperSearch,
    BraveSearch.name: BraveSearch,
    DuckDuckGoSearch.name: DuckDuckGoSearch,
}


def build_search_chain(names, session=None):
    chain = []
    for name in names:
        if name not in SEARCH_BACKENDS:
            raise ConfigError(f"Unknown search backend {name!r}; expected one of: {', '.join(SEARCH_BACKENDS)}")
        chain.append(SEARCH_BACKENDS[name](session=session))
    return chain
