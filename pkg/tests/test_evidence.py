import pytest

from src.core.errors import EvidenceConfigurationError
from src.core.run_config import EvidenceSettings
from src.evaluation.evidence import (
    DEFAULT_SCORE,
    INSTITUTIONAL_SCORE,
    MIN_CONTENT_CHARS,
    DomainScorer,
    EvidenceCollector,
    EvidenceSource,
    FixtureFetcher,
    PageFetcher,
    ScoreSource,
    Validity,
    registrable_root,
    usable_sources,
    validate_content,
)
from src.evaluation.search_backends import BraveSearch, FixtureSearch, SerperSearch

SUBJECT = "Vannevar Bush"
LONG_PAGE = "Vannevar Bush directed the Office of Scientific Research and Development. " * 5
CAPTCHA_PAGE = "Please verify you are human before continuing. " * 10

BRITANNICA = "https://www.britannica.com/biography/Vannevar-Bush"
NATURE = "https://www.nature.com/articles/bush"
NEJM = "https://www.nejm.org/doi/bush"
LOC = "https://www.loc.gov/item/bush"
BLOG = "https://someblog.net/bush"


@pytest.fixture(scope="module")
def scorer():
    return DomainScorer()


def collector(hits, pages=None, faults=(), **settings):
    search = FixtureSearch({SUBJECT: hits})
    fetcher = FixtureFetcher(pages, faults)
    return EvidenceCollector([search], fetcher, EvidenceSettings(**settings)), fetcher


def test_score_table_size(scorer):
    assert len(scorer.scores) == 133


@pytest.mark.parametrize("url, score", [
    (BRITANNICA, 100),
    ("https://britannica.com/topic/x", 100),
    (NATURE, 95),
    (NEJM, 94),
    ("https://plato.stanford.edu/entries/memex/", 95),
    (LOC, 97),
    ("https://www.worldhistory.org/Babylon/", 90),
])
def test_explicit_scores(scorer, url, score):
    result = scorer.score_domain(url)
    assert result.score == score
    assert result.source is ScoreSource.EXPLICIT_TABLE


@pytest.mark.parametrize("url, score, source", [
    ("https://www.tinycollege.edu/history", INSTITUTIONAL_SCORE, ScoreSource.EDU_GOV_ORG_DEFAULT),
    ("https://archives.some-county.gov/records", INSTITUTIONAL_SCORE, ScoreSource.EDU_GOV_ORG_DEFAULT),
    ("https://amateur-history-society.org/", INSTITUTIONAL_SCORE, ScoreSource.EDU_GOV_ORG_DEFAULT),
    (BLOG, DEFAULT_SCORE, ScoreSource.HTTPS_DEFAULT),
])
def test_default_scores(scorer, url, score, source):
    result = scorer.score_domain(url)
    assert (result.score, result.source) == (score, source)


def test_unparseable_url(scorer):
    with pytest.raises(ValueError):
        scorer.score_domain("not a url")
    assert scorer.is_blocked("not a url")


@pytest.mark.parametrize("url, blocked", [
    ("https://en.m.wikipedia.org/wiki/Vannevar_Bush", True),
    ("https://de.wikipedia.org/wiki/Vannevar_Bush", True),
    ("https://scholar.google.com/scholar?q=bush", True),
    ("https://www.reddit.com/r/history", True),
    (NATURE, False),
    (BLOG, False),
])
def test_blocked_roots(scorer, url, blocked):
    assert scorer.is_blocked(url) is blocked


def test_exclusions_block_extra_domains(scorer):
    assert scorer.is_blocked(NATURE, exclusions=("nature.com",))
    assert not scorer.is_blocked(NEJM, exclusions=("nature.com",))


def test_registrable_root():
    assert registrable_root("news.bbc.co.uk") == "bbc.co.uk"
    assert registrable_root("localhost") == "localhost"


def test_validate_content(scorer):
    assert validate_content(CAPTCHA_PAGE, scorer.patterns) is Validity.CAPTCHA_OR_DENIED
    assert validate_content("Subscribe to continue reading. " * 10, scorer.patterns) is Validity.CAPTCHA_OR_DENIED
    assert validate_content("x" * (MIN_CONTENT_CHARS - 1), scorer.patterns) is Validity.TOO_SHORT
    assert validate_content("x" * MIN_CONTENT_CHARS, scorer.patterns) is Validity.VALID


def test_evidence_source_length_invariant():
    EvidenceSource(BLOG, "someblog.net", 35, "short", Validity.TOO_SHORT)
    EvidenceSource(BLOG, "someblog.net", 35, LONG_PAGE, Validity.VALID)
    with pytest.raises(ValueError):
        EvidenceSource(BLOG, "someblog.net", 35, "short", Validity.VALID)
    with pytest.raises(ValueError):
        EvidenceSource(BLOG, "someblog.net", 35, None, Validity.TOO_SHORT)


def test_gather_fetches_only_eligible_in_rank_order():
    hits = [(BLOG, "blog snippet"), (NATURE, "nature snippet"), (BRITANNICA, "britannica snippet")]
    evidence, fetcher = collector(hits, faults={BRITANNICA, NATURE})
    sources = evidence.gather(SUBJECT)
    assert fetcher.fetched == [BRITANNICA, NATURE]
    assert [s.validity for s in sources] == [Validity.FETCH_FAILED, Validity.FETCH_FAILED,
                                             Validity.SNIPPET_FALLBACK, Validity.SNIPPET_FALLBACK]
    assert [s.text for s in usable_sources(sources)] == ["britannica snippet", "nature snippet"]


def test_gather_stops_at_first_valid_page():
    hits = [(BRITANNICA, "a"), (NATURE, "b"), (NEJM, "c")]
    evidence, fetcher = collector(hits, pages={BRITANNICA: "x" * 150, NATURE: LONG_PAGE, NEJM: LONG_PAGE})
    sources = evidence.gather(SUBJECT)
    assert fetcher.fetched == [BRITANNICA, NATURE]
    assert [s.validity for s in sources] == [Validity.TOO_SHORT, Validity.VALID]
    assert sources[0].content == "x" * 150
    assert sources[1].text == LONG_PAGE
    assert sources[1].root_domain == "nature.com"


def test_gather_caps_fetch_attempts_and_falls_back_to_snippets():
    urls = [BRITANNICA, LOC, NATURE, NEJM]
    evidence, fetcher = collector([(u, f"snippet {i}") for i, u in enumerate(urls)],
                                  pages={u: CAPTCHA_PAGE for u in urls})
    sources = evidence.gather(SUBJECT)
    assert fetcher.fetched == [BRITANNICA, LOC, NATURE]
    assert [s.validity for s in sources[:3]] == [Validity.CAPTCHA_OR_DENIED] * 3
    assert all(s.content is None for s in sources[:3])
    assert [s.snippet for s in sources[3:]] == ["snippet 0", "snippet 1", "snippet 2"]


def test_gather_without_eligible_hits():
    evidence, fetcher = collector([(BLOG, "x"), ("https://en.wikipedia.org/wiki/Vannevar_Bush", "y")])
    assert evidence.gather(SUBJECT) == []
    assert fetcher.fetched == []


def test_gather_respects_exclusions():
    hits = [(BRITANNICA, "a"), (NATURE, "b")]
    evidence, fetcher = collector(hits, pages={NATURE: LONG_PAGE}, exclusions=("britannica.com",))
    sources = evidence.gather(SUBJECT)
    assert fetcher.fetched == [NATURE]
    assert sources[0].validity is Validity.VALID


def test_screen_reports_blocked_hits():
    evidence, _ = collector([])
    hits = FixtureSearch(default=[("https://www.youtube.com/watch?v=1", ""), (BLOG, "")]).query(SUBJECT)
    ranked, blocked = evidence.screen(hits)
    assert [h.url for _, h in ranked] == [BLOG]
    assert blocked[0].validity is Validity.BLOCKED
    assert blocked[0].root_domain == "youtube.com"


def test_no_available_backend(monkeypatch):
    monkeypatch.delenv("SERPER_API_KEY", raising=False)
    monkeypatch.delenv("BRAVE_API_KEY", raising=False)
    evidence = EvidenceCollector([SerperSearch(), BraveSearch()], FixtureFetcher())
    with pytest.raises(EvidenceConfigurationError):
        evidence.gather(SUBJECT)


def test_first_available_backend_wins(monkeypatch):
    monkeypatch.delenv("SERPER_API_KEY", raising=False)
    monkeypatch.setenv("BRAVE_API_KEY", "key")
    chain = [SerperSearch(), BraveSearch(), FixtureSearch()]
    assert EvidenceCollector(chain, FixtureFetcher()).backend() is chain[1]


def test_extract_text_drops_scripts():
    html = "<html><head><style>p {}</style><script>var x = 1;</script></head>" \
           "<body><h1>Memex</h1><p>An imagined device.</p></body></html>"
    assert PageFetcher.extract_text(html) == "Memex An imagined device."


class FakeResponse:
    def __init__(self, status_code, text, content_type="text/html"):
        self.status_code = status_code
        self.text = text
        self.headers = {"Content-Type": content_type}

    def raise_for_status(self):
        if self.status_code >= 400:
            raise RuntimeError(f"HTTP {self.status_code}")


class FakeSession:
    def __init__(self, response):
        self.response = response
        self.urls = []

    def get(self, url, timeout=None, headers=None):
        self.urls.append(url)
        return self.response


def test_page_fetcher_denied_body_is_returned():
    fetcher = PageFetcher(interval_seconds=0, session=FakeSession(FakeResponse(403, "<p>Access denied</p>")),
                          sleep=lambda s: None)
    assert fetcher.fetch("https://denied.example.com/page") == "Access denied"


def test_page_fetcher_plain_text_passthrough():
    session = FakeSession(FakeResponse(200, "plain body", content_type="text/plain"))
    fetcher = PageFetcher(interval_seconds=0, session=session, sleep=lambda s: None)
    assert fetcher.fetch("https://plain.example.com/a.txt") == "plain body"
    assert session.urls == ["https://plain.example.com/a.txt"]


def test_page_fetcher_spaces_requests_per_domain():
    slept = []
    clock = iter([100.0, 100.0, 100.5]).__next__
    session = FakeSession(FakeResponse(200, "<p>ok</p>"))
    fetcher = PageFetcher(interval_seconds=2.0, session=session, sleep=slept.append, clock=clock)
    fetcher.fetch("https://a.spacing-test.org/1")
    fetcher.fetch("https://b.spacing-test.org/2")
    fetcher.fetch("https://other-spacing-test.org/3")
    assert slept == [2.0]
