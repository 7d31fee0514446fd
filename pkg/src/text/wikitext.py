"""
Parsing of generated Wikitext: wikilinks (plain and scored), level-2
headings, categories, infobox presence and word counts.

Only the subset of MediaWiki markup the elicitation prompts ask for is
understood. Nested links are not supported; the innermost [[...]] wins.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Optional

from src.core.models import Article, Strategy, Subject

logger = logging.getLogger("Materializer.Wikitext")

_LINK = re.compile(r"\[\[([^\[\]]*)\]\]")
_SCORE_SUFFIX = re.compile(r"^(?P<target>.*?\S)\s+\((?P<score>\d+\.\d{1,2})\)\s*$", re.DOTALL)
_HEADING_L2 = re.compile(r"^==(?!=)\s*(?P<title>.*?)\s*(?<!=)==\s*$", re.MULTILINE)
_ANY_HEADING = re.compile(r"^=+[^=\n].*?=+\s*$", re.MULTILINE)
_BOLD_TITLE = re.compile(r"'''")
_TEMPLATE = re.compile(r"\{\{[^{}]*\}\}")
_HTML_TAG = re.compile(r"<[^>\n]+>")
_CATEGORY_PREFIX = "category:"


@dataclass(frozen=True)
class WikiLink:
    target: str
    confidence: Optional[Fraction] = None
    malformed: bool = False


@dataclass(frozen=True)
class LinkExtraction:
    links: tuple[WikiLink, ...]
    parse_warnings: int = 0

    def as_pairs(self) -> list[tuple[str, Optional[Fraction]]]:
        return [(link.target, link.confidence) for link in self.links]


@dataclass(frozen=True)
class ParsedArticle:
    lead_present: bool
    headings: tuple[str, ...]
    plain_links: tuple[str, ...]
    scored_links: tuple[tuple[str, Fraction], ...]
    categories: tuple[str, ...]
    has_infobox: bool


def _is_category(inner: str) -> bool:
    return inner.strip().lower().startswith(_CATEGORY_PREFIX)


def _split_score(target: str) -> tuple[str, Optional[Fraction]]:
    match = _SCORE_SUFFIX.match(target)
    if not match:
        return target.strip(), None
    return match.group("target").strip(), Fraction(Decimal(match.group("score")))


def _parse_link(inner: str, strategy: Strategy) -> Optional[WikiLink]:
    target, _, label = inner.partition("|")
    target = " ".join(target.split())
    if strategy is Strategy.BASELINE:
        return WikiLink(target=target) if target else None

    name, confidence = _split_score(target)
    if confidence is None and label:
        # "[[A|B (0.9)]]": the score sits on the display text
        _, confidence = _split_score(label)
    if not name:
        return None
    if confidence is None or confidence > 1:
        return WikiLink(target=name, confidence=None, malformed=True)
    return WikiLink(target=name, confidence=confidence)


def extract_links(wikitext: str, strategy: Strategy = Strategy.BASELINE) -> LinkExtraction:
    """
    Every [[...]] occurrence except categories, in order of appearance and with
    duplicates kept. Under the calibrated strategy a trailing "(d.dd)" inside the
    brackets becomes the link confidence; a link without one is flagged malformed.
    """
    links = []
    matched = 0
    for match in _LINK.finditer(wikitext):
        matched += 1
        inner = match.group(1)
        if _is_category(inner):
            continue
        link = _parse_link(inner, strategy)
        if link is not None:
            links.append(link)

    opened = wikitext.count("[[")
    closed = wikitext.count("]]")
    warnings = max(opened, closed) - matched
    if warnings:
        logger.debug(f"Skipped {warnings} unbalanced link fragment(s)")
    return LinkExtraction(links=tuple(links), parse_warnings=warnings)


def render_link(target: str, confidence: Optional[Fraction] = None) -> str:
    if confidence is None:
        return f"[[{target}]]"
    return f"[[{target} ({float(confidence):.2f})]]"


def extract_categories(wikitext: str) -> list[str]:
    categories = []
    for match in _LINK.finditer(wikitext):
        inner = match.group(1).strip()
        if _is_category(inner):
            name = inner[len(_CATEGORY_PREFIX):].partition("|")[0].strip()
            if name:
                categories.append(name)
    return categories


def extract_headings(wikitext: str) -> list[str]:
    return [m.group("title") for m in _HEADING_L2.finditer(wikitext)]


def _has_infobox(wikitext: str) -> bool:
    bold = _BOLD_TITLE.search(wikitext)
    region = wikitext[: bold.start()] if bold else wikitext
    heading = _ANY_HEADING.search(region)
    if heading:
        region = region[: heading.start()]
    return "{{infobox" in region.lower()


def _lead_present(wikitext: str) -> bool:
    heading = _ANY_HEADING.search(wikitext)
    lead = wikitext[: heading.start()] if heading else wikitext
    return bool(strip_markup(lead).strip())


def extract_structure(wikitext: str, strategy: Strategy = Strategy.BASELINE) -> ParsedArticle:
    links = extract_links(wikitext, strategy).links
    if strategy is Strategy.CALIBRATED:
        plain, scored = (), tuple((l.target, l.confidence) for l in links if l.confidence is not None)
    else:
        plain, scored = tuple(l.target for l in links), ()
    return ParsedArticle(
        lead_present=_lead_present(wikitext),
        headings=tuple(extract_headings(wikitext)),
        plain_links=plain,
        scored_links=scored,
        categories=tuple(extract_categories(wikitext)),
        has_infobox=_has_infobox(wikitext),
    )


def _link_text(match: re.Match) -> str:
    inner = match.group(1)
    if _is_category(inner):
        return " "
    target, _, label = inner.partition("|")
    shown = label if label else target
    name, _ = _split_score(shown)
    return name


def strip_markup(wikitext: str) -> str:
    """Plain prose: templates, tags, categories, scores and markup characters removed."""
    text = wikitext
    previous = None
    while previous != text:
        previous = text
        text = _TEMPLATE.sub(" ", text)
    text = _HTML_TAG.sub(" ", text)
    text = _LINK.sub(_link_text, text)
    text = _HEADING_L2.sub(lambda m: m.group("title"), text)
    text = re.sub(r"^=+\s*(.*?)\s*=+\s*$", r"\1", text, flags=re.MULTILINE)
    text = text.replace("'''", "").replace("''", "")
    return text


def word_count(wikitext: str) -> int:
    return len(strip_markup(wikitext).split())


def build_article(subject: Subject, wikitext: str, outline, strategy: Strategy) -> Article:
    extraction = extract_links(wikitext, strategy)
    return Article(
        subject=subject,
        wikitext=wikitext,
        outline=tuple(outline),
        wikilinks=tuple(extraction.as_pairs()),
        categories=tuple(extract_categories(wikitext)),
        has_infobox=_has_infobox(wikitext),
        word_count=word_count(wikitext),
    )


def outline_conformance(article: Article) -> bool:
    """True iff the article's level-2 headings equal its outline exactly."""
    if not article.outline:
        raise ValueError("outline_conformance needs a non-empty outline")
    return tuple(extract_headings(article.wikitext)) == tuple(article.outline)


def link_density(article: Article) -> float:
    """Links per 100 words; recorded for reporting, never used to reject."""
    if article.word_count == 0:
        return 0.0
    return 100.0 * len(article.wikilinks) / article.word_count
