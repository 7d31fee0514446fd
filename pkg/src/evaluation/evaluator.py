"""
Claim-level factuality.

An article is reduced to at most MAX_CLAIMS atomic claims by the judge model;
each claim is classified against the tier's evidence as supported, refuted or
insufficient. Per-article rates and precision are exact rationals:

    true = n_s / N    false = n_r / N    unverifiable = n_u / N
    precision = n_s / (n_s + n_r), undefined when no claim was decided

Corpus figures are unweighted means over the articles that had evidence;
precision is averaged only where it is defined. Coverage is the share of
sampled subjects that had evidence.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from src.core.errors import ClaimExtractionError
from src.core.models import Article, fraction_to_text
from src.generation.gateway import parse_json_reply
from src.text.wikitext import strip_markup

logger = logging.getLogger("Materializer.Evaluator")

MAX_CLAIMS = 10
EVIDENCE_CHAR_LIMIT = 6000
HOP_BUCKETS = ("0", "1", "2", "3", "4", "5+")


class Verdict(str, Enum):
    SUPPORTED = "supported"
    REFUTED = "refuted"
    INSUFFICIENT = "insufficient"


class Tier(str, Enum):
    WIKI = "wiki"
    WEB = "web"
    FRONTIER = "frontier"


class Exclusion(str, Enum):
    NO_EVIDENCE = "no_evidence"
    CLAIM_EXTRACTION_FAILED = "claim_extraction_failed"
    EVIDENCE_UNAVAILABLE = "evidence_unavailable"


# neither counted as covered nor in the coverage denominator
OUT_OF_SAMPLE = (Exclusion.CLAIM_EXTRACTION_FAILED, Exclusion.EVIDENCE_UNAVAILABLE)


@dataclass(frozen=True)
class ClaimTally:
    N: int
    n_s: int
    n_r: int
    n_u: int

    def __post_init__(self):
        if min(self.N, self.n_s, self.n_r, self.n_u) < 0:
            raise ValueError("claim counts must be non-negative")
        if self.n_s + self.n_r + self.n_u != self.N:
            raise ValueError(f"n_s + n_r + n_u = {self.n_s + self.n_r + self.n_u} != N = {self.N}")
        if self.N > MAX_CLAIMS:
            raise ValueError(f"at most {MAX_CLAIMS} claims per article, got {self.N}")

    @classmethod
    def from_verdicts(cls, verdicts: Sequence[Verdict]) -> "ClaimTally":
        verdicts = list(verdicts)
        return cls(
            N=len(verdicts),
            n_s=verdicts.count(Verdict.SUPPORTED),
            n_r=verdicts.count(Verdict.REFUTED),
            n_u=verdicts.count(Verdict.INSUFFICIENT),
        )


@dataclass(frozen=True)
class FactualityMetrics:
    true_rate: Fraction
    false_rate: Fraction
    unverifiable_rate: Fraction
    precision: Optional[Fraction]

    def to_record(self) -> dict:
        return {
            "true_rate": fraction_to_text(self.true_rate),
            "false_rate": fraction_to_text(self.false_rate),
            "unverifiable_rate": fraction_to_text(self.unverifiable_rate),
            "precision": fraction_to_text(self.precision),
        }


@dataclass(frozen=True)
class ArticleVerdicts:
    """
    Outcome for one sampled subject in one tier. `exclusion` is set when the
    subject produced no tally.
    """

    subject: str
    tier: Tier
    claims: tuple = ()
    flagged: tuple = ()
    exclusion: Optional[Exclusion] = None
    hop: Optional[int] = None
    sources: tuple = field(default=())

    def __post_init__(self):
        if self.exclusion is None and not self.claims:
            raise ValueError(f"{self.subject}: a covered article needs at least one claim")

    @property
    def covered(self) -> bool:
        return self.exclusion is None

    @property
    def tally(self) -> Optional[ClaimTally]:
        if not self.covered:
            return None
        return ClaimTally.from_verdicts([v for _, v in self.claims])

    def to_record(self) -> dict:
        tally = self.tally
        return {
            "subject": self.subject,
            "tier": self.tier.value,
            "hop": self.hop,
            "exclusion": self.exclusion.value if self.exclusion else None,
            "claims": [{"claim": c, "verdict": v.value, "flagged": f}
                       for (c, v), f in zip(self.claims, self.flagged or [False] * len(self.claims))],
            "tally": {"N": tally.N, "n_s": tally.n_s, "n_r": tally.n_r, "n_u": tally.n_u} if tally else None,
            "metrics": metrics(tally).to_record() if tally else None,
            "sources": list(self.sources),
        }


@dataclass(frozen=True)
class CorpusMetrics:
    n_sampled: int
    n_covered: int
    coverage: Fraction
    true_rate: Optional[Fraction] = None
    false_rate: Optional[Fraction] = None
    unverifiable_rate: Optional[Fraction] = None
    precision: Optional[Fraction] = None

    def to_record(self) -> dict:
        return {
            "n_sampled": self.n_sampled,
            "n_covered": self.n_covered,
            "coverage": fraction_to_text(self.coverage),
            "true_rate": fraction_to_text(self.true_rate),
            "false_rate": fraction_to_text(self.false_rate),
            "unverifiable_rate": fraction_to_text(self.unverifiable_rate),
            "precision": fraction_to_text(self.precision),
        }


# ---------------------------------------------------------------------- metrics

def metrics(tally: ClaimTally) -> FactualityMetrics:
    if tally.N == 0:
        raise ValueError("metrics need at least one claim")
    decided = tally.n_s + tally.n_r
    return FactualityMetrics(
        true_rate=Fraction(tally.n_s, tally.N),
        false_rate=Fraction(tally.n_r, tally.N),
        unverifiable_rate=Fraction(tally.n_u, tally.N),
        precision=Fraction(tally.n_s, decided) if decided else None,
    )


def _mean(values):
    values = list(values)
    if not values:
        return None
    return sum(values, Fraction(0)) / len(values)


def macro_average(verdicts: Sequence[ArticleVerdicts]) -> CorpusMetrics:
    """
    Articles whose claim extraction or evidence lookup failed leave the sample
    entirely; articles without evidence stay in the coverage denominator only.
    """
    sampled = [v for v in verdicts if v.exclusion not in OUT_OF_SAMPLE]
    per_article = [metrics(v.tally) for v in sampled if v.covered]
    coverage = Fraction(len(per_article), len(sampled)) if sampled else Fraction(0)
    if not per_article:
        return CorpusMetrics(n_sampled=len(sampled), n_covered=0, coverage=coverage)
    return CorpusMetrics(
        n_sampled=len(sampled),
        n_covered=len(per_article),
        coverage=coverage,
        true_rate=_mean(m.true_rate for m in per_article),
        false_rate=_mean(m.false_rate for m in per_article),
        unverifiable_rate=_mean(m.unverifiable_rate for m in per_article),
        precision=_mean(m.precision for m in per_article if m.precision is not None),
    )


def hop_bucket(hop: int) -> str:
    if hop < 0:
        raise ValueError(f"negative hop: {hop}")
    return str(hop) if hop < 5 else "5+"


def hop_stratify(verdicts: Sequence[ArticleVerdicts], hops: Optional[Mapping[str, int]] = None) -> "OrderedDict[str, CorpusMetrics]":
    """Per-bucket macro metrics; only populated buckets appear, in hop order."""
    grouped = {bucket: [] for bucket in HOP_BUCKETS}
    for verdict in verdicts:
        hop = hops[verdict.subject] if hops is not None else verdict.hop
        if hop is None:
            raise ValueError(f"{verdict.subject} has no hop label")
        grouped[hop_bucket(hop)].append(verdict)
    return OrderedDict((b, macro_average(grouped[b])) for b in HOP_BUCKETS if grouped[b])


# ---------------------------------------------------------------------- judge

def evidence_block(evidence) -> str:
    """Reference text as-is, or numbered web sources, clipped to EVIDENCE_CHAR_LIMIT."""
    if isinstance(evidence, str):
        return evidence[:EVIDENCE_CHAR_LIMIT]
    parts = []
    for index, source in enumerate(evidence, start=1):
        parts.append(f"[{index}] {source.url}\n{source.text or ''}")
    return "\n\n".join(parts)[:EVIDENCE_CHAR_LIMIT]


class ClaimJudge:
    """Claim extraction and verdicts through the model gateway."""

    def __init__(self, config, forge, gateway):
        self.config = config
        self.forge = forge
        self.gateway = gateway

    def extract_claims(self, article: Article) -> list[str]:
        text = strip_markup(article.wikitext).strip()
        if not text:
            raise ValueError(f"article for {article.subject.name} is empty")
        bundle = self.forge.render("claim_extraction", self.config, article.subject,
                                   {"max_claims": MAX_CLAIMS, "article_text": text})
        result = self.gateway.complete(self.gateway.request(bundle, subject=article.subject.name))
        if not result.ok:
            raise ClaimExtractionError(f"claim extraction for {article.subject.name} {result.outcome.value}")
        try:
            claims = parse_json_reply(result.text)["claims"]
            if not isinstance(claims, list) or not all(isinstance(c, str) for c in claims):
                raise ValueError("claims must be a list of strings")
        except (ValueError, KeyError, TypeError) as e:
            raise ClaimExtractionError(f"unparseable claim list for {article.subject.name}: {e}") from e
        claims = [c for c in claims if c.strip()]
        if not claims:
            raise ClaimExtractionError(f"no claims extracted for {article.subject.name}")
        if len(claims) > MAX_CLAIMS:
            logger.info(f"{article.subject.name}: keeping the first {MAX_CLAIMS} of {len(claims)} claims")
        return claims[:MAX_CLAIMS]

    def judge_claim(self, subject, claim: str, evidence) -> tuple[Verdict, bool]:
        """(verdict, flagged). Judge failures fall back to insufficient with the flag set."""
        if not evidence:
            raise ValueError("judge_claim needs evidence; subjects without any are excluded by the caller")
        bundle = self.forge.render("verdict", self.config, subject,
                                   {"claim": claim, "evidence_block": evidence_block(evidence)})
        result = self.gateway.complete(self.gateway.request(bundle, subject=subject.name, tag=f"verdict:{subject.name}"))
        if not result.ok:
            logger.warning(f"Verdict for {subject.name} {result.outcome.value}; recording insufficient")
            return Verdict.INSUFFICIENT, True
        try:
            return Verdict(parse_json_reply(result.text)["verdict"]), False
        except (ValueError, KeyError, TypeError) as e:
            logger.warning(f"Unparseable verdict for {subject.name}; recording insufficient: {e}")
            return Verdict.INSUFFICIENT, True

    def evaluate(self, article: Article, tier: Tier, evidence, sources=()) -> ArticleVerdicts:
        subject = article.subject
        if not evidence:
            return ArticleVerdicts(subject.name, tier, exclusion=Exclusion.NO_EVIDENCE, hop=subject.hop,
                                   sources=tuple(sources))
        try:
            claims = self.extract_claims(article)
        except (ClaimExtractionError, ValueError) as e:
            logger.warning(f"Excluding {subject.name} from {tier.value}: {e}")
            return ArticleVerdicts(subject.name, tier, exclusion=Exclusion.CLAIM_EXTRACTION_FAILED, hop=subject.hop,
                                   sources=tuple(sources))
        judged = [self.judge_claim(subject, claim, evidence) for claim in claims]
        return ArticleVerdicts(
            subject=subject.name,
            tier=tier,
            claims=tuple((claim, verdict) for claim, (verdict, _) in zip(claims, judged)),
            flagged=tuple(flag for _, flag in judged),
            hop=subject.hop,
            sources=tuple(sources),
        )
