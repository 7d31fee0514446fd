"""
Similarity between generated articles and reference texts.

Measures: TF-IDF cosine, token Jaccard, n-gram overlap (n = 1..3, set
Jaccard) and semantic cosine over whole-document embeddings.

TF-IDF weighting: tf = raw count, idf = ln((1 + D) / (1 + df)) + 1, L2
normalisation. This is scikit-learn's smooth_idf variant and is written
into every report header.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

from src.core.models import fraction_to_text
from src.text.wikitext import strip_markup

logger = logging.getLogger("Materializer.Simdex")

TFIDF_WEIGHTING = "tf=raw count; idf=ln((1+D)/(1+df))+1; l2 norm"
NGRAM_DEFINITION = "set jaccard over word n-grams"
NGRAM_ORDERS = (1, 2, 3)
DEFAULT_EMBED_CHAR_LIMIT = 8000

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """
    Maximal runs of letters/digits after markup stripping and case folding.

        >>> tokenize("World War II")
        ['world', 'war', 'ii']
    """
    if not text:
        return []
    return _TOKEN.findall(strip_markup(text).casefold())


def set_jaccard(a: set, b: set) -> Fraction:
    if not a and not b:
        return Fraction(1)
    return Fraction(len(a & b), len(a | b))


def jaccard(doc_a: str, doc_b: str) -> Fraction:
    return set_jaccard(set(tokenize(doc_a)), set(tokenize(doc_b)))


def ngrams(tokens: Sequence[str], n: int) -> set[tuple[str, ...]]:
    if len(tokens) < n:
        return set()
    return {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}


def ngram_overlap(doc_a: str, doc_b: str, n: int) -> Fraction:
    if n not in NGRAM_ORDERS:
        raise ValueError(f"n-gram order must be one of {NGRAM_ORDERS}, got {n}")
    return set_jaccard(ngrams(tokenize(doc_a), n), ngrams(tokenize(doc_b), n))


class SimilarityCorpus:
    """
    Document frequencies for TF-IDF, fitted once over every text of the
    comparison at hand (both corpora plus references) and read-only after.
    """

    def __init__(self, documents: Iterable[str]):
        self.documents = list(documents)
        self.vectorizer = TfidfVectorizer(
            analyzer=tokenize,
            smooth_idf=True,
            sublinear_tf=False,
            norm="l2",
        )
        self._fitted = False
        try:
            self.vectorizer.fit(self.documents)
            self._fitted = True
        except ValueError:
            # every document empty: no vocabulary, every cosine is 0
            logger.warning("TF-IDF corpus has an empty vocabulary")

    @property
    def size(self) -> int:
        return len(self.documents)

    def vector(self, doc: str):
        return self.vectorizer.transform([doc])

    def cosine(self, doc_a: str, doc_b: str) -> float:
        if not self._fitted or not tokenize(doc_a) or not tokenize(doc_b):
            return 0.0
        va, vb = self.vector(doc_a), self.vector(doc_b)
        value = float(va.multiply(vb).sum())
        return min(1.0, max(0.0, value))


def tfidf_cosine(doc_a: str, doc_b: str, corpus: Optional[SimilarityCorpus] = None) -> float:
    """Cosine of the L2-normalised TF-IDF vectors; 0 when either doc is empty."""
    if corpus is None:
        corpus = SimilarityCorpus([doc_a, doc_b])
    return corpus.cosine(doc_a, doc_b)


def _truncate(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    logger.info(f"Truncating document from {len(text)} to {limit} characters for embedding")
    return text[:limit]


def semantic_cosine(doc_a: str, doc_b: str, gateway, char_limit: int = DEFAULT_EMBED_CHAR_LIMIT) -> float:
    """
    Cosine between whole-document embeddings. Texts longer than char_limit
    keep their head. Raises GatewayExhaustedError when embedding fails.
    """
    plain_a, plain_b = strip_markup(doc_a).strip(), strip_markup(doc_b).strip()
    if not plain_a or not plain_b:
        raise ValueError("semantic_cosine needs two non-empty documents")
    vectors = gateway.embed([_truncate(plain_a, char_limit), _truncate(plain_b, char_limit)])
    a, b = np.asarray(vectors[0], dtype=float), np.asarray(vectors[1], dtype=float)
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


@dataclass(frozen=True)
class SimilarityReport:
    subject: str
    tfidf_cosine: float
    jaccard: Fraction
    ngram_overlap: dict = field(default_factory=dict)
    semantic_cosine: Optional[float] = None
    word_counts: tuple[int, int] = (0, 0)

    def to_record(self) -> dict:
        return {
            "subject": self.subject,
            "tfidf_cosine": self.tfidf_cosine,
            "jaccard": fraction_to_text(self.jaccard),
            "ngram_overlap": {str(n): fraction_to_text(v) for n, v in sorted(self.ngram_overlap.items())},
            "semantic_cosine": self.semantic_cosine,
            "word_counts": list(self.word_counts),
        }


def compare(subject: str, doc_a: str, doc_b: str, corpus: SimilarityCorpus, gateway=None) -> SimilarityReport:
    """All measures for one (generated, reference) pair; semantic cosine only with a gateway."""
    semantic = semantic_cosine(doc_a, doc_b, gateway) if gateway is not None else None
    return SimilarityReport(
        subject=subject,
        tfidf_cosine=corpus.cosine(doc_a, doc_b),
        jaccard=jaccard(doc_a, doc_b),
        ngram_overlap={n: ngram_overlap(doc_a, doc_b, n) for n in NGRAM_ORDERS},
        semantic_cosine=semantic,
        word_counts=(len(tokenize(doc_a)), len(tokenize(doc_b))),
    )
