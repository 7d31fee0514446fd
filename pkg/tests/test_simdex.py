import math
import random
from fractions import Fraction

import numpy as np
import pytest

from src.generation.backends.mock_backend import MockBackend
from src.text.simdex import (
    SimilarityCorpus,
    compare,
    jaccard,
    ngram_overlap,
    ngrams,
    semantic_cosine,
    tfidf_cosine,
    tokenize,
)

WORDS = ["memex", "bush", "engineer", "analyzer", "war", "science", "office", "essay", "device", "trail"]


def random_doc(rng, length):
    return " ".join(rng.choice(WORDS) for _ in range(length))


def set_jaccard(a, b):
    if not a and not b:
        return Fraction(1)
    return Fraction(len(a & b), len(a | b))


def test_tokenize_strips_markup_and_case():
    assert tokenize("'''World War II''' and [[Vannevar Bush|Bush]]") == ["world", "war", "ii", "and", "bush"]
    assert tokenize("") == []
    assert tokenize("snake_case, hyphen-ated") == ["snake", "case", "hyphen", "ated"]


def test_self_similarity():
    doc = "Vannevar Bush described the memex in an essay. The memex stored trails."
    corpus = SimilarityCorpus([doc, "An unrelated text about rivers."])
    assert corpus.cosine(doc, doc) == pytest.approx(1.0)
    assert jaccard(doc, doc) == 1
    for n in (1, 2, 3):
        assert ngram_overlap(doc, doc, n) == 1


def test_jaccard_and_ngrams_match_brute_force():
    rng = random.Random(3)
    for _ in range(50):
        a, b = random_doc(rng, rng.randint(0, 15)), random_doc(rng, rng.randint(0, 15))
        ta, tb = a.split(), b.split()
        assert jaccard(a, b) == set_jaccard(set(ta), set(tb))
        for n in (1, 2, 3):
            grams_a = {tuple(ta[i:i + n]) for i in range(len(ta) - n + 1)}
            grams_b = {tuple(tb[i:i + n]) for i in range(len(tb) - n + 1)}
            assert ngram_overlap(a, b, n) == set_jaccard(grams_a, grams_b)


def test_ngrams_of_short_sequences():
    assert ngrams(["a", "b"], 3) == set()
    assert ngrams(["a", "b", "a", "b"], 2) == {("a", "b"), ("b", "a")}


@pytest.mark.parametrize("n", [0, 4])
def test_ngram_order_is_validated(n):
    with pytest.raises(ValueError):
        ngram_overlap("a b", "a b", n)


def test_tfidf_three_document_oracle():
    docs = ["apple banana", "apple cherry", "banana banana date"]
    corpus = SimilarityCorpus(docs)
    shared = math.log(4 / 3) + 1
    rare = math.log(2) + 1
    expected_ab = shared / (math.sqrt(2) * math.sqrt(shared ** 2 + rare ** 2))
    expected_ac = (2 * shared ** 2) / (math.sqrt(2) * shared * math.sqrt(4 * shared ** 2 + rare ** 2))
    assert corpus.cosine(docs[0], docs[1]) == pytest.approx(expected_ab, abs=1e-9)
    assert corpus.cosine(docs[0], docs[2]) == pytest.approx(expected_ac, abs=1e-9)
    assert corpus.cosine(docs[1], docs[2]) == pytest.approx(0.0, abs=1e-12)


def test_tfidf_matches_numpy_oracle():
    rng = random.Random(9)
    docs = [random_doc(rng, rng.randint(1, 20)) for _ in range(12)]
    corpus = SimilarityCorpus(docs)
    vocab = sorted({w for d in docs for w in d.split()})
    counts = np.array([[d.split().count(w) for w in vocab] for d in docs], dtype=float)
    df = (counts > 0).sum(axis=0)
    weights = counts * (np.log((1 + len(docs)) / (1 + df)) + 1)
    weights /= np.linalg.norm(weights, axis=1, keepdims=True)
    for i in range(len(docs)):
        for j in range(len(docs)):
            assert corpus.cosine(docs[i], docs[j]) == pytest.approx(float(weights[i] @ weights[j]), abs=1e-9)


def test_empty_documents():
    assert tfidf_cosine("", "memex") == 0.0
    assert tfidf_cosine("", "") == 0.0
    assert SimilarityCorpus(["", "!!! ..."]).cosine("", "") == 0.0
    assert jaccard("", "") == 1
    assert jaccard("", "memex") == 0


def test_semantic_cosine(make_config, make_gateway):
    gateway = make_gateway(MockBackend(alias_groups=[("United States", "USA")]), make_config())
    assert semantic_cosine("Memex trails", "Memex trails", gateway) == pytest.approx(1.0)
    assert semantic_cosine("United States", "USA", gateway) > 0.9
    with pytest.raises(ValueError):
        semantic_cosine("", "Memex", gateway)


def test_long_documents_are_truncated_for_embedding(make_config, make_gateway):
    class Recording(MockBackend):
        def embed(self, texts):
            self.seen = list(texts)
            return super().embed(texts)

    backend = Recording()
    semantic_cosine("a " * 6000, "b", make_gateway(backend, make_config()), char_limit=100)
    assert [len(t) for t in backend.seen] == [100, 1]


def test_compare_report():
    a, b = "the memex stored trails", "the memex stored essays"
    report = compare("Memex", a, b, SimilarityCorpus([a, b]))
    assert report.jaccard == Fraction(3, 5)
    assert report.ngram_overlap == {1: Fraction(3, 5), 2: Fraction(2, 4), 3: Fraction(1, 3)}
    assert report.word_counts == (4, 4)
    assert report.semantic_cosine is None
    record = report.to_record()
    assert record["jaccard"] == "0.6"
    assert set(record["ngram_overlap"]) == {"1", "2", "3"}
