"""
Corpus-level evaluation drivers behind the `evaluate` and `similarity` commands.

EvaluationRunner samples generated articles with a seeded generator, gathers
tier evidence, judges claims and writes

    evaluation.jsonl   one ArticleVerdicts record per sampled subject
    report.md          hop-bucket table plus the uniform-sample row
    report.csv         the same table

SimilarityRunner pairs two corpora (or a corpus and the reference
encyclopedia) by subject and writes similarity.jsonl plus aggregate means.
"""

import logging
import os
import random
from dataclasses import dataclass
from typing import Optional

import pandas as pd

from src.core.errors import (
    AlignmentError,
    EvidenceConfigurationError,
    ReferenceFetchError,
    SnapshotError,
)
from src.core.models import Article, Subject
from src.core.run_config import RunConfig
from src.engine.run_store import ARTICLES_FILE, CHECKPOINT_FILE, CONFIG_FILE, SUBJECTS_FILE, RunStore
from src.evaluation.evaluator import (
    ArticleVerdicts,
    Exclusion,
    Tier,
    hop_stratify,
    macro_average,
)
from src.evaluation.evidence import usable_sources
from src.text.simdex import (
    NGRAM_DEFINITION,
    NGRAM_ORDERS,
    TFIDF_WEIGHTING,
    SimilarityCorpus,
    compare,
)
from src.utils.parallel import process_in_parallel

logger = logging.getLogger("Materializer.Evaluation")

EVALUATION_FILE = 'evaluation.jsonl'
REPORT_MD = 'report.md'
REPORT_CSV = 'report.csv'
SIMILARITY_FILE = 'similarity.jsonl'
SIMILARITY_SUMMARY = 'similarity_summary.json'

REPORT_COLUMNS = ['Bucket', 'Ref.', 'n', 'Cov.%', 'Prec', 'True', 'False', 'Unv']
_TIER_LABELS = {Tier.WIKI: 'Wiki', Tier.WEB: 'Web', Tier.FRONTIER: 'Web (frontier)'}


@dataclass
class Corpus:
    run_dir: str
    config: Optional[RunConfig]
    articles: dict
    subjects: list

    @property
    def names(self):
        return sorted(self.articles)


def load_corpus(run_dir):
    """Articles of a run directory, limited to the last checkpoint."""
    if not os.path.isdir(run_dir):
        raise SnapshotError(f"Run directory not found: {run_dir}")
    store = RunStore(run_dir)
    config = RunConfig.from_record(store.read_json(CONFIG_FILE)['config']) if store.exists(CONFIG_FILE) else None
    records = store.read_records(ARTICLES_FILE)
    if store.exists(CHECKPOINT_FILE):
        records = records[: store.read_json(CHECKPOINT_FILE).get(f'{ARTICLES_FILE}_lines', len(records))]
    articles = {}
    for record in records:
        article = Article.from_record(record)
        articles[article.subject.name] = article
    subjects = [Subject.from_record(r) for r in store.read_records(SUBJECTS_FILE)] if store.exists(SUBJECTS_FILE) else []
    logger.info(f"Loaded {len(articles)} article(s) from {run_dir}")
    return Corpus(run_dir=run_dir, config=config, articles=articles, subjects=subjects)


def sample_subjects(names, sample_size, sample_seed):
    """Uniform sample without replacement; membership depends only on the name set and the seed."""
    population = sorted(names)
    if sample_size is None or sample_size >= len(population):
        return population
    if sample_size <= 0:
        raise ValueError(f"sample size must be positive, got {sample_size}")
    return random.Random(sample_seed).sample(population, sample_size)


def _pct(value):
    return 'n/a' if value is None else f"{float(value) * 100:.1f}"


def markdown_table(df):
    header = '| ' + ' | '.join(str(c) for c in df.columns) + ' |'
    rule = '|' + '|'.join('---' for _ in df.columns) + '|'
    rows = ['| ' + ' | '.join(str(v) for v in row) + ' |' for row in df.itertuples(index=False)]
    return '\n'.join([header, rule] + rows)


@dataclass
class EvaluationResult:
    tier: Tier
    sample_size: int
    sample_seed: int
    verdicts: list

    @property
    def overall(self):
        return macro_average(self.verdicts)

    @property
    def by_hop(self):
        return hop_stratify(self.verdicts)

    def report_frame(self):
        label = _TIER_LABELS[self.tier]
        rows = [(bucket, m) for bucket, m in self.by_hop.items()] + [('random', self.overall)]
        return pd.DataFrame([
            {
                'Bucket': bucket, 'Ref.': label, 'n': m.n_sampled, 'Cov.%': _pct(m.coverage),
                'Prec': _pct(m.precision), 'True': _pct(m.true_rate),
                'False': _pct(m.false_rate), 'Unv': _pct(m.unverifiable_rate),
            }
            for bucket, m in rows
        ], columns=REPORT_COLUMNS)


class EvaluationRunner:
    def __init__(self, corpus, judge, tier, reference_client=None, collector=None, workers=4):
        self.corpus = corpus
        self.judge = judge
        self.tier = Tier(tier)
        self.reference_client = reference_client
        self.collector = collector
        self.workers = workers

    def _check_evidence(self):
        if self.tier in (Tier.WIKI, Tier.FRONTIER) and self.reference_client is None:
            raise EvidenceConfigurationError(f"tier {self.tier.value} needs a reference client")
        if self.tier in (Tier.WEB, Tier.FRONTIER):
            if self.collector is None:
                raise EvidenceConfigurationError(f"tier {self.tier.value} needs a search backend")
            self.collector.backend()

    def evaluate_subject(self, article):
        """ArticleVerdicts for one article; None when the frontier tier skips a referenced subject."""
        subject = article.subject
        if self.tier in (Tier.WIKI, Tier.FRONTIER):
            try:
                reference = self.reference_client.fetch_article(subject.name)
            except ReferenceFetchError as e:
                logger.error(f"{subject.name}: {e}")
                return ArticleVerdicts(subject.name, self.tier, exclusion=Exclusion.EVIDENCE_UNAVAILABLE, hop=subject.hop)
            if self.tier is Tier.WIKI:
                return self.judge.evaluate(article, self.tier, reference.text if reference else None)
            if reference is not None:
                return None

        try:
            gathered = self.collector.gather(subject)
        except EvidenceConfigurationError:
            raise
        except Exception as e:
            logger.error(f"{subject.name}: evidence gathering failed: {e}")
            return ArticleVerdicts(subject.name, self.tier, exclusion=Exclusion.EVIDENCE_UNAVAILABLE, hop=subject.hop)
        usable = usable_sources(gathered)
        return self.judge.evaluate(article, self.tier, usable, sources=[s.to_record() for s in gathered])

    def run(self, sample_size=None, sample_seed=42):
        # The hop-0 seed article is generated but never scored
        population = [name for name, article in self.corpus.articles.items() if article.subject.hop > 0]
        if not population:
            raise ValueError(f"{self.corpus.run_dir} has no generated articles beyond the seed")
        self._check_evidence()
        names = sample_subjects(population, sample_size, sample_seed)
        logger.info(f"Evaluating {len(names)} sampled article(s) against tier {self.tier.value} (seed {sample_seed})")
        results = process_in_parallel(
            [self.corpus.articles[name] for name in names],
            self.evaluate_subject,
            max_workers=self.workers,
        )
        verdicts = [v for v in results if v is not None]
        if self.tier is Tier.FRONTIER:
            logger.info(f"{len(verdicts)} of {len(names)} sampled subject(s) have no reference page")
        return EvaluationResult(self.tier, len(names), sample_seed, verdicts)

    @staticmethod
    def write(result, output_dir):
        store = RunStore(output_dir)
        store.write_jsonl(EVALUATION_FILE, [v.to_record() for v in result.verdicts])
        frame = result.report_frame()
        frame.to_csv(store.path(REPORT_CSV), index=False)
        overall = result.overall
        lines = [
            f"# Factuality report ({result.tier.value})",
            '',
            f"- sample: {result.sample_size} subject(s), seed {result.sample_seed}",
            f"- covered: {overall.n_covered} of {overall.n_sampled}",
            '- precision is averaged over articles with at least one supported or refuted claim',
            '',
            markdown_table(frame),
            '',
        ]
        store.write_text(REPORT_MD, '\n'.join(lines))
        logger.info(f"Evaluation written to {output_dir}")
        return frame


@dataclass
class SimilarityResult:
    reports: list
    skipped: list

    def summary(self):
        if not self.reports:
            return {'pairs': 0}
        df = pd.DataFrame([{
            'tfidf_cosine': r.tfidf_cosine,
            'jaccard': float(r.jaccard),
            **{f'ngram_{n}': float(r.ngram_overlap[n]) for n in NGRAM_ORDERS},
            'semantic_cosine': r.semantic_cosine,
            'words_a': r.word_counts[0],
            'words_b': r.word_counts[1],
        } for r in self.reports])
        means = df.mean(numeric_only=True)
        summary = {'pairs': len(self.reports), 'skipped': len(self.skipped)}
        for column in df.columns:
            value = means.get(column)
            summary[column] = None if value is None or pd.isna(value) else float(value)
        summary['tfidf_weighting'] = TFIDF_WEIGHTING
        summary['ngram_definition'] = NGRAM_DEFINITION
        return summary


class SimilarityRunner:
    """
    Pairs corpus A with corpus B (same subject set required) or with
    reference pages. TF-IDF document frequencies come from every text in
    the pairing.
    """

    def __init__(self, corpus_a, corpus_b=None, reference_client=None, gateway=None, workers=4):
        if (corpus_b is None) == (reference_client is None):
            raise ValueError("compare against exactly one of a second corpus or the reference encyclopedia")
        self.corpus_a = corpus_a
        self.corpus_b = corpus_b
        self.reference_client = reference_client
        self.gateway = gateway
        self.workers = workers

    def pairs(self, subjects=None):
        names = sorted(subjects) if subjects is not None else self.corpus_a.names
        if self.corpus_b is not None:
            only_a = sorted(set(self.corpus_a.names) - set(self.corpus_b.names))
            only_b = sorted(set(self.corpus_b.names) - set(self.corpus_a.names))
            if only_a or only_b:
                raise AlignmentError(
                    f"corpora cover different subjects ({len(only_a)} only in A, {len(only_b)} only in B)",
                    only_a, only_b)
            return [(n, self.corpus_a.articles[n].wikitext, self.corpus_b.articles[n].wikitext) for n in names], []

        pairs, skipped = [], []
        for name in names:
            try:
                reference = self.reference_client.fetch_article(name)
            except ReferenceFetchError as e:
                logger.warning(f"Skipping {name}: {e}")
                reference = None
            if reference is None:
                skipped.append(name)
                continue
            pairs.append((name, self.corpus_a.articles[name].wikitext, reference.text))
        return pairs, skipped

    def run(self, subjects=None):
        pairs, skipped = self.pairs(subjects)
        corpus = SimilarityCorpus([text for _, a, b in pairs for text in (a, b)])
        reports = process_in_parallel(
            pairs,
            lambda pair: compare(pair[0], pair[1], pair[2], corpus, self.gateway),
            max_workers=self.workers,
        )
        logger.info(f"Compared {len(reports)} pair(s); {len(skipped)} subject(s) without a counterpart")
        return SimilarityResult(reports=reports, skipped=skipped)

    @staticmethod
    def write(result, output_dir):
        store = RunStore(output_dir)
        store.write_jsonl(SIMILARITY_FILE, [r.to_record() for r in result.reports])
        summary = result.summary()
        store.write_json(SIMILARITY_SUMMARY, summary)
        return summary
