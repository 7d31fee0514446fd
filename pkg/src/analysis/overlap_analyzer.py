import os
import logging
import random
from itertools import combinations

import pandas as pd

from src.analysis.base_analyzer import BaseAnalyzer
from src.analysis.plot_utils import plot_overlap_heatmap
from src.evaluation.evaluation_runner import load_corpus
from src.text.canonical import canonicalize, is_usable_key
from src.text.simdex import set_jaccard

logger = logging.getLogger("Materializer.OverlapAnalyzer")

OVERLAP_DIR = 'overlap'
DEFAULT_SHARED_SAMPLE = 1000


def corpus_labels(run_dirs):
    """Run directory basenames, suffixed with their position when two collide."""
    names = [os.path.basename(os.path.normpath(d)) for d in run_dirs]
    return [f"{name}#{i + 1}" if names.count(name) > 1 else name for i, name in enumerate(names)]


def capped_articles(corpus, cap=None):
    """Articles in generation order, truncated to the first `cap`."""
    articles = list(corpus.articles.values())
    return articles if cap is None else articles[:cap]


def entity_keys(article):
    keys = {canonicalize(target) for target, _ in article.wikilinks}
    return {k for k in keys if is_usable_key(k)}


def corpus_properties(label, run_dir, articles):
    frame = pd.DataFrame({
        'wikilinks': [len(a.wikilinks) for a in articles],
        'sections': [len(a.outline) for a in articles],
        'words': [a.word_count for a in articles],
    })
    return {
        'corpus': label,
        'run_dir': run_dir,
        'articles': len(articles),
        'canonical_subjects': len({a.subject.canonical_key for a in articles}),
        'mean_wikilinks': round(float(frame['wikilinks'].mean()), 2) if len(frame) else None,
        'mean_sections': round(float(frame['sections'].mean()), 2) if len(frame) else None,
        'mean_words': round(float(frame['words'].mean()), 2) if len(frame) else None,
    }


def union_intersection(sets):
    union = set().union(*sets)
    inter = set.intersection(*sets) if sets else set()
    return len(union), len(inter), round(100.0 * len(inter) / len(union), 2) if union else None


def mean_entity_jaccard(by_key_a, by_key_b, shared, shared_sample, sample_seed):
    """Mean wikilink-entity Jaccard over a seeded sample of subjects both corpora cover."""
    population = sorted(shared)
    if shared_sample is not None and len(population) > shared_sample:
        population = random.Random(sample_seed).sample(population, shared_sample)
    if not population:
        return None, 0
    scores = [float(set_jaccard(entity_keys(by_key_a[k]), entity_keys(by_key_b[k]))) for k in population]
    return round(sum(scores) / len(scores), 4), len(population)


class OverlapAnalyzer(BaseAnalyzer):
    """
    Subject and entity overlap across two or more run directories.

    Subjects are compared by exact name and by canonical key, each corpus
    capped to its first `cap` generated articles. For every pair, entity
    overlap is the mean Jaccard of canonicalized wikilink targets over the
    subjects both cover (a seeded sample of at most `shared_sample`).

    Writes corpus_properties.csv, subject_overlap.csv, pairwise_overlap.csv
    and the heatmaps into <first run>/analysis/overlap by default.
    """

    def __init__(self, run_dirs, result_dir=None, cap=None, shared_sample=DEFAULT_SHARED_SAMPLE,
                 sample_seed=42, plots=True):
        if len(run_dirs) < 2:
            raise ValueError("overlap needs at least two run directories")
        if cap is not None and cap <= 0:
            raise ValueError(f"cap must be positive, got {cap}")
        if shared_sample is not None and shared_sample <= 0:
            raise ValueError(f"shared sample must be positive, got {shared_sample}")
        super().__init__(run_dirs[0], result_dir or os.path.join(run_dirs[0], 'analysis', OVERLAP_DIR))
        self.run_dirs = list(run_dirs)
        self.labels = corpus_labels(self.run_dirs)
        self.cap = cap
        self.shared_sample = shared_sample
        self.sample_seed = sample_seed
        self.plots = plots

    def load_articles(self):
        loaded = {}
        for label, run_dir in zip(self.labels, self.run_dirs):
            articles = capped_articles(load_corpus(run_dir), self.cap)
            if not articles:
                raise ValueError(f"{run_dir} has no generated articles")
            loaded[label] = articles
        return loaded

    def analyze(self):
        loaded = self.load_articles()
        os.makedirs(self.result_dir, exist_ok=True)

        properties = pd.DataFrame([corpus_properties(label, run_dir, loaded[label])
                                   for label, run_dir in zip(self.labels, self.run_dirs)])

        exact = {label: {a.subject.name for a in articles} for label, articles in loaded.items()}
        by_key = {}
        for label, articles in loaded.items():
            by_key[label] = {}
            for article in articles:
                by_key[label].setdefault(article.subject.canonical_key, article)
        canonical = {label: set(keys) for label, keys in by_key.items()}

        summary_rows = []
        for kind, sets in (('exact', exact), ('canonical', canonical)):
            union, inter, pct = union_intersection(list(sets.values()))
            summary_rows.append({'match': kind, 'corpora': len(sets), 'union': union,
                                 'intersection': inter, 'intersection_pct': pct})
        summary = pd.DataFrame(summary_rows)

        pair_rows = []
        for a, b in combinations(self.labels, 2):
            shared = canonical[a] & canonical[b]
            entity, sampled = mean_entity_jaccard(by_key[a], by_key[b], shared,
                                                  self.shared_sample, self.sample_seed)
            pair_rows.append({
                'corpus_a': a,
                'corpus_b': b,
                'exact_jaccard': round(float(set_jaccard(exact[a], exact[b])), 4),
                'canonical_jaccard': round(float(set_jaccard(canonical[a], canonical[b])), 4),
                'shared_subjects': len(shared),
                'entity_sampled': sampled,
                'entity_jaccard': entity,
            })
        pairs = pd.DataFrame(pair_rows)

        properties.to_csv(os.path.join(self.result_dir, 'corpus_properties.csv'), index=False)
        summary.to_csv(os.path.join(self.result_dir, 'subject_overlap.csv'), index=False)
        pairs.to_csv(os.path.join(self.result_dir, 'pairwise_overlap.csv'), index=False)
        logger.info(f"Saved overlap tables for {len(self.labels)} corpora to {self.result_dir}")

        if self.plots:
            for column, title in (('canonical_jaccard', 'Canonical Subject Jaccard'),
                                  ('entity_jaccard', 'Entity Jaccard over Shared Subjects')):
                plot_overlap_heatmap(self.pair_matrix(pairs, column), self.result_dir, column, title)

        return {'properties': properties, 'summary': summary, 'pairs': pairs}

    def pair_matrix(self, pairs, column):
        """Symmetric corpus-by-corpus matrix of one pairwise column; 1.0 on the diagonal."""
        matrix = pd.DataFrame(1.0, index=self.labels, columns=self.labels)
        for row in pairs.itertuples(index=False):
            value = getattr(row, column)
            value = float('nan') if value is None else value
            matrix.loc[row.corpus_a, row.corpus_b] = value
            matrix.loc[row.corpus_b, row.corpus_a] = value
        return matrix
