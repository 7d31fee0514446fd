import json
import os
import logging

import pandas as pd

from src.analysis.base_analyzer import BaseAnalyzer
from src.analysis.plot_utils import (
    plot_funnel_survival,
    plot_hop_distribution,
    plot_rejection_reasons,
)
from src.core.funnel import FunnelSnapshot

logger = logging.getLogger("Materializer.FunnelAnalyzer")

FUNNEL_ROWS = [
    ('Generated articles (subjects)', 'generated_articles'),
    ('Raw candidate [[wikilinks]]', 'raw_candidates'),
    ('After canonical dedup', 'after_canonical'),
    ('After NER filtering', 'after_ner'),
    ('After similarity filtering', 'after_similarity'),
    ('New queued subjects', 'queued_subjects'),
]

STAGE_LABELS = ['raw', 'canonical', 'ner', 'similarity', 'queued']


def _rate(num, den):
    return round(100.0 * num / den, 2) if den else None


def funnel_table(snapshot):
    """Counts per funnel stage plus the stage-to-stage survival rates."""
    t = snapshot.totals
    rows = [{'Stage': label, 'Count': t.get(key, 0)} for label, key in FUNNEL_ROWS]
    rates = [
        ('Raw -> post-dedup (%)', _rate(t.get('after_canonical', 0), t.get('raw_candidates', 0))),
        ('NER survival (%)', _rate(t.get('after_ner', 0), t.get('after_canonical', 0))),
        ('Similarity survival (%)', _rate(t.get('after_similarity', 0), t.get('after_ner', 0))),
        ('Raw -> queue (%)', _rate(t.get('queued_subjects', 0), t.get('raw_candidates', 0))),
    ]
    rows += [{'Stage': label, 'Count': value} for label, value in rates]
    return pd.DataFrame(rows, columns=['Stage', 'Count'])


def per_hop_table(snapshot):
    """One row per parent hop: chain counts, side counters and survival rates."""
    records = []
    for hop, bucket in sorted(snapshot.per_hop.items()):
        records.append({
            'hop': hop,
            **bucket,
            'canonical_survival_pct': _rate(bucket.get('after_canonical', 0), bucket.get('raw_candidates', 0)),
            'ner_survival_pct': _rate(bucket.get('after_ner', 0), bucket.get('after_canonical', 0)),
            'similarity_survival_pct': _rate(bucket.get('after_similarity', 0), bucket.get('after_ner', 0)),
            'queue_survival_pct': _rate(bucket.get('queued_subjects', 0), bucket.get('raw_candidates', 0)),
        })
    return pd.DataFrame(records)


def survival_long_form(snapshot):
    """Long-form (hop, stage, survival_pct) relative to raw candidates, for plotting."""
    records = []
    for hop, bucket in sorted(snapshot.per_hop.items()):
        raw = bucket.get('raw_candidates', 0)
        if not raw:
            continue
        for stage, key in zip(STAGE_LABELS, ('raw_candidates', 'after_canonical', 'after_ner',
                                             'after_similarity', 'queued_subjects')):
            records.append({'hop': str(hop), 'stage': stage, 'survival_pct': 100.0 * bucket.get(key, 0) / raw})
    return pd.DataFrame(records, columns=['hop', 'stage', 'survival_pct'])


class FunnelAnalyzer(BaseAnalyzer):
    """
    Funnel and corpus-shape statistics for one run directory.

    Writes funnel_table.csv, funnel_by_hop.csv, rejections.csv, subjects_by_hop.csv
    and the plots into the result directory.
    """

    def __init__(self, run_dir, result_dir=None, plots=True):
        super().__init__(run_dir, result_dir)
        self.plots = plots
        self.snapshot = None

    def load_snapshot(self):
        with open(os.path.join(self.run_dir, 'funnel.json'), 'r', encoding='utf-8') as f:
            self.snapshot = FunnelSnapshot.from_record(json.load(f))
        return self.snapshot

    def rejection_table(self):
        path = os.path.join(self.run_dir, 'candidates.jsonl')
        if not os.path.exists(path):
            return pd.DataFrame(columns=['rejection_reason', 'count'])
        candidates = pd.read_json(path, lines=True)
        if candidates.empty or 'rejection_reason' not in candidates.columns:
            return pd.DataFrame(columns=['rejection_reason', 'count'])
        rejected = candidates[candidates['rejection_reason'].notnull()]
        counts = rejected.groupby('rejection_reason').size().rename('count').reset_index()
        return counts.sort_values(by=['count', 'rejection_reason'], ascending=[False, True], ignore_index=True)

    def analyze(self):
        snapshot = self.snapshot or self.load_snapshot()
        os.makedirs(self.result_dir, exist_ok=True)

        table = funnel_table(snapshot)
        table.to_csv(os.path.join(self.result_dir, 'funnel_table.csv'), index=False)
        by_hop = per_hop_table(snapshot)
        by_hop.to_csv(os.path.join(self.result_dir, 'funnel_by_hop.csv'), index=False)
        rejections = self.rejection_table()
        rejections.to_csv(os.path.join(self.result_dir, 'rejections.csv'), index=False)
        subjects = self.status_counts()
        subjects.to_csv(os.path.join(self.result_dir, 'subjects_by_hop.csv'), index=False)
        logger.info(f"Saved funnel tables to {self.result_dir}")

        if self.plots:
            survival = survival_long_form(snapshot)
            if not survival.empty:
                plot_funnel_survival(survival, self.result_dir)
            plot_hop_distribution(self.df, self.result_dir)
            if not rejections.empty:
                plot_rejection_reasons(rejections, self.result_dir)

        return {'funnel': table, 'by_hop': by_hop, 'rejections': rejections, 'subjects': subjects}
