"""
Funnel accounting for the sanitization pipeline.

Chain counters (raw_candidates >= after_canonical >= after_ner >=
after_similarity >= queued_subjects) are incremented by callers strictly in
stage order, so every snapshot satisfies the chain. Side counters break
down where the NER-stage losses came from.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from dataclasses import dataclass, field

CHAIN = (
    "raw_candidates",
    "after_canonical",
    "after_ner",
    "after_similarity",
    "queued_subjects",
)

SIDE_COUNTERS = (
    "generated_articles",
    "failed_subjects",
    "loop_rejected",
    "below_threshold",
    "ner_parse_failures",
    "arbitrations",
    "depth_capped",
)

COUNTERS = CHAIN + SIDE_COUNTERS


@dataclass(frozen=True)
class FunnelSnapshot:
    totals: dict
    per_hop: dict = field(default_factory=dict)

    def is_monotone(self) -> bool:
        buckets = [self.totals] + list(self.per_hop.values())
        for bucket in buckets:
            values = [bucket.get(name, 0) for name in CHAIN]
            if any(a < b for a, b in zip(values, values[1:])):
                return False
        return True

    def to_record(self) -> dict:
        return {
            "totals": {name: self.totals.get(name, 0) for name in COUNTERS},
            "per_hop": {
                str(hop): {name: bucket.get(name, 0) for name in COUNTERS}
                for hop, bucket in sorted(self.per_hop.items())
            },
        }

    @classmethod
    def from_record(cls, record: dict) -> "FunnelSnapshot":
        return cls(
            totals=dict(record["totals"]),
            per_hop={int(h): dict(b) for h, b in record.get("per_hop", {}).items()},
        )


class FunnelStats:
    """
    Thread-safe funnel counters with a per-hop breakdown.

    Candidates are bucketed by the hop of the article that proposed them;
    generated_articles by the hop of the generated subject.
    """

    def __init__(self, snapshot: FunnelSnapshot | None = None):
        self._lock = threading.Lock()
        self._totals = defaultdict(int)
        self._per_hop = defaultdict(lambda: defaultdict(int))
        if snapshot is not None:
            self._totals.update(snapshot.totals)
            for hop, bucket in snapshot.per_hop.items():
                self._per_hop[hop].update(bucket)

    def increment(self, name: str, hop: int, amount: int = 1) -> None:
        if name not in COUNTERS:
            raise KeyError(f"unknown funnel counter: {name}")
        if amount < 0:
            raise ValueError("funnel counters only grow")
        if amount == 0:
            return
        with self._lock:
            self._totals[name] += amount
            self._per_hop[hop][name] += amount

    def snapshot(self) -> FunnelSnapshot:
        with self._lock:
            return FunnelSnapshot(
                totals={name: self._totals.get(name, 0) for name in COUNTERS},
                per_hop={
                    hop: {name: bucket.get(name, 0) for name in COUNTERS}
                    for hop, bucket in self._per_hop.items()
                },
            )
