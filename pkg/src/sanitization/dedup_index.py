"""
Stage 3 of the sanitization funnel and the atomic commit.

DedupIndex and CanonQueue share one re-entrant lock. commit() registers the
canonical key, stores the vector and enqueues the child subject while holding
it, so no reader can observe a key without its queued subject or the reverse.
"""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from src.core.models import CandidateEntity, CandidateStage, RejectionReason, Subject
from src.generation.gateway import parse_json_reply

logger = logging.getLogger("Materializer.DedupIndex")

_INITIAL_CAPACITY = 64


class CommitOutcome(str, Enum):
    COMMITTED = "committed"
    ALREADY_PRESENT = "already_present"
    CAPPED = "capped"


class Arbitration(str, Enum):
    SAME = "same"
    DISTINCT = "distinct"
    FAILED = "failed"


@dataclass(frozen=True)
class CommittedEntity:
    canonical_key: str
    display_name: str
    vector: tuple
    wave: int
    hop: int

    def to_record(self) -> dict:
        return {
            "canonical_key": self.canonical_key,
            "display_name": self.display_name,
            "vector": list(self.vector),
            "wave": self.wave,
            "hop": self.hop,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CommittedEntity":
        return cls(
            canonical_key=record["canonical_key"],
            display_name=record["display_name"],
            vector=tuple(float(x) for x in record["vector"]),
            wave=int(record["wave"]),
            hop=int(record["hop"]),
        )


def _unit(vector) -> np.ndarray:
    vec = np.asarray(vector, dtype=float)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("cannot index a zero vector")
    return vec / norm


def within_wave_dedup(candidates: Sequence[CandidateEntity]):
    """
    Collapse equal canonical keys proposed in one wave.

    The survivor is the proposal whose parent has the smallest hop, then the
    lexicographically smallest parent name, then the smallest link position.
    The result does not depend on input order: survivors come back sorted by
    canonical key. Returns (survivors, rejected).
    """
    best = {}
    for candidate in candidates:
        rank = (candidate.parent_hop, candidate.parent_subject, candidate.position)
        current = best.get(candidate.canonical_key)
        if current is None or rank < current[0]:
            best[candidate.canonical_key] = (rank, candidate)

    winners = {id(entry[1]) for entry in best.values()}
    rejected = [
        c.reject(RejectionReason.DUPLICATE_CANONICAL)
        for c in candidates if id(c) not in winners
    ]
    survivors = [best[key][1] for key in sorted(best)]
    return survivors, rejected


class CanonQueue:
    """FIFO of subjects waiting for generation."""

    def __init__(self, lock: Optional[threading.RLock] = None):
        self._lock = lock or threading.RLock()
        self._items = deque()

    def put(self, subject: Subject) -> None:
        with self._lock:
            self._items.append(subject)

    def take(self, limit: Optional[int] = None) -> list[Subject]:
        """Dequeue every subject of the lowest queued hop, at most `limit` of them."""
        with self._lock:
            if not self._items:
                return []
            hop = self._items[0].hop
            taken = []
            while self._items and self._items[0].hop == hop and (limit is None or len(taken) < limit):
                taken.append(self._items.popleft())
            return taken

    def snapshot(self) -> list[Subject]:
        with self._lock:
            return list(self._items)

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


class DedupIndex:
    """
    Committed entities with an exact nearest-neighbour search over their
    unit vectors (one dense matrix, grown by doubling).
    """

    def __init__(self):
        self._lock = threading.RLock()
        self.queue = CanonQueue(self._lock)
        self._entities: dict[str, CommittedEntity] = {}
        self._order: list[str] = []
        self._matrix: Optional[np.ndarray] = None
        self._size = 0

    # ------------------------------------------------------------------ reads

    def __contains__(self, key: str) -> bool:
        return key in self._entities

    def __len__(self) -> int:
        return self._size

    def get(self, key: str) -> Optional[CommittedEntity]:
        return self._entities.get(key)

    def keys(self) -> frozenset:
        with self._lock:
            return frozenset(self._entities)

    def entities(self) -> list[CommittedEntity]:
        with self._lock:
            return [self._entities[k] for k in self._order]

    def nearest(self, vector) -> Optional[tuple[str, float]]:
        """(canonical_key, cosine) of the closest committed entity; ties go to the earliest commit."""
        query = _unit(vector)
        with self._lock:
            if self._size == 0:
                return None
            scores = self._matrix[: self._size] @ query
            index = int(np.argmax(scores))
            return self._order[index], float(scores[index])

    # ------------------------------------------------------------------ writes

    def _append_vector(self, vec: np.ndarray) -> None:
        if self._matrix is None:
            self._matrix = np.zeros((_INITIAL_CAPACITY, vec.shape[0]))
        elif vec.shape[0] != self._matrix.shape[1]:
            raise ValueError(f"vector dimension {vec.shape[0]} != index dimension {self._matrix.shape[1]}")
        if self._size == self._matrix.shape[0]:
            grown = np.zeros((self._matrix.shape[0] * 2, self._matrix.shape[1]))
            grown[: self._size] = self._matrix
            self._matrix = grown
        self._matrix[self._size] = vec

    def _insert(self, entity: CommittedEntity) -> None:
        self._append_vector(np.asarray(entity.vector, dtype=float))
        self._entities[entity.canonical_key] = entity
        self._order.append(entity.canonical_key)
        self._size += 1

    def register_seed(self, seed: Subject, vector) -> bool:
        """Commit the run seed at hop 0 and enqueue it. False when already present."""
        with self._lock:
            if seed.canonical_key in self._entities:
                return False
            self._insert(CommittedEntity(seed.canonical_key, seed.name, tuple(_unit(vector)), 0, 0))
            self.queue.put(seed)
            return True

    def commit(self, candidate: CandidateEntity, vector, wave: int, depth_cap: Optional[int] = None) -> CommitOutcome:
        """
        Atomically register the key, index the vector and enqueue
        Subject(hop = parent_hop + 1). No side effects unless COMMITTED.
        """
        hop = candidate.parent_hop + 1
        with self._lock:
            if candidate.canonical_key in self._entities:
                return CommitOutcome.ALREADY_PRESENT
            if depth_cap is not None and hop > depth_cap:
                return CommitOutcome.CAPPED
            self._insert(CommittedEntity(
                canonical_key=candidate.canonical_key,
                display_name=candidate.phrase,
                vector=tuple(_unit(vector)),
                wave=wave,
                hop=hop,
            ))
            self.queue.put(Subject.create(candidate.phrase, hop=hop, parent=candidate.parent_subject))
        logger.debug(f"Committed {candidate.phrase!r} at hop {hop} (wave {wave})")
        return CommitOutcome.COMMITTED

    # ------------------------------------------------------------------ persistence

    def to_records(self) -> list[dict]:
        return [e.to_record() for e in self.entities()]

    @classmethod
    def from_records(cls, records: Iterable[dict], queued: Iterable[Subject] = ()) -> "DedupIndex":
        index = cls()
        for record in records:
            entity = CommittedEntity.from_record(record)
            if entity.canonical_key in index._entities:
                raise ValueError(f"duplicate key in index snapshot: {entity.canonical_key}")
            index._insert(entity)
        for subject in queued:
            index.queue.put(subject)
        return index


class Arbiter:
    """Model arbitration between a candidate and its nearest committed entity."""

    def __init__(self, config, forge, gateway, index: DedupIndex):
        self.config = config
        self.forge = forge
        self.gateway = gateway
        self.index = index

    def arbitrate(self, candidate: CandidateEntity, existing_key: str, parent: Subject, parent_excerpt: str) -> Arbitration:
        existing = self.index.get(existing_key)
        existing_name = existing.display_name if existing else existing_key
        context = {
            "candidate_name": candidate.phrase,
            "existing_name": existing_name,
            "parent_subject": parent.name,
            "parent_excerpt": parent_excerpt[: self.config.arbitration_excerpt_chars],
        }
        bundle = self.forge.render("arbitration", self.config, parent, context)
        result = self.gateway.complete(self.gateway.request(bundle, subject=parent.name, tag=f"arbitration:{candidate.phrase}"))
        if not result.ok:
            logger.warning(f"Arbitration {candidate.phrase!r} vs {existing_name!r} {result.outcome.value}")
            return Arbitration.FAILED
        try:
            same = parse_json_reply(result.text)["same_entity"]
            if not isinstance(same, bool):
                raise ValueError("same_entity must be a boolean")
        except (ValueError, KeyError, TypeError) as e:
            logger.warning(f"Unparseable arbitration reply for {candidate.phrase!r}: {e}")
            return Arbitration.FAILED
        return Arbitration.SAME if same else Arbitration.DISTINCT


def resolve(arbitration: Arbitration, candidate: CandidateEntity) -> CandidateEntity:
    """Map an arbitration result onto the candidate: distinct advances, the rest reject."""
    if arbitration is Arbitration.DISTINCT:
        return candidate.advance(CandidateStage.SIM_SURVIVOR)
    reason = RejectionReason.SEMANTIC_DUPLICATE if arbitration is Arbitration.SAME else RejectionReason.ARBITRATION_FAILURE
    return candidate.reject(reason)
