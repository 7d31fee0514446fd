"""
Stages 1 and 2 of the sanitization funnel.

Stage 1  canonical dedup: within the article and against committed keys
Stage 2  loop/self-reference pre-filter, calibrated confidence gate, then
         model-based encyclopedic filtering in batches (strict gate on
         unparseable replies)

Nothing here writes the committed key set; that belongs to DedupIndex.commit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from src.core.models import (
    Article,
    CandidateEntity,
    CandidateStage,
    RejectionReason,
    Strategy,
    Subject,
)
from src.core.run_config import RunConfig
from src.generation.gateway import BackendResult, parse_json_reply
from src.text.canonical import canonicalize, is_usable_key

logger = logging.getLogger("Materializer.Sanitizer")


@dataclass(frozen=True)
class NerVerdict:
    phrase: str
    is_ne: bool
    confidence: Optional[Fraction] = None


@dataclass
class ScreenResult:
    survivors: list = field(default_factory=list)
    rejected: list = field(default_factory=list)

    def extend(self, other: "ScreenResult") -> None:
        self.survivors.extend(other.survivors)
        self.rejected.extend(other.rejected)


# ---------------------------------------------------------------------- stage 1

def raw_candidates(article: Article, calibrated: bool = False) -> list[CandidateEntity]:
    """One candidate per extracted link; calibrated links without a usable score are malformed."""
    return [
        CandidateEntity(
            phrase=target,
            canonical_key=canonicalize(target),
            parent_subject=article.subject.name,
            parent_hop=article.subject.hop,
            confidence=confidence,
            position=position,
            malformed=calibrated and confidence is None,
        )
        for position, (target, confidence) in enumerate(article.wikilinks)
    ]


def canonical_dedup(candidates: Sequence[CandidateEntity], committed_keys) -> ScreenResult:
    """
    Keep the first occurrence of each canonical key not yet committed.
    `committed_keys` is read only (advisory pre-check; commit re-checks atomically).
    """
    result = ScreenResult()
    seen = set()
    for candidate in candidates:
        key = candidate.canonical_key
        if not is_usable_key(key):
            result.rejected.append(candidate.reject(RejectionReason.EMPTY_KEY))
        elif key in seen or key in committed_keys:
            result.rejected.append(candidate.reject(RejectionReason.DUPLICATE_CANONICAL))
        else:
            seen.add(key)
            result.survivors.append(candidate.advance(CandidateStage.CANON_SURVIVOR))
    return result


# ---------------------------------------------------------------------- stage 2

def is_loop_key(key: str, anchor_key: str) -> bool:
    """Structural self-reference of `key` to `anchor_key`, both canonical."""
    if not anchor_key:
        return False
    return (
        key == anchor_key
        or key.endswith(f" of {anchor_key}")          # X of S, History of S, Part of S
        or key == f"{anchor_key} s"
        or key.startswith(f"{anchor_key} s ")         # S's X (apostrophe became a space)
        or key == f"{anchor_key} in popular culture"
    )


def loop_filter(candidate: CandidateEntity, subject: Subject, root: Optional[str] = None) -> CandidateEntity:
    """Return the candidate unchanged, or rejected with loop_pattern."""
    anchors = [subject.canonical_key]
    if root:
        anchors.append(canonicalize(root))
    if any(is_loop_key(candidate.canonical_key, anchor) for anchor in anchors):
        return candidate.reject(RejectionReason.LOOP_PATTERN)
    return candidate


def gate_confidence(candidates: Sequence[CandidateEntity], threshold: Fraction):
    """Calibrated runs only: (passed, rejected). Missing or malformed scores fail the gate."""
    passed, rejected = [], []
    for candidate in candidates:
        if candidate.malformed or candidate.confidence is None or candidate.confidence < threshold:
            rejected.append(candidate.reject(RejectionReason.BELOW_THRESHOLD))
        else:
            passed.append(candidate)
    return passed, rejected


def batches(items: Sequence, size: int) -> list[list]:
    return [list(items[i:i + size]) for i in range(0, len(items), size)]


def parse_ner_reply(batch: Sequence[CandidateEntity], text: Optional[str], calibrated: bool) -> Optional[list[NerVerdict]]:
    """
    Verdicts in batch order, or None when the reply breaks the contract:
    not JSON, wrong shape, a phrase missing, an extra phrase, a non-boolean
    is_ne, a confidence outside [0, 1], or (calibrated) a missing confidence.
    """
    try:
        data = parse_json_reply(text)
        entries = data["phrases"]
        if not isinstance(entries, list):
            return None
        by_phrase = {}
        for entry in entries:
            phrase = entry["phrase"]
            if phrase in by_phrase:
                return None
            is_ne = entry["is_ne"]
            if not isinstance(is_ne, bool):
                return None
            confidence = entry.get("confidence")
            if confidence is None:
                if calibrated:
                    return None
            elif isinstance(confidence, bool):
                return None
            else:
                confidence = Fraction(str(confidence))
                if not 0 <= confidence <= 1:
                    return None
            by_phrase[phrase] = NerVerdict(phrase=phrase, is_ne=is_ne, confidence=confidence)
    except (ValueError, KeyError, TypeError, ArithmeticError):
        return None
    if set(by_phrase) != {c.phrase for c in batch}:
        return None
    return [by_phrase[c.phrase] for c in batch]


class Sanitizer:
    """Stage 2 driver bound to one run's config, prompt forge and gateway."""

    def __init__(self, config: RunConfig, forge, gateway):
        self.config = config
        self.forge = forge
        self.gateway = gateway
        self.calibrated = config.strategy is Strategy.CALIBRATED

    def prefilter(self, survivors: Sequence[CandidateEntity], subject: Subject) -> ScreenResult:
        """Loop filter and, for calibrated runs, the confidence gate. No model calls."""
        result = ScreenResult()
        remaining = []
        for candidate in survivors:
            checked = loop_filter(candidate, subject, self.config.root_subject)
            if checked.stage is CandidateStage.REJECTED:
                result.rejected.append(checked)
            else:
                remaining.append(checked)
        if self.calibrated:
            remaining, below = gate_confidence(remaining, self.config.confidence_threshold)
            result.rejected.extend(below)
        result.survivors = remaining
        return result

    def ner_requests(self, candidates: Sequence[CandidateEntity], subject: Subject):
        """(batch, request) pairs, one per ner_batch_size slice."""
        pairs = []
        for index, batch in enumerate(batches(list(candidates), self.config.ner_batch_size)):
            bundle = self.forge.render("ner", self.config, subject, {"phrases_block": [c.phrase for c in batch]})
            pairs.append((batch, self.gateway.request(bundle, subject=subject.name, tag=f"ner:{subject.name}:{index}")))
        return pairs

    def ner_filter(self, batch: Sequence[CandidateEntity], subject: Subject, result: Optional[BackendResult] = None):
        """
        NerVerdicts for `batch`, or None under the strict gate (backend
        exhausted or reply unparseable). Empty batch: [] and no backend call.
        """
        if not batch:
            return []
        if result is None:
            bundle = self.forge.render("ner", self.config, subject, {"phrases_block": [c.phrase for c in batch]})
            result = self.gateway.complete(self.gateway.request(bundle, subject=subject.name))
        if not result.ok:
            logger.warning(f"NER for {subject.name} {result.outcome.value}; dropping {len(batch)} candidate(s)")
            return None
        verdicts = parse_ner_reply(batch, result.text, self.calibrated)
        if verdicts is None:
            logger.warning(f"Unparseable NER reply for {subject.name}; dropping {len(batch)} candidate(s)")
        return verdicts

    def apply_verdicts(self, batch: Sequence[CandidateEntity], verdicts) -> ScreenResult:
        result = ScreenResult()
        if verdicts is None:
            result.rejected = [c.reject(RejectionReason.NER_PARSE_FAILURE) for c in batch]
            return result
        for candidate, verdict in zip(batch, verdicts):
            accepted = verdict.is_ne
            if self.calibrated:
                accepted = accepted and verdict.confidence >= self.config.confidence_threshold
            if accepted:
                result.survivors.append(candidate.advance(CandidateStage.NER_SURVIVOR))
            else:
                result.rejected.append(candidate.reject(RejectionReason.NER_REJECT))
        return result

    def screen(self, candidates: Sequence[CandidateEntity], subject: Subject, results: Optional[list] = None) -> ScreenResult:
        """
        Stage 2 for candidates that already passed prefilter. `results`, when
        given, holds one BackendResult per batch (batch execution mode).
        """
        out = ScreenResult()
        for index, batch in enumerate(batches(list(candidates), self.config.ner_batch_size)):
            given = results[index] if results is not None else None
            out.extend(self.apply_verdicts(batch, self.ner_filter(batch, subject, given)))
        return out
