"""
Domain types consumed by every other package.

All types are immutable once constructed. State changes (a subject being
generated, a candidate advancing through the funnel) produce new values.
Each type converts to and from the flat dict written to the corpus JSONL
files; field names in those dicts match the attribute names here.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from src.text.canonical import canonicalize


class SubjectStatus(str, Enum):
    QUEUED = "queued"
    GENERATED = "generated"
    FAILED = "failed"


class Mode(str, Enum):
    GENERAL_DOMAIN = "general_domain"
    TOPIC_FOCUSED = "topic_focused"


class Persona(str, Enum):
    SCIENTIFIC_NEUTRAL = "scientific_neutral"
    LEFT_LEANING = "left_leaning"
    CONSERVATIVE = "conservative"


class Strategy(str, Enum):
    BASELINE = "baseline"
    CALIBRATED = "calibrated"


class ExecutionMode(str, Enum):
    ONLINE = "online"
    BATCH = "batch"


class CandidateStage(str, Enum):
    RAW = "raw"
    CANON_SURVIVOR = "canon_survivor"
    NER_SURVIVOR = "ner_survivor"
    SIM_SURVIVOR = "sim_survivor"
    COMMITTED = "committed"
    REJECTED = "rejected"


class RejectionReason(str, Enum):
    DUPLICATE_CANONICAL = "duplicate_canonical"
    EMPTY_KEY = "empty_key"
    BELOW_THRESHOLD = "below_threshold"
    NER_REJECT = "ner_reject"
    NER_PARSE_FAILURE = "ner_parse_failure"
    SEMANTIC_DUPLICATE = "semantic_duplicate"
    ARBITRATION_FAILURE = "arbitration_failure"
    LOOP_PATTERN = "loop_pattern"
    EMBEDDING_FAILURE = "embedding_failure"


_STAGE_ORDER = [
    CandidateStage.RAW,
    CandidateStage.CANON_SURVIVOR,
    CandidateStage.NER_SURVIVOR,
    CandidateStage.SIM_SURVIVOR,
    CandidateStage.COMMITTED,
]


def fraction_to_text(value: Optional[Fraction]) -> Optional[str]:
    """Exact text form of a rational: a decimal when it terminates, else 'p/q'."""
    if value is None:
        return None
    value = Fraction(value)
    den = value.denominator
    for p in (2, 5):
        while den % p == 0:
            den //= p
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    digits = 0
    scaled = value
    while scaled.denominator != 1:
        scaled *= 10
        digits += 1
    sign = "-" if scaled < 0 else ""
    text = str(abs(scaled.numerator)).rjust(digits + 1, "0")
    if digits == 0:
        return f"{sign}{text}"
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def text_to_fraction(text) -> Optional[Fraction]:
    if text is None:
        return None
    return Fraction(str(text))


@dataclass(frozen=True)
class Subject:
    """A node of the BFS graph, keyed everywhere by its canonical key."""

    name: str
    canonical_key: str
    hop: int
    status: SubjectStatus = SubjectStatus.QUEUED
    parent: Optional[str] = None

    def __post_init__(self):
        if self.canonical_key != canonicalize(self.name):
            raise ValueError(f"canonical_key {self.canonical_key!r} does not match name {self.name!r}")
        if self.hop < 0:
            raise ValueError(f"hop must be non-negative, got {self.hop}")
        if (self.hop == 0) != (self.parent is None):
            raise ValueError("hop 0 is reserved for the parentless run seed")

    @classmethod
    def create(cls, name: str, hop: int = 0, parent: Optional[str] = None) -> "Subject":
        return cls(name=name, canonical_key=canonicalize(name), hop=hop, parent=parent)

    def with_status(self, status: SubjectStatus) -> "Subject":
        return dataclasses.replace(self, status=status)

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "canonical_key": self.canonical_key,
            "hop": self.hop,
            "status": self.status.value,
            "parent": self.parent,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Subject":
        return cls(
            name=record["name"],
            canonical_key=record["canonical_key"],
            hop=int(record["hop"]),
            status=SubjectStatus(record["status"]),
            parent=record.get("parent"),
        )


@dataclass(frozen=True)
class Article:
    """Generated Wikitext plus the structure extracted from it (see src.text.wikitext.build_article)."""

    subject: Subject
    wikitext: str
    outline: tuple[str, ...]
    wikilinks: tuple[tuple[str, Optional[Fraction]], ...]
    categories: tuple[str, ...]
    has_infobox: bool
    word_count: int

    def to_record(self) -> dict:
        return {
            "subject": self.subject.to_record(),
            "wikitext": self.wikitext,
            "outline": list(self.outline),
            "wikilinks": [[target, fraction_to_text(conf)] for target, conf in self.wikilinks],
            "categories": list(self.categories),
            "has_infobox": self.has_infobox,
            "word_count": self.word_count,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Article":
        return cls(
            subject=Subject.from_record(record["subject"]),
            wikitext=record["wikitext"],
            outline=tuple(record["outline"]),
            wikilinks=tuple((t, text_to_fraction(c)) for t, c in record["wikilinks"]),
            categories=tuple(record["categories"]),
            has_infobox=bool(record["has_infobox"]),
            word_count=int(record["word_count"]),
        )


@dataclass(frozen=True)
class CandidateEntity:
    """
    A proposed wikilink travelling through the sanitization funnel.

    `position` is the index of the link inside its parent article and, together
    with the parent's queue position, fixes the deterministic commit order.
    """

    phrase: str
    canonical_key: str
    parent_subject: str
    parent_hop: int
    confidence: Optional[Fraction] = None
    stage: CandidateStage = CandidateStage.RAW
    rejection_reason: Optional[RejectionReason] = None
    position: int = 0
    malformed: bool = False

    def advance(self, stage: CandidateStage) -> "CandidateEntity":
        if self.stage is CandidateStage.REJECTED:
            raise ValueError(f"candidate {self.phrase!r} is already rejected")
        if _STAGE_ORDER.index(stage) != _STAGE_ORDER.index(self.stage) + 1:
            raise ValueError(f"illegal transition {self.stage.value} -> {stage.value}")
        return dataclasses.replace(self, stage=stage)

    def reject(self, reason: RejectionReason) -> "CandidateEntity":
        if self.stage in (CandidateStage.REJECTED, CandidateStage.COMMITTED):
            raise ValueError(f"cannot reject candidate in stage {self.stage.value}")
        return dataclasses.replace(self, stage=CandidateStage.REJECTED, rejection_reason=reason)

    def to_record(self) -> dict:
        return {
            "phrase": self.phrase,
            "canonical_key": self.canonical_key,
            "parent_subject": self.parent_subject,
            "parent_hop": self.parent_hop,
            "confidence": fraction_to_text(self.confidence),
            "stage": self.stage.value,
            "rejection_reason": self.rejection_reason.value if self.rejection_reason else None,
            "position": self.position,
            "malformed": self.malformed,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CandidateEntity":
        reason = record.get("rejection_reason")
        return cls(
            phrase=record["phrase"],
            canonical_key=record["canonical_key"],
            parent_subject=record["parent_subject"],
            parent_hop=int(record["parent_hop"]),
            confidence=text_to_fraction(record.get("confidence")),
            stage=CandidateStage(record["stage"]),
            rejection_reason=RejectionReason(reason) if reason else None,
            position=int(record.get("position", 0)),
            malformed=bool(record.get("malformed", False)),
        )


@dataclass(frozen=True)
class FactSheet:
    """Output of the optional self-grounding stage."""

    summary: str
    aliases: tuple[str, ...] = ()
    facts: tuple[tuple[str, str, Fraction], ...] = ()
    flagged: tuple[bool, ...] = field(default=())

    def render(self) -> str:
        lines = [f"Summary: {self.summary}"]
        if self.aliases:
            lines.append("Aliases: " + ", ".join(self.aliases))
        for (predicate, obj, conf), flag in zip(self.facts, self.flagged):
            marker = " [LOW CONFIDENCE]" if flag else ""
            lines.append(f"- {predicate}: {obj} ({fraction_to_text(conf)}){marker}")
        return "\n".join(lines)
