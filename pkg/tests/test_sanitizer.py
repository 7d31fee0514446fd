import json
from fractions import Fraction

import pytest

from src.core.models import (
    CandidateEntity,
    CandidateStage,
    Mode,
    RejectionReason,
    Strategy,
    Subject,
)
from src.generation.backends.mock_backend import MockBackend
from src.generation.gateway import BackendResult, Outcome
from src.sanitization.sanitizer import (
    Sanitizer,
    batches,
    canonical_dedup,
    gate_confidence,
    is_loop_key,
    loop_filter,
    parse_ner_reply,
    raw_candidates,
)
from src.text.canonical import canonicalize
from src.text.wikitext import build_article

PARENT = Subject.create("Vannevar Bush")


def candidate(phrase, position=0, confidence=None, malformed=False, stage=CandidateStage.RAW):
    c = CandidateEntity(phrase=phrase, canonical_key=canonicalize(phrase), parent_subject=PARENT.name,
                        parent_hop=PARENT.hop, confidence=confidence, position=position, malformed=malformed)
    return c if stage is CandidateStage.RAW else c.advance(stage)


def ok(payload):
    return BackendResult(text=json.dumps(payload), attempts=1, outcome=Outcome.OK)


def test_raw_candidates_follow_link_order():
    text = "'''Vannevar Bush''' met [[Claude Shannon (0.95)]] at [[MIT]]."
    article = build_article(PARENT, text, [], Strategy.CALIBRATED)
    raw = raw_candidates(article, calibrated=True)
    assert [(c.phrase, c.position, c.confidence, c.malformed) for c in raw] == [
        ("Claude Shannon", 0, Fraction("0.95"), False),
        ("MIT", 1, None, True),
    ]
    assert all(c.parent_subject == "Vannevar Bush" and c.parent_hop == 0 for c in raw)


def test_canonical_dedup_within_article_and_against_committed():
    raw = [candidate("MIT", 0), candidate("mit.", 1), candidate("Harvard", 2), candidate("Tufts", 3), candidate("!!", 4)]
    result = canonical_dedup(raw, committed_keys={"tufts"})
    assert [c.phrase for c in result.survivors] == ["MIT", "Harvard"]
    assert all(c.stage is CandidateStage.CANON_SURVIVOR for c in result.survivors)
    reasons = {c.phrase: c.rejection_reason for c in result.rejected}
    assert reasons == {
        "mit.": RejectionReason.DUPLICATE_CANONICAL,
        "Tufts": RejectionReason.DUPLICATE_CANONICAL,
        "!!": RejectionReason.EMPTY_KEY,
    }


@pytest.mark.parametrize("phrase, looped", [
    ("Vannevar Bush", True),
    ("History of Vannevar Bush", True),
    ("Part of Vannevar Bush", True),
    ("Vannevar Bush's essays", True),
    ("Vannevar Bush in popular culture", True),
    ("Vannevar Bush Award", False),
    ("Office of Scientific Research and Development", False),
])
def test_loop_patterns(phrase, looped):
    assert is_loop_key(canonicalize(phrase), PARENT.canonical_key) is looped


def test_loop_filter_uses_root():
    child = Subject.create("Hammurabi", hop=1, parent="Ancient Babylon")
    c = CandidateEntity("Religion of Ancient Babylon", canonicalize("Religion of Ancient Babylon"), child.name, 1)
    assert loop_filter(c.advance(CandidateStage.CANON_SURVIVOR), child, "Ancient Babylon").rejection_reason \
        is RejectionReason.LOOP_PATTERN
    assert loop_filter(c.advance(CandidateStage.CANON_SURVIVOR), child).stage is CandidateStage.CANON_SURVIVOR


def test_confidence_gate_boundary():
    survivors = [candidate(name, i, Fraction(score), stage=CandidateStage.CANON_SURVIVOR)
                 for i, (name, score) in enumerate([("A", "0.60"), ("B", "0.74"), ("C", "0.75"), ("D", "0.97")])]
    survivors.append(candidate("E", 4, None, malformed=True, stage=CandidateStage.CANON_SURVIVOR))
    passed, rejected = gate_confidence(survivors, Fraction("0.75"))
    assert [c.phrase for c in passed] == ["C", "D"]
    assert [c.phrase for c in rejected] == ["A", "B", "E"]
    assert {c.rejection_reason for c in rejected} == {RejectionReason.BELOW_THRESHOLD}


def test_batches():
    assert batches(list(range(5)), 2) == [[0, 1], [2, 3], [4]]
    assert batches([], 3) == []


def test_parse_ner_reply_contract():
    batch = [candidate("Paris"), candidate("London")]
    good = json.dumps({"phrases": [{"phrase": "London", "is_ne": True}, {"phrase": "Paris", "is_ne": False}]})
    verdicts = parse_ner_reply(batch, good, calibrated=False)
    assert [(v.phrase, v.is_ne) for v in verdicts] == [("Paris", False), ("London", True)]

    missing = json.dumps({"phrases": [{"phrase": "Paris", "is_ne": True}]})
    extra = json.dumps({"phrases": [{"phrase": p, "is_ne": True} for p in ("Paris", "London", "Rome")]})
    repeated = json.dumps({"phrases": [{"phrase": "Paris", "is_ne": True}] * 2 + [{"phrase": "London", "is_ne": True}]})
    for text in (missing, extra, repeated, "Sorry.", None, '{"phrases": "Paris"}'):
        assert parse_ner_reply(batch, text, calibrated=False) is None
    assert parse_ner_reply(batch, good, calibrated=True) is None


@pytest.mark.parametrize("is_ne, confidence", [
    ("false", 0.9),
    ("true", 0.9),
    (1, 0.9),
    (None, 0.9),
    (True, 7.0),
    (True, -0.1),
    (True, True),
    (True, "high"),
])
def test_parse_ner_reply_rejects_malformed_fields(is_ne, confidence):
    batch = [candidate("Paris")]
    text = json.dumps({"phrases": [{"phrase": "Paris", "is_ne": is_ne, "confidence": confidence}]})
    assert parse_ner_reply(batch, text, calibrated=True) is None
    assert parse_ner_reply(batch, text, calibrated=False) is None


def test_parse_ner_reply_confidence_bounds_are_inclusive():
    batch = [candidate("Paris"), candidate("London")]
    text = json.dumps({"phrases": [{"phrase": "Paris", "is_ne": True, "confidence": 1},
                                   {"phrase": "London", "is_ne": False, "confidence": 0.0}]})
    verdicts = parse_ner_reply(batch, text, calibrated=True)
    assert [(v.is_ne, v.confidence) for v in verdicts] == [(True, 1), (False, 0)]


def test_string_boolean_never_passes_the_ner_gate(forge, make_config, make_gateway):
    config = make_config(strategy=Strategy.CALIBRATED)
    sanitizer = Sanitizer(config, forge, make_gateway(MockBackend(), config))
    survivors = [candidate("Paris", confidence=Fraction("0.9"), stage=CandidateStage.CANON_SURVIVOR)]
    reply = ok({"phrases": [{"phrase": "Paris", "is_ne": "false", "confidence": 7.0}]})
    screened = sanitizer.screen(survivors, PARENT, [reply])
    assert screened.survivors == []
    assert [c.rejection_reason for c in screened.rejected] == [RejectionReason.NER_PARSE_FAILURE]


def test_ner_batch_failure_rejects_whole_batch(forge, make_config, make_gateway):
    config = make_config(ner_batch_size=2)
    sanitizer = Sanitizer(config, forge, make_gateway(MockBackend(), config))
    survivors = [candidate(p, i, stage=CandidateStage.CANON_SURVIVOR) for i, p in enumerate(["A", "B", "C"])]
    results = [
        BackendResult(text="not json", attempts=1, outcome=Outcome.OK),
        ok({"phrases": [{"phrase": "C", "is_ne": True}]}),
    ]
    screened = sanitizer.screen(survivors, PARENT, results)
    assert [c.phrase for c in screened.survivors] == ["C"]
    assert screened.survivors[0].stage is CandidateStage.NER_SURVIVOR
    assert {c.phrase: c.rejection_reason for c in screened.rejected} == {
        "A": RejectionReason.NER_PARSE_FAILURE,
        "B": RejectionReason.NER_PARSE_FAILURE,
    }


def test_ner_exhaustion_rejects_batch(forge, make_config, make_gateway):
    config = make_config(max_retries=1)
    backend = MockBackend(fail_subjects={"ner": {PARENT.name}})
    sanitizer = Sanitizer(config, forge, make_gateway(backend, config))
    survivors = [candidate("Paris", stage=CandidateStage.CANON_SURVIVOR)]
    screened = sanitizer.screen(survivors, PARENT)
    assert screened.survivors == []
    assert screened.rejected[0].rejection_reason is RejectionReason.NER_PARSE_FAILURE


def test_empty_batch_makes_no_call(forge, make_config, make_gateway):
    config = make_config()
    backend = MockBackend()
    sanitizer = Sanitizer(config, forge, make_gateway(backend, config))
    assert sanitizer.ner_filter([], PARENT) == []
    assert backend.calls["ner"] == 0


def test_generic_terms_rejected_by_ner(forge, make_config, make_gateway):
    config = make_config()
    sanitizer = Sanitizer(config, forge, make_gateway(MockBackend(generic_terms=["government"]), config))
    survivors = [candidate(p, i, stage=CandidateStage.CANON_SURVIVOR) for i, p in enumerate(["Government", "MIT"])]
    screened = sanitizer.screen(survivors, PARENT)
    assert [c.phrase for c in screened.survivors] == ["MIT"]
    assert screened.rejected[0].rejection_reason is RejectionReason.NER_REJECT


def test_calibrated_ner_confidence_applies(forge, make_config, make_gateway):
    config = make_config(strategy=Strategy.CALIBRATED)
    backend = MockBackend(ner_scores={"Rome": "0.70"})
    sanitizer = Sanitizer(config, forge, make_gateway(backend, config))
    survivors = [candidate(p, i, Fraction("0.9"), stage=CandidateStage.CANON_SURVIVOR)
                 for i, p in enumerate(["Rome", "Paris"])]
    screened = sanitizer.screen(survivors, PARENT)
    assert [c.phrase for c in screened.survivors] == ["Paris"]


def test_prefilter_topic_mode(forge, make_config, make_gateway):
    config = make_config(mode=Mode.TOPIC_FOCUSED, seed_subject="Ancient Babylon", root_subject="Ancient Babylon")
    sanitizer = Sanitizer(config, forge, make_gateway(MockBackend(), config))
    child = Subject.create("Hammurabi", hop=1, parent="Ancient Babylon")
    survivors = [
        CandidateEntity(p, canonicalize(p), child.name, 1, position=i).advance(CandidateStage.CANON_SURVIVOR)
        for i, p in enumerate(["Ancient Babylon in popular culture", "Hammurabi's code", "Marduk"])
    ]
    result = sanitizer.prefilter(survivors, child)
    assert [c.phrase for c in result.survivors] == ["Marduk"]
    assert len(result.rejected) == 2
