"""
Deterministic offline backend.

Replies are computed from the prompt placeholders the gateway forwards in
params['placeholders'], so the same request always yields the same text.
Articles follow a fixed link graph (subject -> outgoing link targets);
subjects outside the graph get `fanout` synthetic links.

Fault injection:
    fail_times        {(stage, subject) | stage: n} -> n transient failures, then success
    fail_subjects     {stage: {subject, ...}}        -> always transient failure
    permanent_fail    {stage: {subject, ...}}        -> always permanent failure
    malformed_stages  {stage, ...}                   -> reply is not JSON / not Wikitext
    fail_embeddings   True                           -> embed() raises a transient error
"""

import hashlib
import json
import logging
import re
import threading
from collections import defaultdict
from fractions import Fraction

import numpy as np

from src.core.errors import PermanentBackendError, TransientBackendError
from src.generation.backends.base_backend import BaseBackend
from src.text.canonical import canonicalize
from src.text.wikitext import render_link

logger = logging.getLogger("Materializer.Backend.Mock")

DEFAULT_SECTIONS = ("Overview", "History", "Significance")
DEFAULT_LINK_SCORE = Fraction("0.90")
DEFAULT_NER_SCORE = Fraction("0.90")
_ALIAS_NOISE = 0.05
_CALIBRATED_MARKER = "CALIBRATED"


def _digest(text):
    return hashlib.sha256(text.encode("utf-8")).digest()


class MockBackend(BaseBackend):
    def __init__(
        self,
        link_graph=None,
        *,
        fanout=0,
        generic_terms=(),
        alias_groups=(),
        distinct_pairs=(),
        link_scores=None,
        ner_scores=None,
        claims=None,
        verdicts=None,
        fact_sheets=None,
        embedding_dim=64,
        seed=0,
        fail_times=None,
        fail_subjects=None,
        permanent_fail=None,
        malformed_stages=(),
        fail_embeddings=False,
        settings=None,
    ):
        super().__init__(settings)
        self.link_graph = {k: list(v) for k, v in (link_graph or {}).items()}
        self.fanout = fanout
        self.generic_keys = {canonicalize(t) for t in generic_terms}
        self.alias_of = {}
        for group in alias_groups:
            group = list(group)
            anchor = canonicalize(group[0])
            for name in group:
                self.alias_of[canonicalize(name)] = anchor
        self.distinct_pairs = {frozenset((canonicalize(a), canonicalize(b))) for a, b in distinct_pairs}
        self.link_scores = {k: Fraction(str(v)) for k, v in (link_scores or {}).items()}
        self.ner_scores = {canonicalize(k): Fraction(str(v)) for k, v in (ner_scores or {}).items()}
        self.claims = dict(claims or {})
        self.verdicts = dict(verdicts or {})
        self.fact_sheets = dict(fact_sheets or {})
        self.embedding_dim = settings.embedding_dim if settings is not None else embedding_dim
        self.seed = seed
        self.fail_times = dict(fail_times or {})
        self.fail_subjects = {k: set(v) for k, v in (fail_subjects or {}).items()}
        self.permanent_fail = {k: set(v) for k, v in (permanent_fail or {}).items()}
        self.malformed_stages = set(malformed_stages)
        self.fail_embeddings = fail_embeddings

        self._lock = threading.Lock()
        self._failures_served = defaultdict(int)
        self.calls = defaultdict(int)

    # ------------------------------------------------------------------ faults

    def _inject_faults(self, stage, subject):
        with self._lock:
            self.calls[stage] += 1
            if subject in self.permanent_fail.get(stage, ()):
                raise PermanentBackendError(f"mock permanent failure: {stage} / {subject}")
            if subject in self.fail_subjects.get(stage, ()):
                raise TransientBackendError(f"mock transient failure: {stage} / {subject}")
            for key in ((stage, subject), stage):
                budget = self.fail_times.get(key)
                if budget and self._failures_served[key] < budget:
                    self._failures_served[key] += 1
                    raise TransientBackendError(
                        f"mock transient failure {self._failures_served[key]}/{budget}: {stage} / {subject}")

    # ------------------------------------------------------------------ completion

    def complete(self, system, user, params):
        stage = params["stage"]
        subject = params.get("subject", "")
        self._inject_faults(stage, subject)
        if stage in self.malformed_stages:
            return "Sorry, I cannot help with that."
        placeholders = params.get("placeholders", {})
        calibrated = _CALIBRATED_MARKER in system
        handler = getattr(self, f"_reply_{stage}")
        return handler(subject, placeholders, calibrated)

    def links_for(self, subject):
        if subject in self.link_graph:
            return list(self.link_graph[subject])
        return [f"Topic {hashlib.sha256(f'{subject}|{i}'.encode('utf-8')).hexdigest()[:8]}"
                for i in range(self.fanout)]

    def _reply_outline(self, subject, placeholders, calibrated):
        sections = list(DEFAULT_SECTIONS)
        root = placeholders.get("root_subject")
        if root:
            sections.append(f"Role within {root}")
        return json.dumps({"sections": sections})

    def _reply_elicitation(self, subject, placeholders, calibrated):
        sections = json.loads(placeholders.get("outline_block", '{"sections": []}'))["sections"]
        links = self.links_for(subject)
        rendered = []
        for target in links:
            if calibrated:
                score = self.link_scores.get((subject, target), self.link_scores.get(target, DEFAULT_LINK_SCORE))
                rendered.append(render_link(target, score))
            else:
                rendered.append(render_link(target))

        parts = [
            "{{Infobox entity",
            f"| name = {subject}",
            "}}",
            f"'''{subject}''' is a subject of this encyclopedia.",
            "",
        ]
        buckets = [[] for _ in sections] or [[]]
        for i, link in enumerate(rendered):
            buckets[i % len(buckets)].append(link)
        for title, bucket in zip(sections, buckets):
            parts.append(f"== {title} ==")
            body = f"This section covers {title.lower()} of {subject}."
            if bucket:
                body += " It is connected to " + ", ".join(bucket) + "."
            parts.append(body)
            parts.append("")
        if not sections and rendered:
            parts.append("Related: " + ", ".join(rendered) + ".")
        parts.append("[[Category:Mock subjects]]")
        return "\n".join(parts)

    def _reply_ner(self, subject, placeholders, calibrated):
        phrases = [p for p in placeholders.get("phrases_block", "").split("\n") if p]
        verdicts = []
        for phrase in phrases:
            key = canonicalize(phrase)
            entry = {"phrase": phrase, "is_ne": key not in self.generic_keys}
            if calibrated:
                score = self.ner_scores.get(key, DEFAULT_NER_SCORE)
                entry["confidence"] = float(score)
                if score < Fraction("0.75"):
                    entry["is_ne"] = False
            verdicts.append(entry)
        return json.dumps({"phrases": verdicts}, ensure_ascii=False)

    def _same_entity(self, a, b):
        ka, kb = canonicalize(a), canonicalize(b)
        if frozenset((ka, kb)) in self.distinct_pairs:
            return False
        return ka == kb or (ka in self.alias_of and self.alias_of.get(ka) == self.alias_of.get(kb))

    def _reply_arbitration(self, subject, placeholders, calibrated):
        same = self._same_entity(placeholders.get("candidate_name", ""), placeholders.get("existing_name", ""))
        return json.dumps({"same_entity": same})

    def _reply_self_grounding(self, subject, placeholders, calibrated):
        if subject in self.fact_sheets:
            return json.dumps(self.fact_sheets[subject], ensure_ascii=False)
        key = canonicalize(subject)
        aliases = sorted(n for n, anchor in self.alias_of.items() if anchor == self.alias_of.get(key) and n != key)
        return json.dumps({
            "summary": f"{subject} is a subject of this encyclopedia.",
            "aliases": aliases,
            "facts": [
                {"predicate": "instance of", "object": "named entity", "confidence": 0.95},
                {"predicate": "related to", "object": "unknown", "confidence": 0.6},
            ],
        }, ensure_ascii=False)

    def _reply_claim_extraction(self, subject, placeholders, calibrated):
        claims = self.claims.get(subject)
        if claims is None:
            text = placeholders.get("article_text", "")
            claims = [s.strip() + "." for s in re.split(r"[.\n]", text) if len(s.split()) >= 4][:3]
        return json.dumps({"claims": list(claims)}, ensure_ascii=False)

    def _reply_verdict(self, subject, placeholders, calibrated):
        claim = placeholders.get("claim", "")
        verdict = self.verdicts.get(claim)
        if verdict is None:
            evidence = placeholders.get("evidence_block", "").casefold()
            verdict = "supported" if claim.rstrip(".").casefold() in evidence else "insufficient"
        return json.dumps({"verdict": verdict})

    # ------------------------------------------------------------------ embeddings

    def _base_vector(self, key):
        seed = int.from_bytes(_digest(f"{self.seed}|{key}")[:8], "big")
        return np.random.default_rng(seed).standard_normal(self.embedding_dim)

    def embed(self, texts):
        with self._lock:
            self.calls["embed"] += 1
        if self.fail_embeddings:
            raise TransientBackendError("mock embedding failure")
        vectors = []
        for text in texts:
            key = canonicalize(text)
            anchor = self.alias_of.get(key)
            if anchor is not None:
                vec = self._base_vector(anchor) + _ALIAS_NOISE * self._base_vector(key)
            else:
                vec = self._base_vector(key)
            vectors.append(vec / np.linalg.norm(vec))
        return vectors
