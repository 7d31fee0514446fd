import json
import os
import random
from collections import deque

import pytest

from src.core.errors import SnapshotError, TransientBackendError
from src.core.models import (
    CandidateStage,
    ExecutionMode,
    Mode,
    RejectionReason,
    Strategy,
    SubjectStatus,
)
from src.engine.frontier_engine import FrontierEngine
from src.engine.run_store import CHECKPOINT_FILE, SUBJECTS_FILE, RunStore
from src.generation.backends.mock_backend import MockBackend

SEED = "Vannevar Bush"


def no_sleep(_seconds):
    pass


class RecordingBackend(MockBackend):
    """Keeps the phrases every NER call was asked to judge."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.ner_phrases = []

    def _reply_ner(self, subject, placeholders, calibrated):
        self.ner_phrases.extend(p for p in placeholders.get("phrases_block", "").split("\n") if p)
        return super()._reply_ner(subject, placeholders, calibrated)


class SeedOnlyEmbeddings(MockBackend):
    def embed(self, texts):
        if list(texts) != [SEED]:
            raise TransientBackendError("embedding service down")
        return super().embed(texts)


def random_graph(size=80, out_degree=3, seed=11):
    rng = random.Random(seed)
    nodes = [f"Node {i}" for i in range(size)]
    graph = {SEED: nodes[:3]}
    for node in nodes:
        graph[node] = rng.sample(nodes + [SEED], out_degree)
    return graph


def bfs_distances(graph, root, cap):
    distances = {root: 0}
    frontier = deque([root])
    while frontier:
        node = frontier.popleft()
        if distances[node] == cap:
            continue
        for child in graph.get(node, []):
            if child not in distances:
                distances[child] = distances[node] + 1
                frontier.append(child)
    return distances


def generated_hops(engine):
    return {r["name"]: r["hop"] for r in engine.subject_records() if r["status"] == SubjectStatus.GENERATED.value}


def by_phrase(engine, phrase):
    return [c for c in engine.candidates if c.phrase == phrase]


# ---------------------------------------------------------------------- graph expansion

def test_hops_match_graph_bfs(make_config, make_engine):
    graph = random_graph()
    config = make_config(seed_subject=SEED, depth_cap=3, article_budget=200, worker_threads=4)
    engine = make_engine(config, MockBackend(graph))
    report = engine.run()
    assert report.completed
    assert generated_hops(engine) == bfs_distances(graph, SEED, cap=3)
    assert report.funnel.totals["depth_capped"] > 0


def test_topic_runs_stay_within_two_hops(make_config, make_engine):
    config = make_config(mode=Mode.TOPIC_FOCUSED, seed_subject="Ancient Babylon", root_subject="Ancient Babylon")
    engine = make_engine(config, MockBackend(fanout=3))
    report = engine.run()
    hops = [r["hop"] for r in engine.subject_records()]
    assert max(hops) == 2
    assert report.generated == 1 + 3 + 9


def test_three_parents_propose_one_subject(make_config, make_engine):
    graph = {
        "Physics": ["Albert Einstein", "Max Planck", "Werner Heisenberg"],
        "Albert Einstein": ["Niels Bohr"],
        "Max Planck": ["Niels Bohr"],
        "Werner Heisenberg": ["Niels Bohr"],
    }
    for _ in range(20):
        engine = make_engine(make_config(seed_subject="Physics", worker_threads=8), MockBackend(graph))
        engine.run()
        proposals = by_phrase(engine, "Niels Bohr")
        committed = [c for c in proposals if c.stage is CandidateStage.COMMITTED]
        rejected = [c for c in proposals if c.stage is CandidateStage.REJECTED]
        assert len(proposals) == 3
        assert [c.parent_subject for c in committed] == ["Albert Einstein"]
        assert [c.rejection_reason for c in rejected] == [RejectionReason.DUPLICATE_CANONICAL] * 2
        bohr = [r for r in engine.subject_records() if r["name"] == "Niels Bohr"]
        assert bohr == [{"name": "Niels Bohr", "canonical_key": "niels bohr", "hop": 2,
                         "status": "generated", "parent": "Albert Einstein"}]


def test_no_duplicate_keys_under_heavy_overlap(make_config, make_engine):
    rng = random.Random(5)
    nodes = [f"Place {i}" for i in range(60)]
    graph = {SEED: nodes[:8]}
    for node in nodes:
        picks = rng.sample(nodes, 6)
        graph[node] = picks + [p.upper() for p in picks[:2]]
    engine = make_engine(make_config(seed_subject=SEED, worker_threads=8, ner_batch_size=3), MockBackend(graph))
    engine.run()
    keys = [r["canonical_key"] for r in engine.subject_records()]
    assert len(keys) == len(set(keys))
    assert len(engine.index) == len(keys)


def test_link_back_to_seed_is_duplicate(make_config, make_engine):
    graph = {SEED: ["MIT"], "MIT": [SEED, "Harvard"]}
    engine = make_engine(make_config(seed_subject=SEED), MockBackend(graph))
    engine.run()
    (back,) = [c for c in engine.candidates if c.parent_subject == "MIT" and c.phrase == SEED]
    assert back.rejection_reason is RejectionReason.DUPLICATE_CANONICAL
    assert sorted(generated_hops(engine)) == ["Harvard", "MIT", SEED]


def test_budget_counts_attempted_subjects(make_config, make_engine):
    backend = MockBackend(fanout=3, fail_subjects={"elicitation": {SEED}})
    engine = make_engine(make_config(seed_subject=SEED, article_budget=5, max_retries=1), backend)
    report = engine.run()
    assert report.failed == 1
    assert report.generated == 0
    assert report.completed

    engine = make_engine(make_config(seed_subject=SEED, article_budget=10), MockBackend(fanout=3))
    report = engine.run()
    assert report.generated + report.failed == 10
    assert report.completed
    assert report.frontier > 0


# ---------------------------------------------------------------------- funnel

@pytest.mark.parametrize("strategy", list(Strategy))
@pytest.mark.parametrize("execution_mode", list(ExecutionMode))
@pytest.mark.parametrize("mode", list(Mode))
def test_funnel_monotone_at_every_wave(make_config, make_engine, strategy, execution_mode, mode):
    root = "Ancient Babylon" if mode is Mode.TOPIC_FOCUSED else None
    config = make_config(mode=mode, seed_subject=root or SEED, root_subject=root, strategy=strategy,
                         execution_mode=execution_mode, article_budget=25)
    backend = MockBackend(fanout=4, generic_terms=[], link_scores={}, ner_scores={})
    engine = make_engine(config, backend)
    report = None
    while report is None or not report.completed:
        report = engine.run(max_waves=1)
        assert engine.funnel_snapshot().is_monotone()
    assert report.funnel.is_monotone()
    totals = report.funnel.totals
    assert totals["raw_candidates"] >= totals["after_canonical"] >= totals["after_ner"] \
        >= totals["after_similarity"] >= totals["queued_subjects"]


def test_confidence_gate_before_ner(make_config, make_engine):
    names = ["Entity A", "Entity B", "Entity C", "Entity D"]
    scores = dict(zip(names, ["0.60", "0.74", "0.75", "0.97"]))
    backend = RecordingBackend({SEED: names}, link_scores=scores)
    engine = make_engine(make_config(seed_subject=SEED, strategy=Strategy.CALIBRATED), backend)
    engine.run(max_waves=1)
    assert sorted(backend.ner_phrases) == ["Entity C", "Entity D"]
    for name in ("Entity A", "Entity B"):
        assert by_phrase(engine, name)[0].rejection_reason is RejectionReason.BELOW_THRESHOLD
    assert engine.funnel_snapshot().totals["below_threshold"] == 2


# ---------------------------------------------------------------------- strict gates

def test_unparseable_ner_drops_batch(make_config, make_engine):
    engine = make_engine(make_config(seed_subject=SEED), MockBackend({SEED: ["A", "B", "C"]}, malformed_stages={"ner"}))
    report = engine.run()
    assert {c.rejection_reason for c in engine.candidates} == {RejectionReason.NER_PARSE_FAILURE}
    assert report.funnel.totals["ner_parse_failures"] == 3
    assert report.funnel.totals["queued_subjects"] == 0
    assert report.generated == 1


def test_failed_arbitration_rejects_candidate(make_config, make_engine):
    backend = MockBackend({SEED: ["United States", "USA"]}, alias_groups=[("United States", "USA")],
                          malformed_stages={"arbitration"})
    engine = make_engine(make_config(seed_subject=SEED), backend)
    engine.run(max_waves=1)
    assert by_phrase(engine, "United States")[0].stage is CandidateStage.COMMITTED
    assert by_phrase(engine, "USA")[0].rejection_reason is RejectionReason.ARBITRATION_FAILURE
    assert engine.funnel_snapshot().totals["arbitrations"] == 1


def test_alias_is_semantic_duplicate(make_config, make_engine):
    backend = MockBackend({SEED: ["United States", "USA"]}, alias_groups=[("United States", "USA")])
    engine = make_engine(make_config(seed_subject=SEED), backend)
    engine.run(max_waves=1)
    assert by_phrase(engine, "USA")[0].rejection_reason is RejectionReason.SEMANTIC_DUPLICATE
    assert "usa" not in engine.index


def test_elicitation_exhaustion_fails_subject_only(make_config, make_engine):
    graph = {SEED: ["A", "B", "C"], "A": ["D"], "B": ["E"], "C": ["F"]}
    backend = MockBackend(graph, fail_subjects={"elicitation": {"B"}})
    engine = make_engine(make_config(seed_subject=SEED, max_retries=2), backend)
    report = engine.run()
    statuses = {r["name"]: r["status"] for r in engine.subject_records()}
    assert statuses["B"] == "failed"
    assert "E" not in statuses
    assert statuses["D"] == statuses["F"] == "generated"
    assert report.failed == 1
    assert report.funnel.totals["failed_subjects"] == 1
    assert report.completed


def test_embedding_failure_rejects_candidates(make_config, make_engine):
    engine = make_engine(make_config(seed_subject=SEED, max_retries=1), SeedOnlyEmbeddings({SEED: ["A", "B"]}))
    report = engine.run()
    assert {c.rejection_reason for c in engine.candidates} == {RejectionReason.EMBEDDING_FAILURE}
    assert report.funnel.totals["after_similarity"] == 0


def test_self_grounding_runs_before_each_article(make_config, make_engine):
    backend = MockBackend({SEED: ["A"]})
    engine = make_engine(make_config(seed_subject=SEED, self_grounding=True), backend)
    report = engine.run()
    assert report.generated == 2
    assert backend.calls["self_grounding"] == 2


# ---------------------------------------------------------------------- determinism

ALIAS_GRAPH = {
    SEED: ["United States", "France", "Germany"],
    "France": ["USA", "Paris"],
    "Germany": ["U.S.A.", "Berlin", "Paris"],
}


def corpus_fingerprint(make_config, make_engine, execution_mode, workers):
    config = make_config(seed_subject=SEED, article_budget=40, execution_mode=execution_mode,
                         worker_threads=workers, ner_batch_size=2)
    backend = MockBackend(ALIAS_GRAPH, fanout=2, alias_groups=[("United States", "USA", "U.S.A.")])
    engine = make_engine(config, backend)
    report = engine.run()
    return (
        engine.subject_records(),
        report.funnel.to_record(),
        [c.to_record() for c in engine.candidates],
    )


def test_worker_count_and_execution_mode_do_not_change_corpus(make_config, make_engine):
    baseline = corpus_fingerprint(make_config, make_engine, ExecutionMode.ONLINE, 1)
    assert baseline[1]["totals"]["arbitrations"] >= 2
    for mode in ExecutionMode:
        for workers in (1, 4, 8):
            assert corpus_fingerprint(make_config, make_engine, mode, workers) == baseline


# ---------------------------------------------------------------------- persistence

GOLDEN_FILES = ("subjects.jsonl", "funnel.json", "candidates.jsonl", "articles.jsonl")


def golden_config(make_config):
    return make_config(seed_subject=SEED, article_budget=100, random_seed=3)


def read_bytes(run_dir):
    result = {}
    for name in GOLDEN_FILES:
        with open(os.path.join(run_dir, name), "rb") as f:
            result[name] = f.read()
    return result


def test_golden_run_is_byte_identical(tmp_path, make_config, make_engine):
    outputs = []
    for name in ("first", "second"):
        run_dir = str(tmp_path / name)
        report = make_engine(golden_config(make_config), MockBackend(fanout=3), run_dir).run()
        assert report.generated == 100
        outputs.append(read_bytes(run_dir))
    assert outputs[0] == outputs[1]


def test_resume_after_interrupt_matches_uninterrupted(tmp_path, make_config, make_engine, forge):
    full_dir = str(tmp_path / "full")
    make_engine(golden_config(make_config), MockBackend(fanout=3), full_dir).run()

    partial_dir = str(tmp_path / "partial")
    report = make_engine(golden_config(make_config), MockBackend(fanout=3), partial_dir).run(max_waves=3)
    assert not report.completed
    # a wave that died before its checkpoint leaves extra appended lines
    with open(os.path.join(partial_dir, "articles.jsonl"), "a", encoding="utf-8") as f:
        f.write(json.dumps({"partial": True}) + "\n")

    resumed = FrontierEngine.resume(partial_dir, backend=MockBackend(fanout=3), forge=forge, sleep=no_sleep)
    assert resumed.wave == 3
    assert resumed.run().completed
    assert read_bytes(partial_dir) == read_bytes(full_dir)


class Killed(Exception):
    pass


@pytest.mark.parametrize("fatal_write", ["checkpoint", "publish"])
def test_resume_after_crash_inside_checkpoint(tmp_path, make_config, make_engine, forge, monkeypatch, fatal_write):
    full_dir = str(tmp_path / "full")
    make_engine(golden_config(make_config), MockBackend(fanout=3), full_dir).run()

    crashed_dir = str(tmp_path / "crashed")
    if fatal_write == "checkpoint":
        # killed after the wave-3 snapshot files are written, before checkpoint.json
        write_json = RunStore.write_json

        def dying_write_json(self, name, record):
            if name == CHECKPOINT_FILE and record.get("wave") == 3:
                raise Killed()
            write_json(self, name, record)

        monkeypatch.setattr(RunStore, "write_json", dying_write_json)
        expected_wave = 2
    else:
        # killed after checkpoint.json commits wave 3, while copying the top-level files
        publish = RunStore.publish

        def dying_publish(self, state):
            if state.get("wave") == 3:
                with open(self.path(SUBJECTS_FILE), "w", encoding="utf-8") as f:
                    f.write('{"torn": ')
                raise Killed()
            publish(self, state)

        monkeypatch.setattr(RunStore, "publish", dying_publish)
        expected_wave = 3
    with pytest.raises(Killed):
        make_engine(golden_config(make_config), MockBackend(fanout=3), crashed_dir).run()
    monkeypatch.undo()

    resumed = FrontierEngine.resume(crashed_dir, backend=MockBackend(fanout=3), forge=forge, sleep=no_sleep)
    assert resumed.wave == expected_wave
    assert resumed.run().completed
    assert read_bytes(crashed_dir) == read_bytes(full_dir)


def test_stop_then_resume(tmp_path, make_config, make_engine, forge):
    run_dir = str(tmp_path / "run")
    engine = make_engine(make_config(seed_subject=SEED, article_budget=12), MockBackend(fanout=3), run_dir)
    engine.stop()
    report = engine.run()
    assert report.interrupted
    assert report.waves == 0

    resumed = FrontierEngine.resume(run_dir, backend=MockBackend(fanout=3), forge=forge, sleep=no_sleep)
    report = resumed.run()
    assert report.completed
    assert report.generated == 12


def test_resume_accepts_execution_tuning(tmp_path, make_config, make_engine, forge):
    run_dir = str(tmp_path / "run")
    config = make_config(seed_subject=SEED, article_budget=12)
    make_engine(config, MockBackend(fanout=3), run_dir).run(max_waves=1)
    tuned = make_config(seed_subject=SEED, article_budget=12, worker_threads=8,
                        execution_mode=ExecutionMode.BATCH)
    engine = FrontierEngine.resume(run_dir, backend=MockBackend(fanout=3), config=tuned, forge=forge, sleep=no_sleep)
    assert engine.run().generated == 12


def test_resume_rejects_other_config(tmp_path, make_config, make_engine, forge):
    run_dir = str(tmp_path / "run")
    make_engine(make_config(seed_subject=SEED, article_budget=12), MockBackend(fanout=3), run_dir).run(max_waves=1)
    other = make_config(seed_subject="Claude Shannon", article_budget=12)
    with pytest.raises(SnapshotError):
        FrontierEngine.resume(run_dir, backend=MockBackend(fanout=3), config=other, forge=forge)


def test_resume_rejects_changed_templates(tmp_path, make_config, make_engine, forge):
    run_dir = str(tmp_path / "run")
    make_engine(make_config(seed_subject=SEED, article_budget=12), MockBackend(fanout=3), run_dir).run(max_waves=1)
    path = os.path.join(run_dir, "config.json")
    with open(path, encoding="utf-8") as f:
        meta = json.load(f)
    meta["template_checksums"]["outline.general_domain.txt"] = "0" * 64
    with open(path, "w", encoding="utf-8") as f:
        json.dump(meta, f)
    with pytest.raises(SnapshotError):
        FrontierEngine.resume(run_dir, backend=MockBackend(fanout=3), forge=forge)


def test_fresh_run_refuses_existing_run_dir(tmp_path, make_config, make_engine):
    run_dir = str(tmp_path / "run")
    make_engine(make_config(seed_subject=SEED, article_budget=3), MockBackend(fanout=3), run_dir).run()
    with pytest.raises(SnapshotError):
        make_engine(make_config(seed_subject=SEED, article_budget=3), MockBackend(fanout=3), run_dir).run()


def test_completed_run_resumes_as_noop(tmp_path, make_config, make_engine, forge):
    run_dir = str(tmp_path / "run")
    make_engine(make_config(seed_subject=SEED, article_budget=4), MockBackend(fanout=3), run_dir).run()
    backend = MockBackend(fanout=3)
    report = FrontierEngine.resume(run_dir, backend=backend, forge=forge).run()
    assert report.completed
    assert sum(backend.calls.values()) == 0


def test_engine_needs_a_backend(make_config):
    with pytest.raises(ValueError):
        FrontierEngine(make_config())
