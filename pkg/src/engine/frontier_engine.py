"""
FrontierEngine: breadth-first materialization in synchronous waves.

Each wave takes the queued subjects of the lowest hop (FIFO, bounded by the
remaining article budget) and runs two phases:

1. Generation, in parallel per subject: optional self-grounding, outline,
   article, link extraction, Stage 1 canonical dedup (advisory read of the
   committed keys), loop filter, confidence gate, NER batches.
   Online mode streams each subject through every stage on the worker pool;
   batch mode submits one request group per stage for the whole wave.
2. Commit, serialized: within-wave dedup, embeddings, nearest-neighbour check,
   arbitration, atomic commit, in (parent queue position, link position) order.

Both modes therefore produce the same corpus for the same config. The run
directory is checkpointed at every wave barrier and can be resumed.
"""

from __future__ import annotations

import logging
import signal
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from apscheduler.executors.pool import ThreadPoolExecutor
from apscheduler.schedulers.background import BackgroundScheduler

from src.core.errors import GatewayExhaustedError, SnapshotError
from src.core.funnel import FunnelSnapshot, FunnelStats
from src.core.models import (
    Article,
    CandidateEntity,
    CandidateStage,
    ExecutionMode,
    FactSheet,
    RejectionReason,
    Strategy,
    Subject,
    SubjectStatus,
)
from src.core.run_config import RunConfig, validate_config
from src.engine.run_store import (
    ARTICLES_FILE,
    CANDIDATES_FILE,
    CHECKPOINT_FILE,
    CONFIG_FILE,
    FUNNEL_FILE,
    INDEX_FILE,
    QUEUES_FILE,
    SUBJECTS_FILE,
    RunStore,
)
from src.generation.gateway import ModelGateway, parse_json_reply
from src.generation.prompt_forge import PromptForge
from src.sanitization.dedup_index import (
    Arbiter,
    CommitOutcome,
    DedupIndex,
    resolve,
    within_wave_dedup,
)
from src.sanitization.sanitizer import (
    Sanitizer,
    ScreenResult,
    batches,
    canonical_dedup,
    raw_candidates,
)
from src.text.wikitext import build_article, strip_markup
from src.utils.parallel import process_in_parallel

logger = logging.getLogger("Materializer.Engine")


@dataclass
class SubjectWork:
    """Everything phase one produces for one dequeued subject."""

    subject: Subject
    position: int
    fact_sheet: Optional[FactSheet] = None
    outline: Optional[list] = None
    article: Optional[Article] = None
    failed: bool = False
    raw: list = field(default_factory=list)
    canonical: ScreenResult = field(default_factory=ScreenResult)
    prefilter: ScreenResult = field(default_factory=ScreenResult)
    ner: ScreenResult = field(default_factory=ScreenResult)
    excerpt: str = ""


@dataclass(frozen=True)
class RunReport:
    run_dir: Optional[str]
    funnel: FunnelSnapshot
    generated: int
    failed: int
    frontier: int
    waves: int
    completed: bool
    interrupted: bool = False

    def per_hop(self) -> dict:
        return {hop: dict(bucket) for hop, bucket in sorted(self.funnel.per_hop.items())}


class FrontierEngine:
    def __init__(
        self,
        config: RunConfig,
        backend=None,
        gateway: Optional[ModelGateway] = None,
        run_dir: Optional[str] = None,
        forge: Optional[PromptForge] = None,
        sleep=time.sleep,
    ):
        self.config = validate_config(config)
        if gateway is None and backend is None:
            raise ValueError("FrontierEngine needs a backend or a gateway")
        self.forge = forge or PromptForge()
        self.gateway = gateway or ModelGateway(backend, self.config, sleep=sleep)
        self.store = RunStore(run_dir) if run_dir else None

        self.index = DedupIndex()
        self.queue = self.index.queue
        self.funnel = FunnelStats()
        self.sanitizer = Sanitizer(self.config, self.forge, self.gateway)
        self.arbiter = Arbiter(self.config, self.forge, self.gateway, self.index)
        self.calibrated = self.config.strategy is Strategy.CALIBRATED

        self.processed: dict[str, Subject] = {}
        self.articles: list[Article] = []
        self.candidates: list[CandidateEntity] = []
        self.wave = 0
        self.attempted = 0
        self.completed = False
        self._started = False
        self._stop = threading.Event()

        self._steps = (
            ("self_grounding", self._grounding_requests, self._apply_grounding),
            ("outline", self._outline_requests, self._apply_outline),
            ("elicitation", self._elicitation_requests, self._apply_elicitation),
            ("ner", self._ner_requests, self._apply_ner),
        )

    # ================================================================== public

    @classmethod
    def resume(cls, run_dir, backend=None, gateway=None, config: Optional[RunConfig] = None,
               forge: Optional[PromptForge] = None, sleep=time.sleep) -> "FrontierEngine":
        """
        Rebuild an engine from a run directory. `config` may differ from the
        stored one only in execution tuning (workers, mode, backoff).
        """
        store = RunStore(run_dir)
        meta = store.read_json(CONFIG_FILE)
        try:
            stored = RunConfig.from_record(meta['config'])
        except (KeyError, ValueError, TypeError) as e:
            raise SnapshotError(f"config.json is unreadable: {e}") from e
        if stored.checksum() != meta.get('config_checksum'):
            raise SnapshotError("config.json does not match its recorded checksum")
        if config is not None and validate_config(config).checksum() != meta['config_checksum']:
            raise SnapshotError("Config checksum differs from the run being resumed")

        engine = cls(config or stored, backend=backend, gateway=gateway, run_dir=run_dir, forge=forge, sleep=sleep)
        if engine.forge.checksums() != meta.get('template_checksums'):
            raise SnapshotError("Prompt templates changed since the run started")
        engine._restore()
        logger.info(f"Resuming run in {run_dir} at wave {engine.wave} ({engine.attempted} subjects attempted)")
        return engine

    def funnel_snapshot(self) -> FunnelSnapshot:
        return self.funnel.snapshot()

    def stop(self) -> None:
        """Ask the run to stop at the next wave barrier."""
        self._stop.set()

    def subject_records(self) -> list[dict]:
        known = dict(self.processed)
        for subject in self.queue.snapshot():
            known.setdefault(subject.canonical_key, subject)
        ordered = sorted(known.values(), key=lambda s: (s.hop, s.canonical_key))
        return [s.to_record() for s in ordered]

    def run(self, max_waves: Optional[int] = None) -> RunReport:
        if self.completed:
            logger.info("Run already completed; nothing to do")
            return self._report()
        if not self._started:
            self._seed()

        reporter = self._start_reporter()
        previous_handlers = self._install_signal_handlers()
        waves_this_call = 0
        try:
            while not self._stop.is_set():
                if max_waves is not None and waves_this_call >= max_waves:
                    break
                limit = None
                if self.config.article_budget is not None:
                    limit = self.config.article_budget - self.attempted
                    if limit <= 0:
                        break
                subjects = self.queue.take(limit)
                if not subjects:
                    break
                self._run_wave(subjects)
                self.wave += 1
                waves_this_call += 1
                self.completed = self._finished()
                self._checkpoint()
            self.completed = self._finished()
            self._checkpoint()
        finally:
            self._restore_signal_handlers(previous_handlers)
            if reporter is not None:
                reporter.shutdown(wait=False)

        report = self._report(interrupted=self._stop.is_set() and not self.completed)
        logger.info(
            f"Run {'completed' if report.completed else 'paused'} after {report.waves} wave(s): "
            f"{report.generated} generated, {report.failed} failed, {report.frontier} queued"
        )
        return report

    # ================================================================== lifecycle

    def _seed(self) -> None:
        if self.store is not None and self.store.exists(CHECKPOINT_FILE):
            raise SnapshotError(f"{self.store.run_dir} already holds a run; resume it instead")
        seed = Subject.create(self.config.seed_subject)
        vector = self.gateway.embed([seed.name])[0]
        self.index.register_seed(seed, vector)
        if self.store is not None:
            self.store.write_config(self.config.to_record(), self.config.checksum(), self.forge.checksums())
        self._started = True
        logger.info(
            f"Starting {self.config.mode.value} run from seed {seed.name!r} "
            f"({self.config.strategy.value}, {self.config.execution_mode.value})"
        )

    def _finished(self) -> bool:
        if len(self.queue) == 0:
            return True
        return self.config.article_budget is not None and self.attempted >= self.config.article_budget

    def _report(self, interrupted: bool = False) -> RunReport:
        failed = sum(1 for s in self.processed.values() if s.status is SubjectStatus.FAILED)
        return RunReport(
            run_dir=self.store.run_dir if self.store else None,
            funnel=self.funnel.snapshot(),
            generated=len(self.processed) - failed,
            failed=failed,
            frontier=len(self.queue),
            waves=self.wave,
            completed=self.completed,
            interrupted=interrupted,
        )

    def _checkpoint(self) -> None:
        if self.store is None:
            return
        self.store.checkpoint(
            subjects=self.subject_records(),
            funnel=self.funnel.snapshot().to_record(),
            index=self.index.to_records(),
            queue=[s.to_record() for s in self.queue.snapshot()],
            state={
                'wave': self.wave,
                'attempted': self.attempted,
                'completed': self.completed,
                'config_checksum': self.config.checksum(),
            },
        )

    def _restore(self) -> None:
        store = self.store
        state = store.read_json(CHECKPOINT_FILE)
        if state.get('config_checksum') != self.config.checksum():
            raise SnapshotError("checkpoint.json belongs to a different config")
        store.trim_appended(state)
        try:
            queued = [Subject.from_record(r) for r in store.read_snapshot_records(QUEUES_FILE, state)]
            self.index = DedupIndex.from_records(store.read_snapshot_records(INDEX_FILE, state), queued)
            self.funnel = FunnelStats(FunnelSnapshot.from_record(store.read_snapshot_json(FUNNEL_FILE, state)))
            subjects = [Subject.from_record(r) for r in store.read_snapshot_records(SUBJECTS_FILE, state)]
            self.articles = [Article.from_record(r) for r in store.read_records(ARTICLES_FILE)] \
                if store.exists(ARTICLES_FILE) else []
            self.candidates = [CandidateEntity.from_record(r) for r in store.read_records(CANDIDATES_FILE)] \
                if store.exists(CANDIDATES_FILE) else []
        except (KeyError, ValueError, TypeError) as e:
            raise SnapshotError(f"Corrupt run snapshot: {e}") from e

        self.queue = self.index.queue
        self.arbiter.index = self.index
        self.processed = {s.canonical_key: s for s in subjects if s.status is not SubjectStatus.QUEUED}
        self.wave = int(state['wave'])
        self.attempted = int(state['attempted'])
        self.completed = bool(state.get('completed', False))
        self._started = True

        if len(self.processed) != self.attempted:
            raise SnapshotError(f"{len(self.processed)} processed subjects but checkpoint says {self.attempted}")
        missing = [s.name for s in list(self.processed.values()) + queued if s.canonical_key not in self.index]
        if missing:
            raise SnapshotError(f"Subjects missing from the index snapshot: {missing[:5]}")
        store.publish(state)

    # ------------------------------------------------------------------ progress / signals

    def _log_progress(self) -> None:
        totals = self.funnel.snapshot().totals
        logger.info(
            f"[progress] wave {self.wave}: {totals['generated_articles']} articles, "
            f"{totals['raw_candidates']} raw candidates, {totals['queued_subjects']} queued subjects, "
            f"{len(self.queue)} in frontier"
        )

    def _start_reporter(self):
        interval = self.config.progress_interval_seconds
        if not interval or interval <= 0:
            return None
        scheduler = BackgroundScheduler(
            executors={'default': ThreadPoolExecutor(1)},
            job_defaults={'coalesce': True, 'max_instances': 1, 'misfire_grace_time': 10},
        )
        scheduler.add_job(self._log_progress, 'interval', seconds=interval, id='progress', replace_existing=True)
        scheduler.start()
        return scheduler

    def _handle_signal(self, signum, frame):
        logger.warning(f"Received signal {signum}; stopping after the current wave")
        self._stop.set()

    def _install_signal_handlers(self) -> dict:
        if threading.current_thread() is not threading.main_thread():
            return {}
        previous = {}
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                previous[sig] = signal.signal(sig, self._handle_signal)
            except (ValueError, OSError):
                # Some environments may not support signal operations
                pass
        return previous

    @staticmethod
    def _restore_signal_handlers(previous: dict) -> None:
        for sig, handler in previous.items():
            try:
                signal.signal(sig, handler)
            except (ValueError, OSError):
                pass

    # ================================================================== wave

    def _run_wave(self, subjects: list[Subject]) -> None:
        self.attempted += len(subjects)
        logger.info(f"Wave {self.wave}: {len(subjects)} subject(s) at hop {subjects[0].hop}")
        works = [SubjectWork(subject=s, position=i) for i, s in enumerate(subjects)]
        if self.config.execution_mode is ExecutionMode.BATCH:
            self._generate_batch(works)
        else:
            works = process_in_parallel(
                works, self._generate_online,
                max_workers=self.config.worker_threads, on_error=self._worker_failed,
            )
        self._count_generation(works)
        settled = self._commit_phase(works)

        articles = [w.article for w in works if w.article is not None]
        self.articles.extend(articles)
        wave_candidates = []
        for work in works:
            wave_candidates.extend(work.canonical.rejected)
            wave_candidates.extend(work.prefilter.rejected)
            wave_candidates.extend(work.ner.rejected)
        wave_candidates.extend(settled)
        positions = {w.subject.name: w.position for w in works}
        wave_candidates.sort(key=lambda c: (positions[c.parent_subject], c.position))
        self.candidates.extend(wave_candidates)
        if self.store is not None:
            self.store.append_jsonl(ARTICLES_FILE, [a.to_record() for a in articles])
            self.store.append_jsonl(CANDIDATES_FILE, [c.to_record() for c in wave_candidates])

    # ------------------------------------------------------------------ phase one

    def _generate_online(self, work: SubjectWork) -> SubjectWork:
        for _, build, apply in self._steps:
            if work.failed:
                break
            requests = build(work)
            if requests is None:
                continue
            apply(work, [self.gateway.complete(r) for r in requests])
        return work

    def _generate_batch(self, works: list[SubjectWork]) -> None:
        for stage, build, apply in self._steps:
            plan = []
            for work in works:
                if work.failed:
                    continue
                requests = build(work)
                if requests is not None:
                    plan.append((work, requests))
            flat = [r for _, requests in plan for r in requests]
            results = self.gateway.complete_many(flat, max_workers=self.config.worker_threads)
            offset = 0
            for work, requests in plan:
                chunk = results[offset:offset + len(requests)]
                offset += len(requests)
                try:
                    apply(work, chunk)
                except Exception as e:
                    self._worker_failed(work, e)

    def _worker_failed(self, work: SubjectWork, error: Exception) -> SubjectWork:
        logger.error(f"Generation of {work.subject.name!r} failed: {error}", exc_info=True)
        work.failed = True
        work.article = None
        work.canonical = ScreenResult()
        work.prefilter = ScreenResult()
        work.ner = ScreenResult()
        return work

    def _grounding_requests(self, work):
        if not self.config.self_grounding:
            return None
        return [self.gateway.fact_sheet_request(work.subject, self.config, self.forge)]

    def _apply_grounding(self, work, results):
        work.fact_sheet = self.gateway.parse_fact_sheet(work.subject, results[0])

    def _outline_requests(self, work):
        bundle = self.forge.render("outline", self.config, work.subject)
        return [self.gateway.request(bundle, subject=work.subject.name)]

    def _apply_outline(self, work, results):
        result = results[0]
        if not result.ok:
            logger.warning(f"Outline for {work.subject.name!r} {result.outcome.value}; subject failed")
            work.failed = True
            return
        try:
            sections = parse_json_reply(result.text)["sections"]
            if not isinstance(sections, list) or not sections or not all(isinstance(s, str) and s.strip() for s in sections):
                raise ValueError("sections must be a non-empty list of titles")
        except (ValueError, KeyError, TypeError) as e:
            logger.warning(f"Unparseable outline for {work.subject.name!r}: {e}; subject failed")
            work.failed = True
            return
        work.outline = [s.strip() for s in sections]

    def _elicitation_requests(self, work):
        grounding = ""
        if work.fact_sheet is not None:
            grounding = "\nFact sheet (entries marked LOW CONFIDENCE need care):\n" + work.fact_sheet.render()
        bundle = self.forge.render("elicitation", self.config, work.subject, {
            "outline_block": work.outline,
            "grounding_block": grounding,
        })
        return [self.gateway.request(bundle, subject=work.subject.name)]

    def _apply_elicitation(self, work, results):
        result = results[0]
        if not result.ok or not (result.text or "").strip():
            logger.warning(f"Elicitation for {work.subject.name!r} {result.outcome.value}; subject failed")
            work.failed = True
            return
        work.article = build_article(work.subject, result.text, work.outline, self.config.strategy)
        work.excerpt = " ".join(strip_markup(result.text).split())[: self.config.arbitration_excerpt_chars]
        work.raw = raw_candidates(work.article, self.calibrated)
        # advisory: the committed set is frozen during phase one
        work.canonical = canonical_dedup(work.raw, self.index)
        work.prefilter = self.sanitizer.prefilter(work.canonical.survivors, work.subject)

    def _ner_requests(self, work):
        return [request for _, request in self.sanitizer.ner_requests(work.prefilter.survivors, work.subject)]

    def _apply_ner(self, work, results):
        work.ner = self.sanitizer.screen(work.prefilter.survivors, work.subject, results)

    def _count_generation(self, works: list[SubjectWork]) -> None:
        for work in works:
            hop = work.subject.hop
            status = SubjectStatus.FAILED if work.article is None else SubjectStatus.GENERATED
            self.processed[work.subject.canonical_key] = work.subject.with_status(status)
            if status is SubjectStatus.FAILED:
                self.funnel.increment("failed_subjects", hop)
                continue
            reasons = [c.rejection_reason for c in work.prefilter.rejected + work.ner.rejected]
            self.funnel.increment("generated_articles", hop)
            self.funnel.increment("raw_candidates", hop, len(work.raw))
            self.funnel.increment("after_canonical", hop, len(work.canonical.survivors))
            self.funnel.increment("loop_rejected", hop, reasons.count(RejectionReason.LOOP_PATTERN))
            self.funnel.increment("below_threshold", hop, reasons.count(RejectionReason.BELOW_THRESHOLD))
            self.funnel.increment("ner_parse_failures", hop, reasons.count(RejectionReason.NER_PARSE_FAILURE))
            self.funnel.increment("after_ner", hop, len(work.ner.survivors))

    # ------------------------------------------------------------------ phase two

    def _embed_chunk(self, names: list[str]):
        try:
            return self.gateway.embed(names)
        except GatewayExhaustedError as e:
            logger.warning(f"Embedding {len(names)} candidate(s) failed: {e}")
            return None

    def _commit_phase(self, works: list[SubjectWork]) -> list[CandidateEntity]:
        """Stage 3 and commit. Returns the final state of every Stage 2 survivor."""
        by_parent = {w.subject.name: w for w in works}
        survivors = [c for w in works for c in w.ner.survivors]
        unique, collapsed = within_wave_dedup(survivors)
        ordered = sorted(unique, key=lambda c: (by_parent[c.parent_subject].position, c.position))

        chunks = batches(ordered, self.config.ner_batch_size)
        embedded = process_in_parallel(
            [[c.phrase for c in chunk] for chunk in chunks], self._embed_chunk,
            max_workers=self.config.worker_threads,
        )
        settled = list(collapsed)
        for chunk, vectors in zip(chunks, embedded):
            for i, candidate in enumerate(chunk):
                hop = candidate.parent_hop
                if vectors is None:
                    settled.append(candidate.reject(RejectionReason.EMBEDDING_FAILURE))
                    continue
                vector = vectors[i]
                candidate = self._similarity_check(candidate, vector, by_parent[candidate.parent_subject])
                if candidate.stage is CandidateStage.REJECTED:
                    settled.append(candidate)
                    continue
                self.funnel.increment("after_similarity", hop)
                outcome = self.index.commit(candidate, vector, self.wave, self.config.depth_cap)
                if outcome is CommitOutcome.COMMITTED:
                    self.funnel.increment("queued_subjects", hop)
                    candidate = candidate.advance(CandidateStage.COMMITTED)
                elif outcome is CommitOutcome.CAPPED:
                    self.funnel.increment("depth_capped", hop)
                else:
                    candidate = candidate.reject(RejectionReason.DUPLICATE_CANONICAL)
                settled.append(candidate)
        return settled

    def _similarity_check(self, candidate: CandidateEntity, vector, parent: SubjectWork) -> CandidateEntity:
        nearest = self.index.nearest(vector)
        if nearest is None or Fraction(nearest[1]) < Fraction(self.config.similarity_threshold):
            return candidate.advance(CandidateStage.SIM_SURVIVOR)
        self.funnel.increment("arbitrations", candidate.parent_hop)
        existing_key, cosine = nearest
        logger.debug(f"{candidate.phrase!r} is {cosine:.3f} from {existing_key!r}; arbitrating")
        return resolve(self.arbiter.arbitrate(candidate, existing_key, parent.subject, parent.excerpt), candidate)
