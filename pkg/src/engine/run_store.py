"""
Run directory persistence.

    config.json       effective config, its checksum, template checksums
    subjects.jsonl    every known subject (generated, failed, queued), sorted by (hop, key)
    articles.jsonl    appended per wave
    candidates.jsonl  appended per wave, final funnel state of every candidate
    funnel.json       FunnelSnapshot record
    queues.jsonl      ungenerated frontier in FIFO order
    checkpoint.json   wave counter, snapshot directory, line counts of the appended files
    snapshots/NNNNNN/ subjects, funnel, index (committed entities with vectors), queues

At each wave barrier the snapshot goes into a fresh numbered directory, then
checkpoint.json is replaced to point at it. That os.replace is the only
commit point: a crash before it leaves the previous checkpoint and its
directory intact, and lines appended after the last checkpoint are trimmed
on load. subjects.jsonl, funnel.json and queues.jsonl at the top level are
copies of the committed snapshot, republished on resume.
"""

import json
import logging
import os
import shutil
import tempfile

from src.core.errors import SnapshotError

logger = logging.getLogger("Materializer.RunStore")

CONFIG_FILE = 'config.json'
SUBJECTS_FILE = 'subjects.jsonl'
ARTICLES_FILE = 'articles.jsonl'
CANDIDATES_FILE = 'candidates.jsonl'
FUNNEL_FILE = 'funnel.json'
INDEX_FILE = 'index.jsonl'
QUEUES_FILE = 'queues.jsonl'
CHECKPOINT_FILE = 'checkpoint.json'

SNAPSHOT_DIR = 'snapshots'

APPENDED_FILES = (ARTICLES_FILE, CANDIDATES_FILE)
SNAPSHOT_FILES = (SUBJECTS_FILE, FUNNEL_FILE, INDEX_FILE, QUEUES_FILE)
PUBLISHED_FILES = (SUBJECTS_FILE, FUNNEL_FILE, QUEUES_FILE)


def _dumps(record):
    return json.dumps(record, ensure_ascii=False)


def read_jsonl(path):
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise SnapshotError(f"{os.path.basename(path)} line {line_no}: {e}") from e
    return records


class RunStore:
    def __init__(self, run_dir):
        self.run_dir = run_dir
        os.makedirs(run_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.run_dir, *name.split('/'))

    def exists(self, name):
        return os.path.exists(self.path(name))

    # ------------------------------------------------------------------ writes

    def _atomic_write(self, name, text):
        target = self.path(name)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(target), prefix=f'.{os.path.basename(target)}.', suffix='.tmp')
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
                f.write(text)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise

    def write_text(self, name, text):
        self._atomic_write(name, text)

    def write_json(self, name, record):
        self._atomic_write(name, json.dumps(record, ensure_ascii=False, indent=2, sort_keys=True) + '\n')

    def write_jsonl(self, name, records):
        self._atomic_write(name, ''.join(_dumps(r) + '\n' for r in records))

    def append_jsonl(self, name, records):
        with open(self.path(name), 'a', encoding='utf-8', newline='\n') as f:
            for record in records:
                f.write(_dumps(record) + '\n')

    def line_count(self, name):
        if not self.exists(name):
            return 0
        with open(self.path(name), 'r', encoding='utf-8') as f:
            return sum(1 for line in f if line.strip())

    def write_config(self, config_record, config_checksum, template_checksums):
        self.write_json(CONFIG_FILE, {
            'config': config_record,
            'config_checksum': config_checksum,
            'template_checksums': template_checksums,
        })

    def _next_snapshot(self):
        root = self.path(SNAPSHOT_DIR)
        os.makedirs(root, exist_ok=True)
        taken = [int(n) for n in os.listdir(root) if n.isdigit()]
        # numbers are never reused, not even those of half-written directories
        name = f"{SNAPSHOT_DIR}/{max(taken, default=0) + 1:06d}"
        os.makedirs(self.path(name))
        return name

    def checkpoint(self, *, subjects, funnel, index, queue, state):
        """Write the wave-barrier snapshot, then commit it by replacing checkpoint.json."""
        snapshot = self._next_snapshot()
        self.write_jsonl(f"{snapshot}/{SUBJECTS_FILE}", subjects)
        self.write_json(f"{snapshot}/{FUNNEL_FILE}", funnel)
        self.write_jsonl(f"{snapshot}/{INDEX_FILE}", index)
        self.write_jsonl(f"{snapshot}/{QUEUES_FILE}", queue)
        state = dict(state)
        state['snapshot'] = snapshot
        for name in APPENDED_FILES:
            state[f'{name}_lines'] = self.line_count(name)
        self.write_json(CHECKPOINT_FILE, state)
        logger.debug(f"Checkpoint written: wave {state.get('wave')} in {snapshot}")
        self.publish(state)
        self.prune(state)

    def snapshot_name(self, name, state):
        """Path, relative to the run dir, of a file in the committed snapshot."""
        if name not in SNAPSHOT_FILES:
            raise ValueError(f"{name} is not a snapshot file")
        snapshot = state.get('snapshot')
        if not snapshot:
            raise SnapshotError("checkpoint.json names no snapshot directory")
        return f"{snapshot}/{name}"

    def publish(self, state):
        """Copy the committed snapshot's reader-facing files to the top level."""
        for name in PUBLISHED_FILES:
            source = self.path(self.snapshot_name(name, state))
            if not os.path.exists(source):
                raise SnapshotError(f"Missing {self.snapshot_name(name, state)} in {self.run_dir}")
            fd, tmp = tempfile.mkstemp(dir=self.run_dir, prefix=f'.{name}.', suffix='.tmp')
            os.close(fd)
            try:
                shutil.copyfile(source, tmp)
                os.replace(tmp, self.path(name))
            except BaseException:
                if os.path.exists(tmp):
                    os.remove(tmp)
                raise

    def prune(self, state):
        """Remove every snapshot directory except the committed one."""
        keep = os.path.basename(state['snapshot'])
        root = self.path(SNAPSHOT_DIR)
        for name in os.listdir(root):
            if name != keep:
                shutil.rmtree(os.path.join(root, name), ignore_errors=True)

    # ------------------------------------------------------------------ reads

    def read_json(self, name):
        if not self.exists(name):
            raise SnapshotError(f"Missing {name} in {self.run_dir}")
        try:
            with open(self.path(name), 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise SnapshotError(f"{name} is not valid JSON: {e}") from e

    def read_records(self, name):
        if not self.exists(name):
            raise SnapshotError(f"Missing {name} in {self.run_dir}")
        return read_jsonl(self.path(name))

    def read_snapshot_json(self, name, state):
        return self.read_json(self.snapshot_name(name, state))

    def read_snapshot_records(self, name, state):
        return self.read_records(self.snapshot_name(name, state))

    def trim_appended(self, state):
        """Drop lines appended after the last checkpoint (an interrupted wave)."""
        for name in APPENDED_FILES:
            expected = state.get(f'{name}_lines', 0)
            if not self.exists(name):
                if expected:
                    raise SnapshotError(f"{name} is missing but the checkpoint expects {expected} lines")
                continue
            with open(self.path(name), 'r', encoding='utf-8') as f:
                lines = [line for line in f if line.strip()]
            if len(lines) < expected:
                raise SnapshotError(f"{name} has {len(lines)} lines, checkpoint expects {expected}")
            if len(lines) > expected:
                logger.warning(f"Trimming {len(lines) - expected} uncheckpointed line(s) from {name}")
                self._atomic_write(name, ''.join(lines[:expected]))
