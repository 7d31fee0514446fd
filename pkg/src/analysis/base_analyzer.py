import os
import logging
from abc import ABC, abstractmethod

import pandas as pd

from src.core.errors import SnapshotError
from src.core.models import SubjectStatus
from src.engine.run_store import SUBJECTS_FILE, read_jsonl

logger = logging.getLogger("Materializer.BaseAnalyzer")


class BaseAnalyzer(ABC):
    """
    Abstract base class for analyzers that read a run directory.

    self.df holds one row per known subject (name, canonical_key, hop,
    status, parent); analyze() runs only when at least one subject exists.
    """
    data_name = SUBJECTS_FILE
    required_columns = ('name', 'hop', 'status')

    def __init__(self, run_dir, result_dir=None):
        """
        Args:
            run_dir (str): The run directory written by the frontier engine.
            result_dir (str): Where tables and plots go (default: <run_dir>/analysis).
        """
        self.run_dir = run_dir
        self.data_file = os.path.join(run_dir, self.data_name)
        self.result_dir = result_dir or os.path.join(run_dir, 'analysis')
        self.df = None

    def load_data(self):
        """Subject records as a DataFrame; hop as int, status as an ordered categorical."""
        if not os.path.exists(self.data_file):
            logger.error(f"Data file not found: {self.data_file}")
            self.df = pd.DataFrame()
            return
        try:
            records = read_jsonl(self.data_file)
        except SnapshotError as e:
            logger.error(f"Error loading data: {e}")
            self.df = pd.DataFrame()
            return

        df = pd.DataFrame.from_records(records)
        missing = [c for c in self.required_columns if c not in df.columns]
        if df.empty or missing:
            if missing and not df.empty:
                logger.error(f"{self.data_name} lacks column(s): {', '.join(missing)}")
            self.df = pd.DataFrame()
            return
        df['hop'] = df['hop'].astype(int)
        df['status'] = pd.Categorical(df['status'], categories=[s.value for s in SubjectStatus], ordered=True)
        self.df = df
        logger.info(f"Loaded {len(df)} subject(s) from {self.data_file}")

    def status_counts(self):
        """Subjects per (hop, status); zero-filled over every status."""
        if self.df is None or self.df.empty:
            return pd.DataFrame(columns=['hop'] + [s.value for s in SubjectStatus])
        table = self.df.groupby(['hop', 'status'], observed=False).size().unstack(fill_value=0)
        table.columns = [str(c) for c in table.columns]
        return table.reset_index()

    @abstractmethod
    def analyze(self):
        pass

    def run(self):
        self.load_data()
        if not self.df.empty:
            return self.analyze()
        logger.warning("No subjects recorded. Skipping analysis.")
        return None
