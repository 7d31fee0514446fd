import os
import sys

import pytest

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from src.core.models import Subject  # noqa: E402
from src.core.run_config import RunConfig, validate_config  # noqa: E402
from src.engine.frontier_engine import FrontierEngine  # noqa: E402
from src.generation.backends.mock_backend import MockBackend  # noqa: E402
from src.generation.gateway import ModelGateway  # noqa: E402
from src.generation.prompt_forge import PromptForge  # noqa: E402


def no_sleep(_seconds):
    pass


@pytest.fixture(scope="session")
def forge():
    return PromptForge()


@pytest.fixture
def make_config():
    def build(**overrides):
        overrides.setdefault("progress_interval_seconds", 0)
        return validate_config(RunConfig(**overrides))
    return build


@pytest.fixture
def make_gateway():
    def build(backend, config):
        return ModelGateway(backend, config, sleep=no_sleep)
    return build


@pytest.fixture
def make_engine(forge):
    def build(config, backend, run_dir=None):
        return FrontierEngine(config, backend=backend, run_dir=run_dir, forge=forge, sleep=no_sleep)
    return build


@pytest.fixture
def subject():
    return Subject.create("Vannevar Bush")


def mock_backend(**options):
    return MockBackend(**options)
