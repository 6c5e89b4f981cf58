from __future__ import annotations

import pytest

from adcritic.backends import MockBackend, MockFlaws
from adcritic.cache import FileCache
from adcritic.editor import PostEditor
from adcritic.enums import ModelRole
from adcritic.gateway import Gateway
from adcritic.prompts import PromptEngine


@pytest.fixture(scope="session")
def engine() -> PromptEngine:
    return PromptEngine()


@pytest.fixture()
def mock_backend() -> MockBackend:
    return MockBackend()


@pytest.fixture()
def gateway(tmp_path, mock_backend) -> Gateway:
    cache = FileCache(tmp_path / "cache")
    return Gateway({role: mock_backend for role in ModelRole}, cache)


@pytest.fixture()
def faithful_gateway(tmp_path) -> Gateway:
    """Mock gateway whose generator neither drops nor invents features."""
    backend = MockBackend(flaws=MockFlaws(drop_rate=0.0, decoys_per_draft=0))
    cache = FileCache(tmp_path / "cache-faithful")
    return Gateway({role: backend for role in ModelRole}, cache)


@pytest.fixture()
def editor(gateway, engine) -> PostEditor:
    return PostEditor(gateway, engine)
