from __future__ import annotations

import os
import sys

# Add the src directory to sys.path for module discovery
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))


try:
    import pytest_asyncio  # type: ignore  # noqa: F401

    pytest_plugins = ("pytest_asyncio",)
except ModuleNotFoundError:  # pragma: no cover
    pytest_plugins: tuple[str, ...] = tuple()

from collections.abc import Iterator

import pytest

_ENV_KEYS = ("LLM_API_KEY", "LLM_BASE_URL")


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch: pytest.MonkeyPatch) -> Iterator[None]:
    """Isolate every test from the caller's environment."""

    for key in list(os.environ):
        if key.startswith("MEMCHAIN_") or key in _ENV_KEYS:
            monkeypatch.delenv(key, raising=False)
    yield


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "asyncio: mark async tests")
