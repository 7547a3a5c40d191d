import socket
from importlib import resources
from pathlib import Path

import pytest

from assertctl.backend import API_KEY_ENV
from assertctl.corpus import parse_corpus

DATA = Path(str(resources.files("assertctl").joinpath("data")))
FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def offline(monkeypatch):
    """No test may open a network connection or see a real credential."""
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    real_connect = socket.socket.connect

    def guarded(self, address):
        if self.family == getattr(socket, "AF_UNIX", None):
            return real_connect(self, address)
        raise RuntimeError(f"network access attempted: {address!r}")

    monkeypatch.setattr(socket.socket, "connect", guarded)


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def mini_corpus():
    return parse_corpus(DATA / "mini_corpus.jsonl")


@pytest.fixture(scope="session")
def demo_corpus():
    return parse_corpus(DATA / "demo_corpus.jsonl")
