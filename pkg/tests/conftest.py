from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from coursegate.clock import MockClock
from coursegate.gateway import create_app

from helpers import make_state


@pytest.fixture
def mock_clock() -> MockClock:
    return MockClock()


@pytest.fixture
def gateway_state(mock_clock):
    state = make_state(clock=mock_clock)
    yield state
    state.close()


@pytest.fixture
def client(gateway_state) -> TestClient:
    return TestClient(create_app(gateway_state))
