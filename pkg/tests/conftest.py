import sys

import numpy as np
import pytest
from hypothesis import settings

from gmschauder import FlowCache, ProcessModel, SchauderBasis

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


def make_model(name: str) -> ProcessModel:
    if name == "wiener":
        return ProcessModel.wiener()
    if name == "ou":
        return ProcessModel.ornstein_uhlenbeck(1.0, 1.0)
    if name == "rotation":
        return ProcessModel.rotation([[0.0, 1.0], [-1.0, 0.0]], 1.0)
    if name == "iw2":
        return ProcessModel.integrated_wiener(1)
    if name == "iw3":
        return ProcessModel.integrated_wiener(2)
    raise KeyError(name)


STANDARD_MODELS = ("wiener", "ou", "rotation", "iw2")

_BASES: dict[tuple[str, int], SchauderBasis] = {}


def basis_for(name: str, depth: int = 7) -> SchauderBasis:
    """Shared, lazily built basis whose tree reaches ``depth`` levels."""
    key = (name, depth)
    if key not in _BASES:
        _BASES[key] = SchauderBasis.for_model(make_model(name), depth)
    return _BASES[key]


def flow_for(name: str) -> FlowCache:
    return basis_for(name).flow


@pytest.fixture(params=STANDARD_MODELS)
def model_name(request) -> str:
    return request.param


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None) if module else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
