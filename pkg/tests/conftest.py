from __future__ import annotations

import pytest

import golden_fixture
from xrcir.datasets import load_manifest
from xrcir.embed_index import load_catalog
from xrcir.agents import MockScript


def pytest_addoption(parser):
    parser.addoption("--live", action="store_true", default=False, help="run tests against real chat/embedding endpoints")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--live"):
        return
    skip = pytest.mark.skip(reason="live backend test; enable with --live")
    for item in items:
        if "live" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def golden_dir():
    return golden_fixture.GOLDEN_DIR


@pytest.fixture(scope="session")
def golden_manifest(golden_dir):
    return load_manifest(golden_dir / "manifest.jsonl")


@pytest.fixture(scope="session")
def golden_catalog(golden_dir):
    return load_catalog(golden_dir / "catalog.xrcat")


@pytest.fixture
def golden_agents(golden_dir):
    return golden_fixture.agents_for(MockScript.load(golden_dir / "script.jsonl"))


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.RESULTS[number])
