import json
from pathlib import Path

import pytest

from bufplan.arch import Architecture, Bus, Processor, parse_architecture

DATA = Path(__file__).resolve().parents[1] / "src" / "bufplan" / "data"


def doc_text(doc) -> str:
    return json.dumps(doc)


def two_proc_doc(budget=4):
    return {
        "budget": budget,
        "buses": [{"id": "a", "service_rate": 2.0, "processors": [
            {"id": "1", "arrival_rate": 1.0, "destinations": [{"to": "2", "p": 1.0}]},
            {"id": "2", "arrival_rate": 0.5, "destinations": [{"to": "1", "p": 1.0}]},
        ]}],
        "bridges": [],
    }


def chain_doc(budget=40):
    """Buses a-b-c in a chain; processor 1 on a sends half its traffic to 3 on c."""
    return {
        "budget": budget,
        "buses": [
            {"id": "a", "service_rate": 2.0, "processors": [
                {"id": "1", "arrival_rate": 2.0, "destinations": [{"to": "3", "p": 0.5}, {"to": "2", "p": 0.5}]}]},
            {"id": "b", "service_rate": 2.0, "processors": [
                {"id": "2", "arrival_rate": 0.4, "destinations": [{"to": "1", "p": 1.0}]}]},
            {"id": "c", "service_rate": 2.0, "processors": [
                {"id": "3", "arrival_rate": 0.3, "destinations": [{"to": "2", "p": 1.0}]}]},
        ],
        "bridges": [{"id": "ab", "between": ["a", "b"]}, {"id": "bc", "between": ["b", "c"]}],
    }


def single_queue_arch(lam, mu, budget=10, seed=1) -> Architecture:
    """One processor sending to itself on a private bus: an M/M/1/K queue."""
    return Architecture(
        buses=(Bus("a", mu, ("1",)),),
        processors=(Processor("1", lam, (("1", 1.0),), "a"),),
        total_budget=budget,
        seed=seed,
    )


@pytest.fixture
def figure1():
    return parse_architecture((DATA / "figure1.json").read_text())


@pytest.fixture
def netproc16():
    return parse_architecture((DATA / "netproc16.json").read_text())


@pytest.fixture
def chain():
    return parse_architecture(doc_text(chain_doc()))


# acceptance verdicts, one line per criterion, echoed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
