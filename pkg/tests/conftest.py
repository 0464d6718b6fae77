import numpy as np
import pytest

from drcn.text import SentencePair, Vocab


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_pairs():
    return [
        SentencePair(["a", "man", "sleeps"], ["a", "person", "rests"], 0),
        SentencePair(["two", "dogs", "run"], ["cats", "sit"], 2),
        SentencePair(["a", "woman", "sings", "loudly"], ["someone", "sings"], 1),
        SentencePair(["kids", "play", "outside"], ["kids", "are", "inside"], 2),
    ]


@pytest.fixture
def toy_vocab(toy_pairs):
    return Vocab.build(toy_pairs), Vocab.build_chars(toy_pairs)


# ---------------------------------------------------------------- acceptance
# Tests marked ``criterion(n, title)`` get one PASS/FAIL/SKIP line each in the
# terminal summary.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        if crit not in _CRITERIA or status != "PASS":
            _CRITERIA[crit] = status


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), status in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}")
