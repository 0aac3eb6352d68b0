import sys
from pathlib import Path

import pytest

from gaitbci.core import CueSchedule, SynthConfig, generate_synthetic
from gaitbci.training import TrainConfig, train

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = marker.args
    prev = _RESULTS.get(n, (title, True, ""))
    detail = "; ".join(d for d in (prev[2], getattr(item, "_detail", "")) if d)
    _RESULTS[n] = (title, prev[1] and rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_training():
    """16-channel, 200 s training recording with a strong rhythm change."""
    cfg = SynthConfig(n_channels=16, erd_depth=0.6, seed=21)
    cues = CueSchedule.alternating(10, 20.0)
    return generate_synthetic(cfg, cues), cues


@pytest.fixture(scope="session")
def small_model(small_training):
    rec, cues = small_training
    return train(rec, cues, TrainConfig(search_range=(2.0, 30.0)))
