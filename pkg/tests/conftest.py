import numpy as np
import pytest

from gatspoof.encoder import EncoderConfig, LayerSpec

_criteria = {}


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome, duration = _criteria.get(crit, ("passed", 0.0))
        if report.outcome != "passed":
            outcome = report.outcome
        _criteria[crit] = (outcome, duration + report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), (outcome, duration) in sorted(_criteria.items()):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}  ({duration:.1f} s)")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_LAYERS = (
    LayerSpec("conv", (3, 3), 3, (1, 2), (1, 1)),
    LayerSpec("maxpool", (3, 3), 0, (2, 2), (1, 1)),
    LayerSpec("res", (3, 3), 3, (1, 1), (1, 1)),
    LayerSpec("res", (3, 3), 4, (2, 2), (1, 1)),
)


@pytest.fixture
def tiny_encoder_cfg():
    """Small layer table (same structure as the default) for fast tests."""
    return EncoderConfig(layers=TINY_LAYERS, final_grid=(3, 5), blocks_per_stage=1)
