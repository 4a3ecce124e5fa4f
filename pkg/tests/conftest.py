import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "metric correctness (examples, invariants on 1000 pairs, < 10 s)",
    2: "KL epsilon behaviour: P=[1,0], Q=[.5,.5] gives 17.33",
    3: "random-prediction baseline: AUC 0.5 and CC 0.0 over 1000 trials",
    4: "perturbation saliency: stride-5 vs dense CC >= 0.95, locality, degenerate, < 60 s",
    5: "gaze network shape chain 84-20-9-7-9-20-84 and softmax output",
    6: "baselines: flow recovers integer shifts, Itti-Koch argmax near square",
    7: "statistics: r=0.664 n=10 p~0.036, brute-force agreement on 1000 series",
    8: "end-to-end determinism and monotone checkpoint fixture",
    9: "consistency protocol: 5 maps give 10 CCs, identical maps mean 1.0",
}

_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, label in CRITERIA.items():
        results = _outcomes.get(n)
        if results is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {label}  ({len(results or ())} checks)")
