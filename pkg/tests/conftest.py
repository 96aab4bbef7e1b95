import numpy as np
import pytest

from sparseid import kernels

KERNEL_NAMES = ("support_mask", "score_codebook", "pack_ternary", "unpack_ternary")


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    module = kernels.backends()[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(module, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_codes(rng, M, L, S):
    """``M`` random ternary codes of length ``L`` with exactly ``S`` nonzeros each."""
    codes = np.zeros((M, L), dtype=np.int8)
    for m in range(M):
        pos = rng.choice(L, size=S, replace=False)
        codes[m, pos] = rng.choice(np.array([-1, 1], dtype=np.int8), size=S)
    return codes


# -- acceptance reporting ---------------------------------------------------
# Tests marked ``@pytest.mark.criterion("name")`` get one PASS/FAIL line each
# in the terminal summary, regardless of output capturing.

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _criteria[item.nodeid] = {"name": mark.args[0], "ok": None, "why": "", "secs": None}


def pytest_runtest_logreport(report):
    entry = _criteria.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call":
        entry["secs"] = report.duration
    if report.failed:
        entry["ok"] = False
        crash = getattr(report.longrepr, "reprcrash", None)
        entry["why"] = crash.message if crash else str(report.longrepr)
    elif report.when == "call" and entry["ok"] is None:
        entry["ok"] = report.passed


def pytest_terminal_summary(terminalreporter):
    ran = [e for e in _criteria.values() if e["ok"] is not None]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for e in ran:
        line = f"{'PASS' if e['ok'] else 'FAIL'}  {e['name']}"
        if e["secs"] is not None:
            line += f" ({e['secs']:.1f}s)"
        if not e["ok"] and e["why"]:
            line += f"  -- {e['why'].splitlines()[0][:160]}"
        terminalreporter.write_line(line)
