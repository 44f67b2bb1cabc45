import numpy as np
import pytest

from lstnet.autograd import default_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Run the test body with 64-bit tensors."""
    with default_dtype(np.float64):
        yield


def real_data_dir():
    """``$LSTNET_DATA_DIR`` with ``mnist/`` (IDX files) and ``usps/usps_{train,test}.csv``, or None."""
    import os
    from pathlib import Path

    root = os.environ.get("LSTNET_DATA_DIR")
    if not root:
        return None
    root = Path(root)
    return root if (root / "mnist").is_dir() and (root / "usps").is_dir() else None


@pytest.fixture
def data_dir():
    root = real_data_dir()
    if root is None:
        pytest.skip("real MNIST/USPS files not available (set LSTNET_DATA_DIR to a directory with mnist/ and usps/)")
    return root


# acceptance summary ---------------------------------------------------------
# Tests marked ``criterion(n)`` are collected into one PASS/FAIL line per
# criterion at the end of the run.  A criterion fails if any of its tests fail;
# skipped parts are listed next to the verdict.

_VERDICTS: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.skipped:
        detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
    elif rep.failed:
        detail = str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr).splitlines()[0]
    _VERDICTS.setdefault(n, [title, []])[1].append((item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        title, parts = _VERDICTS[n]
        outcomes = {p[1] for p in parts}
        verdict = "FAIL" if "failed" in outcomes else "PASS" if "passed" in outcomes else "SKIP"
        tr.write_line(f"criterion {n}: {verdict}  {title}")
        for name, outcome, detail in parts:
            tr.write_line(f"    {outcome:<7} {name}: {detail}")
