import numpy as np
import pytest

from fedsandbox.data import ColumnSpec, load_dataset, table_from_records


@pytest.fixture(scope="session")
def heart():
    table, schema = load_dataset("heart")
    return table, schema


def synthetic_table(n0: int, n1: int, seed: int = 0, lo: float = 0.0, hi: float = 10.0):
    """Two-class table with one numeric column ``x`` and a binary target ``y``; rows are distinct."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, n0 + n1)
    y = np.r_[np.zeros(n0), np.ones(n1)]
    cols = [ColumnSpec("x", "numeric", (lo, hi)), ColumnSpec("y", "categorical", categories=("0", "1"))]
    return table_from_records(cols, np.c_[x, y], "y")


# ---------------------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    m = item.get_closest_marker("criterion")
    if m is not None and (rep.when == "call" or rep.failed):
        number, title = m.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _CRITERIA[number] = ("PASS" if rep.passed else "FAIL", title, detail)
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, title, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} {verdict}: {title}" + (f" [{detail}]" if detail else ""))
