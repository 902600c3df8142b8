import numpy as np
import pytest

from turbqkd.timeseries import AlignedSeries, parse_timestamp, to_minutes

T0 = "2023-07-01T00:00:00Z"


def make_series(log_cn2, start=T0, gap=None, **extra):
    """Minute series with constant weather and the given log10 Cn2 column."""
    log_cn2 = np.asarray(log_cn2, dtype=float)
    n = len(log_cn2)
    cols = {
        "temperature": np.full(n, 20.0),
        "solar_radiation": np.full(n, 100.0),
        "relative_humidity": np.full(n, 50.0),
        "log10_cn2": log_cn2,
    }
    cols.update({k: np.asarray(v, dtype=float) for k, v in extra.items()})
    if gap is None:
        gap = np.isnan(log_cn2)
    return AlignedSeries(to_minutes(parse_timestamp(start)), cols, np.asarray(gap, bool))


@pytest.fixture
def series_factory():
    return make_series


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


@pytest.fixture
def csv_writer():
    return write_csv


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[str, str] = {}


def pytest_itemcollected(item):
    name = getattr(item, "originalname", item.name)
    if name.startswith("test_criterion_"):
        number = name.split("_")[2]
        doc = (item.function.__doc__ or "").strip().splitlines()
        _CRITERIA[item.nodeid] = f"criterion {number}: {doc[0] if doc else name}"


def pytest_terminal_summary(terminalreporter):
    outcome = {}
    for key in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", None)
            if nodeid in _CRITERIA and (rep.when == "call" or rep.outcome != "passed"):
                outcome[nodeid] = "PASS" if rep.outcome == "passed" else rep.outcome.upper().replace("FAILED", "FAIL")
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, label in sorted(_CRITERIA.items(), key=lambda kv: int(kv[1].split()[1].rstrip(":"))):
        if nodeid in outcome:
            terminalreporter.write_line(f"{outcome[nodeid]:<5} {label}")
