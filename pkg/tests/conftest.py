import os
from pathlib import Path

import numpy as np
import pytest

from qlinear.data import TimeSeriesDataset

ROOT = Path(__file__).resolve().parents[1]
DATA_DIR = Path(os.environ.get("QLINEAR_DATA_DIR", ROOT / "data"))

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_walk(rng, n, channels=1):
    return TimeSeriesDataset.from_array(np.cumsum(rng.normal(size=(n, channels)), axis=0))


def write_csv(path, values, names=None, with_dates=True):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = names or [f"v{j}" for j in range(values.shape[1])]
    lines = [",".join((["date"] if with_dates else []) + names)]
    for i, row in enumerate(values):
        cells = [repr(float(v)) for v in row]
        lines.append(",".join(([f"2016-07-01 {i:05d}"] if with_dates else []) + cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)
