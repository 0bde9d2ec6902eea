import os
from pathlib import Path

import numpy as np
import pytest

from adafsnet import tensor

REPO = Path(__file__).resolve().parents[1]
UCR_ROOT = Path(os.environ.get("ADAFSNET_DATA_ROOT", REPO / "data" / "UCR"))


@pytest.fixture(autouse=True)
def _double_precision():
    prev = tensor.get_default_dtype()
    tensor.set_default_dtype(np.float64)
    yield
    tensor.set_default_dtype(prev)


def have_dataset(name: str) -> bool:
    return (UCR_ROOT / name).is_dir() or any(UCR_ROOT.glob(f"{name}_TRAIN.*"))


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    lines = getattr(test_acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
