"""
Shared fixtures: kernels of the three regimes, observables on their bases,
experiment files in temporary directories.
"""

import math
import textwrap
from pathlib import Path

import pytest

from app.core.logging import setup_logging
from app.models.kernels import BarKernel
from app.services.hermite_service import hermite_service

CRITICAL_A = 1.0 / math.sqrt(2.0)


@pytest.fixture(autouse=True, scope="session")
def quiet_logging():
    setup_logging(file_logging=False, level="WARNING")


@pytest.fixture
def sub_kernel() -> BarKernel:
    return BarKernel(a=0.5, sigma=1.0)


@pytest.fixture
def crit_kernel() -> BarKernel:
    return BarKernel(a=CRITICAL_A, sigma=1.0)


@pytest.fixture
def super_kernel() -> BarKernel:
    return BarKernel(a=0.9, sigma=1.0)


@pytest.fixture
def identity():
    """f(x) = x on the basis of a given kernel."""
    return lambda kernel: hermite_service.preset("identity", kernel)


@pytest.fixture
def write_config(tmp_path: Path):
    """Write an experiment file and return its path; outputs go to tmp_path/out."""

    def _write(body: str, name: str = "experiment.toml") -> Path:
        path = tmp_path / name
        text = textwrap.dedent(body).strip() + "\n"
        if "[output]" not in text:
            text += f'\n[output]\ndir = "{(tmp_path / "out").as_posix()}"\n'
        path.write_text(text, encoding="utf-8")
        return path

    return _write
