"""Shared fixtures: a small mesh, a seeded driver and a boundary-respecting coefficient"""

import pytest

from roughpme.domain.geometry import Domain
from roughpme.signals.roughpath import sample_brownian
from roughpme.systems.coefficients import build_coefficient


@pytest.fixture
def dom():
    return Domain(0.0, 1.0, 64)


@pytest.fixture
def brownian():
    return sample_brownian(seed=7, n=2, steps=16, horizon=0.5)


@pytest.fixture
def coefficient(dom):
    return build_coefficient("basis-product", dom, sigma="saturating", basis=["sin2_1", "sin2_2"],
                             amplitude=0.25)


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML document and return its path"""
    def write(text: str, name: str = "experiment.toml"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write
