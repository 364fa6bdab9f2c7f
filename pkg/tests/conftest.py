"""Shared fixtures: the two project-wide reference configurations."""

import pytest

from pointbirth.field import TestFunction
from pointbirth.loglaplace import reference_params


@pytest.fixture(scope="session")
def ref2():
    return reference_params(2)


@pytest.fixture(scope="session")
def ref3():
    return reference_params(3)


@pytest.fixture(scope="session")
def phi2(ref2):
    return TestFunction.gaussian(2, ref2.rho)


@pytest.fixture(scope="session")
def phi3(ref3):
    return TestFunction.gaussian(3, ref3.rho)
