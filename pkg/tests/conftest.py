import pytest

from fieldcycle.fieldmap import reference_map
from fieldcycle.motion import MotionLimits


@pytest.fixture(scope="session")
def ref_map():
    return reference_map()


@pytest.fixture(scope="session")
def limits():
    return MotionLimits()
