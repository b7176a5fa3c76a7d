import pytest

from sigfree.core import CrossingTimeDist, DemandProfile, HeadwayMatrix, IntersectionSpec
from sigfree.engine import reference_spec


@pytest.fixture
def theta():
    return HeadwayMatrix.of([[0.5, 1.0], [1.0, 0.5]])


@pytest.fixture
def spec():
    return reference_spec()


@pytest.fixture
def det_spec(theta):
    return IntersectionSpec(theta, CrossingTimeDist.deterministic(0.5), DemandProfile((0.2, 0.2)))
