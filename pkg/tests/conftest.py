import numpy as np
import pytest
from hypothesis import settings

from picproj.mesh import bi_periodic_unit_square, build_rectangle_mesh

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square4():
    return build_rectangle_mesh(4, 4)


@pytest.fixture
def periodic8():
    return bi_periodic_unit_square(8)
