import math

import numpy as np
import pytest

from ncres.nc_algebra import ThetaMatrix

IRR = 1 / math.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[0.0, IRR], ids=["theta0", "irrational"])
def theta2(request):
    return ThetaMatrix.two(request.param)
