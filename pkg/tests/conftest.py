"""Shared fixtures: the two-point symmetric dataset and its hand-analyzed
width-2 initialization (second neuron inactive; the flow grows b1 = v1)."""

import numpy as np
import pytest

from reluflow.data import Dataset
from reluflow.net import Params


@pytest.fixture
def two_point_dataset():
    return Dataset(np.array([-4.0, 4.0]), np.array([1, 1]))


@pytest.fixture
def two_point_init():
    # w = [0, 0], b = [1, 0], v = [1, 0]: N(x) = relu(1) = 1 everywhere
    return Params(np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([1.0, 0.0]))
