import numpy as np
import pytest
import torch

from blindlf.lightfield import LightField

# keep CPU math reproducible across test processes
torch.manual_seed(0)
torch.set_num_threads(2)


def random_field(seed, u=3, v=3, h=16, w=16):
    rng = np.random.default_rng(seed)
    return LightField(rng.random((u, v, h, w, 3)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_lf():
    return random_field(0)
