import numpy as np
import pytest

import bvmlab as bl


@pytest.fixture
def mean_model():
    return bl.GaussianMeanModel(p=1, n=4, sigma=1.0)


@pytest.fixture
def mean_process():
    return bl.LocationProcess(theta=np.array([2.0]), noise=bl.GaussianNoise(1.0),
                              matches_model=True)


@pytest.fixture
def mean_data(mean_model):
    # y = (1, 2, 3, 2): sample mean exactly 2, so xi = 0 at theta_star = 2.
    return mean_model.dataset_from_observations(np.array([1.0, 2.0, 3.0, 2.0]))


@pytest.fixture
def logistic_pair():
    model = bl.LogisticModel(p=2, n=500, pool_size=16, design_seed=3)
    process = bl.BinaryProcess(theta=np.array([0.8, -0.5]), matches_model=True)
    return model, process


def small_plan(**kw):
    defaults = dict(n_directions=64, n_radii=8, polish_steps=4, seed=0)
    defaults.update(kw)
    return bl.ShellPlan(**defaults)
