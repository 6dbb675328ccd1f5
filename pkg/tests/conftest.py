import numpy as np
import pytest

from spatialpk.io import Dataset
from spatialpk.kinetics import AifParams, OneComp, model_ctc
from spatialpk.phantom import PhantomConfig, generate_phantom

STANDARD_AIF = AifParams()


@pytest.fixture
def small_phantom():
    return generate_phantom(PhantomConfig(nx=6, ny=6, seed=3))


def single_voxel_dataset(params=OneComp(0.0, np.log(0.5)), sigma=0.02, n_times=40, seed=0,
                         aif=STANDARD_AIF):
    times = 0.15 * np.arange(1, n_times + 1)
    rng = np.random.default_rng(seed)
    y = model_ctc(params, aif, times) + rng.normal(0.0, sigma, n_times)
    return Dataset(nx=1, ny=1, mask=np.ones(1, bool), times=times, aif=aif, y=y[None, :])
