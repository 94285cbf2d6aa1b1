import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from milrp import featmap
from milrp.featmap import FeatureTensor


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def grid():
    return featmap.default_grid()


def make_separable_tensors(rng, n_per_class=40, scale=1.0, jitter=0.1):
    """Class-dependent constant planes at the placed cells, plus noise.

    Class "left" carries +scale, class "right" -scale; separable by
    construction.
    """
    grid = featmap.default_grid()
    tensors = []
    for label, sign in (("left", 1.0), ("right", -1.0)):
        for _ in range(n_per_class):
            planes = np.zeros((6, 7, 12))
            for _, (r, c) in grid.placements.items():
                for b in range(6):
                    hi = sign * scale + rng.normal(0.0, jitter)
                    lo = hi - abs(rng.normal(0.0, jitter))
                    planes[r, c, 2 * b] = hi
                    planes[r, c, 2 * b + 1] = lo
            tensors.append(FeatureTensor(planes=planes, label=label))
    return tensors


def random_tensor(rng, label="left"):
    return FeatureTensor(planes=rng.normal(size=(6, 7, 12)), label=label)
