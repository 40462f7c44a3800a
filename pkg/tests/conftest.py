"""Session-scoped pipeline fixtures shared across test modules.

The trained zoo and the reference generation run are expensive enough to
build once; everything downstream treats them as immutable.
"""

import pytest

from stitchkit.data import make_synthetic_dataset, superclass_label_map
from stitchkit.generate import GenerationConfig, generate
from stitchkit.network import build_pool
from stitchkit.zoo import build_zoo

DATA_SEED = 7
ZOO_SEED = 7
GEN_SEED = 7


@pytest.fixture(scope="session")
def dataset8():
    return make_synthetic_dataset(8, 200, 16, seed=DATA_SEED)


@pytest.fixture(scope="session")
def zoo(dataset8):
    return build_zoo(dataset8.train, seed=ZOO_SEED)


@pytest.fixture(scope="session")
def pool(zoo):
    return build_pool(zoo)


@pytest.fixture(scope="session")
def subtask_map():
    return superclass_label_map(8, 2)


@pytest.fixture(scope="session")
def genresult(pool, dataset8):
    cfg = GenerationConfig(
        span_k=2, threshold=0.5, max_fragments=16, samples_m=32, seed=GEN_SEED
    )
    return generate(pool, dataset8.train, cfg)
