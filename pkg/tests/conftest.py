import random

import pytest

from copse import gen
from copse.forest import compute_props
from copse.staging import compile_forest

SUITE_SEED = 20260810


@pytest.fixture(scope="session")
def model_suite():
    """200 seeded random forests (trees <= 5, d <= 8, b <= 64), p cycling 4/8/16."""
    rng = random.Random(SUITE_SEED)
    suite = []
    for trial in range(200):
        p = (4, 8, 16)[trial % 3]
        forest = gen.random_forest(rng, p=p)
        props = compute_props(forest)
        model = compile_forest(forest, p=p)
        suite.append((forest, props, model, p))
    return suite


@pytest.fixture(scope="session")
def micro_suite():
    """The eight named micro shapes, compiled."""
    out = []
    for name, p, forest in gen.micro_models():
        props = compute_props(forest)
        out.append((name, p, forest, props, compile_forest(forest, p=p)))
    return out
