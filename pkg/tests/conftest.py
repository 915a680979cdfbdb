import numpy as np
import pytest

from mixbench.mixture import RECIPES, build_manifest, render_entry
from mixbench.sources import synthetic_pool


@pytest.fixture(scope="session")
def pool():
    return synthetic_pool(12, seed=7, duration_range=(1.5, 2.5))


@pytest.fixture(scope="session")
def reverberant_bundle(pool):
    recipe = RECIPES["sms_wsj"].with_options(array_count=3)
    manifest = build_manifest(recipe, 1, seed=11, pool=pool)
    return render_entry(manifest.entries[0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
