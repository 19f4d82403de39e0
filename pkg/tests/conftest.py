import numpy as np
import pytest

from crisp.data import generate_synthetic
from crisp.spatial import build_prior
from crisp.universe import load_asset_book

DEFENSIVE_IDX = [0, 1, 2, 3, 5, 6, 9, 10]


@pytest.fixture(scope="session")
def book():
    return load_asset_book()


@pytest.fixture(scope="session")
def small_universe(book):
    """13 assets, 160 days, both regimes visited."""
    return generate_synthetic(book.tickers(), 160, seed=42,
                              defensive_indices=DEFENSIVE_IDX)


@pytest.fixture(scope="session")
def prior(book, small_universe):
    return build_prior(book.sector_map, book.region_map, small_universe.tickers)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
