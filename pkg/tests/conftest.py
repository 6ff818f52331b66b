import os
from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def spectrum_cache_dir(tmp_path_factory) -> Path:
    """Directory for cached diagonalizations.

    Honors DICKEMF_TEST_CACHE so repeated runs (and the acceptance suite)
    can reuse spectra instead of recomputing the heavy ladders.
    """
    env = os.environ.get("DICKEMF_TEST_CACHE")
    if env:
        path = Path(env)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("spectra")
