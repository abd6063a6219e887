import os
from pathlib import Path

import pytest
from hypothesis import settings

# solved g_delta curves are reused across test sessions
os.environ.setdefault("CATMAP_CACHE_DIR", str(Path.home() / ".cache" / "catmap"))

settings.register_profile("catmap", deadline=None, max_examples=60)
settings.load_profile("catmap")


@pytest.fixture(scope="session")
def small_problem():
    from catmap.datagen import AuxiliarySpec, DesignSpec, gen_logistic_data, gen_synthetic
    import numpy as np

    beta = np.linspace(-0.8, 0.8, 6)
    obs = gen_logistic_data(DesignSpec(60, 6), beta, (11, 1))
    syn = gen_synthetic(AuxiliarySpec(120), DesignSpec(60, 6), seed=(11, 2))
    return obs, syn


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULT_LINES

    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in RESULT_LINES:
            terminalreporter.write_line(line)
