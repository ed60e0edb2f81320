import numpy as np
import pytest

from iwarp.synthetic import generate_family, grid_box
from iwarp.warp import learn_warp_space

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mug_family():
    return generate_family("mug", 5, seed=3)


@pytest.fixture(scope="session")
def small_mug_space(mug_family):
    """Small mug warp space shared by the inference and interaction tests."""
    meshes, _ = mug_family
    return learn_warp_space(
        meshes, latent_dim=3, selection="approximate", seed=0, n_object_samples=400, n_canonical_samples=400
    )


def box_mesh(lo, hi, divisions=1):
    return grid_box(lo, hi, divisions)


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""

    def record(criterion, ok, detail):
        ACCEPTANCE_LINES.append((criterion, f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
            terminalreporter.write_line(line)
