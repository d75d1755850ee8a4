"""Shared fixtures: seeded generators and a small natural-image corpus."""

import numpy as np
import pytest

from csforensics.harness import extract_patches
from csforensics.sample_corpus import export_sample_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sample_corpus(tmp_path_factory):
    """Directory of never-compressed photographs exported from scikit-image."""
    out = tmp_path_factory.mktemp("corpus")
    export_sample_corpus(out)
    return out


@pytest.fixture(scope="session")
def natural_patches(sample_corpus):
    """Textured 128x128 patches on the 8-bit grid, one list shared by the session."""
    files = sorted(sample_corpus.iterdir())
    patches, _ = extract_patches(files, 128, min_std=0.02)
    # spread the picks over all source photographs
    return patches[::7]


@pytest.fixture(scope="session")
def camera_patch(natural_patches):
    return natural_patches[0]


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
